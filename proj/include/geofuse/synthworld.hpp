#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "json.hpp"

#include "geofuse/dataset.hpp"
#include "geofuse/geodesy.hpp"

namespace geofuse::synth {

using Json = nlohmann::ordered_json;

// Isotropic planar Gaussian over (lat, lon) degrees, longitude wrapped.
struct HabitatComponent {
  double mean_lat = 0.0;
  double mean_lon = 0.0;
  double sigma_deg = 10.0;
  double weight = 1.0;

  friend bool operator==(const HabitatComponent&, const HabitatComponent&) = default;
};

// Support of the uniform geography mixed into the eval split.
struct Region {
  double lat_min = -60.0;
  double lat_max = 60.0;
  double lon_min = -180.0;
  double lon_max = 180.0;

  double area_deg2() const { return (lat_max - lat_min) * (lon_max - lon_min); }
  bool contains(const GeoPoint& p) const;

  friend bool operator==(const Region&, const Region&) = default;
};

enum class Split { train, eval };

const char* to_string(Split s);
Split split_from_string(const std::string& s);

// Fully materialized generative world.
struct WorldSpec {
  std::size_t num_labels = 0;
  std::size_t feature_dim = 0;
  std::vector<std::vector<HabitatComponent>> habitats;  // per label
  std::vector<std::vector<double>> prototypes;          // per label, feature_dim each
  double appearance_sigma = 1.0;
  double zipf_exponent = 1.5;
  std::vector<std::pair<std::size_t, std::size_t>> confusion_pairs;
  double mismatch_epsilon = 0.0;
  Region region;
  std::uint64_t seed = 0;

  // Throws ConfigError on any violated invariant.
  void validate() const;

  // pi_L proportional to (L + 1)^-s.
  std::vector<double> label_frequencies() const;

  friend bool operator==(const WorldSpec&, const WorldSpec&) = default;
};

// Knobs for materializing a random world.
struct WorldRecipe {
  std::size_t num_labels = 10;
  std::size_t feature_dim = 4;
  std::size_t components_per_label = 1;
  double habitat_sigma_deg = 10.0;
  double prototype_scale = 2.0;
  double appearance_sigma = 1.0;
  double zipf_exponent = 1.5;
  std::vector<std::pair<std::size_t, std::size_t>> confusion_pairs;
  // Minimum centre-to-centre distance (degrees, planar with wrap) between
  // the habitats of two paired labels. Negative means 6 sigma.
  double min_pair_separation_deg = -1.0;
  // Every habitat component is the same for all labels: geography carries
  // no label information.
  bool shared_habitat = false;
  double mismatch_epsilon = 0.0;
  Region region;
  std::uint64_t seed = 0;
};

WorldSpec build_world(const WorldRecipe& recipe);

// Pairs (i, i + C/2) for i < C/2: each low label shares its prototype
// with a high label but lives elsewhere.
std::vector<std::pair<std::size_t, std::size_t>> half_pairs(std::size_t num_labels);

// The default geo-separable world used by the experiments: C = 10, D = 4,
// five confusion pairs, one habitat per label.
WorldRecipe standard_recipe(std::uint64_t seed = 7);

Dataset generate(const WorldSpec& spec, std::size_t n, Split split);

struct OracleOutputs {
  std::vector<double> p_label_given_image;  // P(L|I)
  std::vector<double> p_geo_given_label;    // P(G|L), density per deg^2
  std::vector<double> log_R;                // log P(G|L) / P(G|not L, I)
  std::vector<double> posterior;            // P(L|I,G) by joint normalization
  std::vector<double> posterior_via_ratio;  // sigma(logit P(L|I) + log R), in log space
};

// Exact Bayes quantities at one (features, geo). The eval split uses the
// eval-time geography (habitat mixed with the uniform region).
OracleOutputs oracle(const WorldSpec& spec, std::span<const double> features, const GeoPoint& geo,
                     Split split = Split::train);

// log P(G|L) for each label under the split's geography.
std::vector<double> log_geo_density(const WorldSpec& spec, const GeoPoint& geo, Split split);

// Fraction of observations whose exact posterior argmax is the true label.
double bayes_accuracy(const WorldSpec& spec, const Dataset& data);

Json world_to_json(const WorldSpec& spec);
// Accepts a fully materialized world, or recipe fields under "generator"
// from which habitats and prototypes are built.
WorldSpec world_from_json(const Json& doc);

}  // namespace geofuse::synth
