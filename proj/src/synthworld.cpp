#include "geofuse/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "geofuse/error.hpp"
#include "geofuse/micronet/loss.hpp"
#include "geofuse/spatial_priors.hpp"

namespace geofuse::synth {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(std::span<const double> v) {
  double m = kNegInf;
  for (double x : v) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// log-sum-exp over all entries except `skip`.
double log_sum_exp_except(std::span<const double> v, std::size_t skip) {
  double m = kNegInf;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i != skip) m = std::max(m, v[i]);
  }
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i != skip) s += std::exp(v[i] - m);
  }
  return m + std::log(s);
}

double log_normal_1d(double x, double mean, double sigma) {
  const double z = (x - mean) / sigma;
  return -0.5 * z * z - std::log(sigma) - 0.5 * std::log(2.0 * std::numbers::pi);
}

// Longitude difference folded into [-180, 180).
double wrap_lon_delta(double d) {
  d = std::fmod(d + 180.0, 360.0);
  if (d < 0.0) d += 360.0;
  return d - 180.0;
}

double wrap_lon(double lon) { return wrap_lon_delta(lon); }

double log_habitat_density(std::span<const HabitatComponent> habitat, const GeoPoint& g) {
  std::vector<double> terms;
  terms.reserve(habitat.size() * 3);
  for (const auto& c : habitat) {
    if (c.weight <= 0.0) continue;
    const double lat_term = log_normal_1d(g.lat_deg(), c.mean_lat, c.sigma_deg);
    const double base = wrap_lon_delta(g.lon_deg() - c.mean_lon);
    // Three images of the wrapped longitude cover any sigma well under 120 degrees.
    for (int k = -1; k <= 1; ++k) {
      terms.push_back(std::log(c.weight) + lat_term +
                      log_normal_1d(base + 360.0 * k, 0.0, c.sigma_deg));
    }
  }
  return log_sum_exp(terms);
}

double planar_wrapped_distance(const HabitatComponent& a, const HabitatComponent& b) {
  const double dlat = a.mean_lat - b.mean_lat;
  const double dlon = wrap_lon_delta(a.mean_lon - b.mean_lon);
  return std::hypot(dlat, dlon);
}

HabitatComponent random_component(std::mt19937_64& rng, const Region& region, double sigma,
                                  double weight) {
  const double margin = std::min(2.0 * sigma, 0.25 * (region.lat_max - region.lat_min));
  std::uniform_real_distribution<double> lat(region.lat_min + margin, region.lat_max - margin);
  std::uniform_real_distribution<double> lon(region.lon_min, region.lon_max);
  HabitatComponent c;
  c.mean_lat = lat(rng);
  c.mean_lon = wrap_lon(lon(rng));
  c.sigma_deg = sigma;
  c.weight = weight;
  return c;
}

std::uint64_t split_tag(Split s) { return s == Split::train ? 0x7472u : 0x6576u; }

template <typename T>
T field(const Json& doc, const char* key, T fallback) {
  try {
    return doc.value(key, fallback);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("world field '{}': {}", key, e.what()));
  }
}

Region region_from_json(const Json& doc) {
  Region r;
  if (!doc.is_object()) return r;
  r.lat_min = field(doc, "lat_min", r.lat_min);
  r.lat_max = field(doc, "lat_max", r.lat_max);
  r.lon_min = field(doc, "lon_min", r.lon_min);
  r.lon_max = field(doc, "lon_max", r.lon_max);
  return r;
}

}  // namespace

const char* to_string(Split s) { return s == Split::train ? "train" : "eval"; }

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "eval") return Split::eval;
  throw DataError(fmt::format("unknown split '{}'", s));
}

bool Region::contains(const GeoPoint& p) const {
  return p.lat_deg() >= lat_min && p.lat_deg() <= lat_max && p.lon_deg() >= lon_min &&
         p.lon_deg() < lon_max;
}

void WorldSpec::validate() const {
  if (num_labels == 0) throw ConfigError("world needs at least one label");
  if (feature_dim == 0) throw ConfigError("world needs a positive feature dimension");
  if (habitats.size() != num_labels || prototypes.size() != num_labels) {
    throw ConfigError("world needs one habitat and one prototype per label");
  }
  for (std::size_t l = 0; l < num_labels; ++l) {
    if (prototypes[l].size() != feature_dim) {
      throw ConfigError(fmt::format("prototype {} has {} dims, expected {}", l,
                                    prototypes[l].size(), feature_dim));
    }
    if (habitats[l].empty()) throw ConfigError(fmt::format("label {} has no habitat", l));
    double wsum = 0.0;
    for (const auto& c : habitats[l]) {
      if (!(c.sigma_deg > 0.0) || !(c.weight >= 0.0) || !std::isfinite(c.mean_lat) ||
          !std::isfinite(c.mean_lon)) {
        throw ConfigError(fmt::format("label {} has an invalid habitat component", l));
      }
      wsum += c.weight;
    }
    if (std::abs(wsum - 1.0) > 1e-9) {
      throw ConfigError(fmt::format("habitat weights of label {} sum to {}, not 1", l, wsum));
    }
  }
  if (!(appearance_sigma >= 0.0)) throw ConfigError("appearance sigma must be >= 0");
  if (!(zipf_exponent >= 0.0)) throw ConfigError("zipf exponent must be >= 0");
  if (!(mismatch_epsilon >= 0.0 && mismatch_epsilon <= 1.0)) {
    throw ConfigError("mismatch_epsilon must lie in [0, 1]");
  }
  if (!(region.lat_min < region.lat_max) || region.lat_min < -90.0 || region.lat_max > 90.0 ||
      !(region.lon_min < region.lon_max) || region.lon_min < -180.0 || region.lon_max > 180.0) {
    throw ConfigError("invalid region");
  }
  for (const auto& [a, b] : confusion_pairs) {
    if (a >= num_labels || b >= num_labels || a == b) {
      throw ConfigError(fmt::format("invalid confusion pair ({}, {})", a, b));
    }
  }
}

std::vector<double> WorldSpec::label_frequencies() const {
  std::vector<double> pi(num_labels);
  double total = 0.0;
  for (std::size_t l = 0; l < num_labels; ++l) {
    pi[l] = std::pow(static_cast<double>(l + 1), -zipf_exponent);
    total += pi[l];
  }
  for (double& p : pi) p /= total;
  return pi;
}

std::vector<std::pair<std::size_t, std::size_t>> half_pairs(std::size_t num_labels) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < num_labels / 2; ++i) pairs.emplace_back(i, i + num_labels / 2);
  return pairs;
}

WorldRecipe standard_recipe(std::uint64_t seed) {
  WorldRecipe r;
  r.num_labels = 10;
  r.feature_dim = 4;
  r.zipf_exponent = 1.0;
  r.confusion_pairs = half_pairs(r.num_labels);
  r.seed = seed;
  return r;
}

WorldSpec build_world(const WorldRecipe& recipe) {
  if (recipe.components_per_label == 0) throw ConfigError("components_per_label must be >= 1");
  if (!(recipe.habitat_sigma_deg > 0.0)) throw ConfigError("habitat sigma must be positive");
  WorldSpec w;
  w.num_labels = recipe.num_labels;
  w.feature_dim = recipe.feature_dim;
  w.appearance_sigma = recipe.appearance_sigma;
  w.zipf_exponent = recipe.zipf_exponent;
  w.confusion_pairs = recipe.confusion_pairs;
  w.mismatch_epsilon = recipe.mismatch_epsilon;
  w.region = recipe.region;
  w.seed = recipe.seed;

  std::mt19937_64 rng(recipe.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  w.prototypes.assign(w.num_labels, std::vector<double>(w.feature_dim));
  for (auto& proto : w.prototypes) {
    for (double& v : proto) v = recipe.prototype_scale * normal(rng);
  }
  for (const auto& [a, b] : w.confusion_pairs) {
    if (a >= w.num_labels || b >= w.num_labels) throw ConfigError("confusion pair out of range");
    w.prototypes[b] = w.prototypes[a];
  }

  const std::size_t k = recipe.components_per_label;
  const double weight = 1.0 / static_cast<double>(k);
  const double sigma = recipe.habitat_sigma_deg;
  w.habitats.assign(w.num_labels, {});
  if (recipe.shared_habitat) {
    std::vector<HabitatComponent> shared;
    for (std::size_t c = 0; c < k; ++c) shared.push_back(random_component(rng, w.region, sigma, weight));
    for (auto& h : w.habitats) h = shared;
  } else {
    for (auto& h : w.habitats) {
      for (std::size_t c = 0; c < k; ++c) h.push_back(random_component(rng, w.region, sigma, weight));
    }
    const double sep =
        recipe.min_pair_separation_deg < 0.0 ? 6.0 * sigma : recipe.min_pair_separation_deg;
    for (const auto& [a, b] : w.confusion_pairs) {
      auto far_enough = [&] {
        for (const auto& ca : w.habitats[a]) {
          for (const auto& cb : w.habitats[b]) {
            if (planar_wrapped_distance(ca, cb) < sep) return false;
          }
        }
        return true;
      };
      int attempts = 0;
      while (!far_enough()) {
        if (++attempts > 10000) {
          throw ConfigError(fmt::format("cannot separate habitats of labels {} and {}", a, b));
        }
        for (auto& c : w.habitats[b]) c = random_component(rng, w.region, sigma, weight);
      }
    }
  }
  w.validate();
  return w;
}

Dataset generate(const WorldSpec& spec, std::size_t n, Split split) {
  spec.validate();
  if (n == 0) throw InvalidArgument("cannot generate an empty dataset");

  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(split_tag(split))};
  std::mt19937_64 rng(seq);
  const auto pi = spec.label_frequencies();
  std::discrete_distribution<std::size_t> label_dist(pi.begin(), pi.end());
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> region_lat(spec.region.lat_min, spec.region.lat_max);
  std::uniform_real_distribution<double> region_lon(spec.region.lon_min, spec.region.lon_max);

  Dataset data;
  data.num_labels = spec.num_labels;
  data.feature_dim = spec.feature_dim;
  data.split = to_string(split);
  data.observations.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Observation obs;
    obs.label = label_dist(rng);
    obs.features = spec.prototypes[obs.label];
    if (spec.appearance_sigma > 0.0) {
      for (double& v : obs.features) v += spec.appearance_sigma * normal(rng);
    }

    const bool uniform_geo = split == Split::eval && spec.mismatch_epsilon > 0.0 &&
                             unit(rng) < spec.mismatch_epsilon;
    if (uniform_geo) {
      obs.geo = GeoPoint::from_degrees(region_lat(rng), wrap_lon(region_lon(rng)));
    } else {
      const auto& habitat = spec.habitats[obs.label];
      std::vector<double> weights;
      for (const auto& c : habitat) weights.push_back(c.weight);
      std::discrete_distribution<std::size_t> comp_dist(weights.begin(), weights.end());
      const auto& c = habitat[comp_dist(rng)];
      double lat = 0.0;
      do {
        lat = c.mean_lat + c.sigma_deg * normal(rng);
      } while (lat < -90.0 || lat > 90.0);
      const double lon = wrap_lon(c.mean_lon + c.sigma_deg * normal(rng));
      obs.geo = GeoPoint::from_degrees(lat, lon);
    }
    data.observations.push_back(std::move(obs));
  }
  return data;
}

std::vector<double> log_geo_density(const WorldSpec& spec, const GeoPoint& geo, Split split) {
  std::vector<double> out(spec.num_labels);
  const double eps = split == Split::eval ? spec.mismatch_epsilon : 0.0;
  const double log_uniform = spec.region.contains(geo) ? -std::log(spec.region.area_deg2()) : kNegInf;
  for (std::size_t l = 0; l < spec.num_labels; ++l) {
    const double lh = log_habitat_density(spec.habitats[l], geo);
    if (eps <= 0.0) {
      out[l] = lh;
    } else if (eps >= 1.0) {
      out[l] = log_uniform;
    } else {
      const double terms[] = {std::log1p(-eps) + lh, std::log(eps) + log_uniform};
      out[l] = log_sum_exp(terms);
    }
  }
  return out;
}

OracleOutputs oracle(const WorldSpec& spec, std::span<const double> features, const GeoPoint& geo,
                     Split split) {
  if (features.size() != spec.feature_dim) {
    throw ShapeMismatch(fmt::format("oracle expects {} features, got {}", spec.feature_dim,
                                    features.size()));
  }
  const std::size_t c = spec.num_labels;
  const auto pi = spec.label_frequencies();

  // log pi_L + log N(features; prototype_L, sigma^2 I), shared constants dropped.
  std::vector<double> appearance(c);
  for (std::size_t l = 0; l < c; ++l) {
    double sq = 0.0;
    for (std::size_t d = 0; d < spec.feature_dim; ++d) {
      const double diff = features[d] - spec.prototypes[l][d];
      sq += diff * diff;
    }
    if (spec.appearance_sigma > 0.0) {
      appearance[l] = std::log(pi[l]) - sq / (2.0 * spec.appearance_sigma * spec.appearance_sigma);
    } else {
      appearance[l] = sq == 0.0 ? std::log(pi[l]) : kNegInf;
    }
  }
  const double norm = log_sum_exp(appearance);
  if (norm == kNegInf) throw NumericError("appearance likelihood is zero for every label");

  std::vector<double> log_p(c);
  for (std::size_t l = 0; l < c; ++l) log_p[l] = appearance[l] - norm;

  const auto log_g = log_geo_density(spec, geo, split);
  std::vector<double> joint(c);
  for (std::size_t l = 0; l < c; ++l) joint[l] = log_p[l] + log_g[l];
  const double joint_norm = log_sum_exp(joint);
  if (joint_norm == kNegInf) throw NumericError("joint density is zero for every label");

  OracleOutputs out;
  out.p_label_given_image.resize(c);
  out.p_geo_given_label.resize(c);
  out.log_R.resize(c);
  out.posterior.resize(c);
  out.posterior_via_ratio.resize(c);
  for (std::size_t l = 0; l < c; ++l) {
    out.p_label_given_image[l] = std::exp(log_p[l]);
    out.p_geo_given_label[l] = std::exp(log_g[l]);
    out.posterior[l] = std::exp(joint[l] - joint_norm);
    if (c == 1) {
      out.log_R[l] = 0.0;
      out.posterior_via_ratio[l] = 1.0;
      continue;
    }
    // P(G | not L, I) = sum_{L' != L} P(L'|I) P(G|L') / (1 - P(L|I)).
    const double log_rest_prob = log_sum_exp_except(log_p, l);
    const double log_rest_joint = log_sum_exp_except(joint, l);
    out.log_R[l] = log_g[l] - (log_rest_joint - log_rest_prob);
    const double logit_p = log_p[l] - log_rest_prob;
    out.posterior_via_ratio[l] = nn::logistic(logit_p + out.log_R[l]);
  }
  return out;
}

double bayes_accuracy(const WorldSpec& spec, const Dataset& data) {
  if (data.empty()) throw InvalidArgument("bayes_accuracy over an empty dataset");
  const Split split = split_from_string(data.split);
  std::size_t correct = 0;
  for (const auto& obs : data.observations) {
    const auto out = oracle(spec, obs.features, obs.geo, split);
    if (argmax(out.posterior) == obs.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

Json world_to_json(const WorldSpec& spec) {
  Json doc;
  doc["num_labels"] = spec.num_labels;
  doc["feature_dim"] = spec.feature_dim;
  doc["appearance_sigma"] = spec.appearance_sigma;
  doc["zipf_exponent"] = spec.zipf_exponent;
  doc["mismatch_epsilon"] = spec.mismatch_epsilon;
  doc["seed"] = spec.seed;
  doc["region"] = {{"lat_min", spec.region.lat_min},
                   {"lat_max", spec.region.lat_max},
                   {"lon_min", spec.region.lon_min},
                   {"lon_max", spec.region.lon_max}};
  Json pairs = Json::array();
  for (const auto& [a, b] : spec.confusion_pairs) pairs.push_back({a, b});
  doc["confusion_pairs"] = std::move(pairs);
  Json habitats = Json::array();
  for (const auto& h : spec.habitats) {
    Json comps = Json::array();
    for (const auto& c : h) {
      comps.push_back({{"lat", c.mean_lat}, {"lon", c.mean_lon}, {"sigma", c.sigma_deg},
                       {"weight", c.weight}});
    }
    habitats.push_back(std::move(comps));
  }
  doc["habitats"] = std::move(habitats);
  doc["prototypes"] = spec.prototypes;
  return doc;
}

WorldSpec world_from_json(const Json& doc) {
  if (!doc.is_object()) throw ConfigError("world document must be a JSON object");
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  try {
    if (doc.contains("confusion_pairs")) {
      for (const auto& p : doc.at("confusion_pairs")) {
        pairs.emplace_back(p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("confusion_pairs: {}", e.what()));
  }

  if (!doc.contains("habitats")) {
    const Json gen = doc.value("generator", Json::object());
    WorldRecipe r;
    r.num_labels = field(doc, "num_labels", r.num_labels);
    r.feature_dim = field(doc, "feature_dim", r.feature_dim);
    r.appearance_sigma = field(doc, "appearance_sigma", r.appearance_sigma);
    r.zipf_exponent = field(doc, "zipf_exponent", r.zipf_exponent);
    r.mismatch_epsilon = field(doc, "mismatch_epsilon", r.mismatch_epsilon);
    r.seed = field(doc, "seed", r.seed);
    r.region = region_from_json(doc.value("region", Json()));
    r.confusion_pairs = doc.contains("confusion_pairs") ? pairs : half_pairs(r.num_labels);
    r.components_per_label = field(gen, "components_per_label", r.components_per_label);
    r.habitat_sigma_deg = field(gen, "habitat_sigma_deg", r.habitat_sigma_deg);
    r.prototype_scale = field(gen, "prototype_scale", r.prototype_scale);
    r.min_pair_separation_deg = field(gen, "min_pair_separation_deg", r.min_pair_separation_deg);
    r.shared_habitat = field(gen, "shared_habitat", r.shared_habitat);
    return build_world(r);
  }

  WorldSpec w;
  try {
    w.num_labels = doc.at("num_labels").get<std::size_t>();
    w.feature_dim = doc.at("feature_dim").get<std::size_t>();
    w.appearance_sigma = doc.at("appearance_sigma").get<double>();
    w.zipf_exponent = doc.at("zipf_exponent").get<double>();
    w.mismatch_epsilon = doc.value("mismatch_epsilon", 0.0);
    w.seed = doc.value("seed", std::uint64_t{0});
    w.region = region_from_json(doc.value("region", Json()));
    w.confusion_pairs = pairs;
    for (const auto& h : doc.at("habitats")) {
      std::vector<HabitatComponent> comps;
      for (const auto& c : h) {
        comps.push_back({c.at("lat").get<double>(), c.at("lon").get<double>(),
                         c.at("sigma").get<double>(), c.value("weight", 1.0)});
      }
      w.habitats.push_back(std::move(comps));
    }
    w.prototypes = doc.at("prototypes").get<std::vector<std::vector<double>>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("world document: {}", e.what()));
  }
  w.validate();
  return w;
}

}  // namespace geofuse::synth
