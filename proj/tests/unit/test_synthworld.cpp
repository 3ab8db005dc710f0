#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"

#include "geofuse/error.hpp"
#include "geofuse/micronet/loss.hpp"
#include "geofuse/spatial_priors.hpp"
#include "geofuse/synthworld.hpp"

using namespace geofuse;
using namespace geofuse::synth;

namespace {

WorldSpec two_label_world(double sigma_a) {
  WorldSpec w;
  w.num_labels = 2;
  w.feature_dim = 2;
  w.appearance_sigma = sigma_a;
  w.zipf_exponent = 0.0;
  w.habitats = {{{20.0, -100.0, 5.0, 1.0}}, {{-20.0, 60.0, 5.0, 1.0}}};
  w.prototypes = {{1.0, 1.0}, {1.0, 1.0}};
  w.confusion_pairs = {{0, 1}};
  w.seed = 3;
  return w;
}

// Plain-space mixture density with five longitude images, written without
// the library's log-space helpers.
double habitat_pdf(const std::vector<HabitatComponent>& h, double lat, double lon) {
  double total = 0.0;
  for (const auto& c : h) {
    const double s2 = c.sigma_deg * c.sigma_deg;
    const double dlat = lat - c.mean_lat;
    double acc = 0.0;
    for (int k = -2; k <= 2; ++k) {
      const double dlon = lon - c.mean_lon + 360.0 * k;
      acc += std::exp(-(dlat * dlat + dlon * dlon) / (2.0 * s2));
    }
    total += c.weight * acc / (2.0 * std::numbers::pi * s2);
  }
  return total;
}

struct Reference {
  std::vector<double> p_image;
  std::vector<double> posterior;
};

Reference reference_posterior(const WorldSpec& w, const std::vector<double>& x, const GeoPoint& g) {
  const auto pi = w.label_frequencies();
  Reference r;
  double z = 0.0;
  for (std::size_t l = 0; l < w.num_labels; ++l) {
    double sq = 0.0;
    for (std::size_t d = 0; d < w.feature_dim; ++d) sq += std::pow(x[d] - w.prototypes[l][d], 2);
    r.p_image.push_back(pi[l] * std::exp(-sq / (2.0 * w.appearance_sigma * w.appearance_sigma)));
    z += r.p_image.back();
  }
  for (auto& p : r.p_image) p /= z;
  double zz = 0.0;
  for (std::size_t l = 0; l < w.num_labels; ++l) {
    r.posterior.push_back(r.p_image[l] * habitat_pdf(w.habitats[l], g.lat_deg(), g.lon_deg()));
    zz += r.posterior.back();
  }
  for (auto& p : r.posterior) p /= zz;
  return r;
}

double sum(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

}  // namespace

TEST_CASE("generate: trivial worlds") {
  SUBCASE("one label") {
    WorldSpec w;
    w.num_labels = 1;
    w.feature_dim = 3;
    w.habitats = {{{0.0, 0.0, 4.0, 1.0}}};
    w.prototypes = {{0.1, 0.2, 0.3}};
    const auto d = generate(w, 500, Split::train);
    for (const auto& o : d.observations) CHECK(o.label == 0);
  }
  SUBCASE("noiseless appearance") {
    auto w = build_world(standard_recipe(5));
    w.appearance_sigma = 0.0;
    const auto d = generate(w, 2000, Split::eval);
    for (const auto& o : d.observations) REQUIRE(o.features == w.prototypes[o.label]);
  }
  SUBCASE("errors") {
    auto w = two_label_world(1.0);
    CHECK_THROWS_AS(generate(w, 0, Split::train), InvalidArgument);
    w.mismatch_epsilon = 1.5;
    CHECK_THROWS_AS(generate(w, 10, Split::train), ConfigError);
    w = two_label_world(1.0);
    w.habitats[0][0].weight = 0.5;
    CHECK_THROWS_AS(w.validate(), ConfigError);
    w = two_label_world(1.0);
    w.prototypes[1].push_back(0.0);
    CHECK_THROWS_AS(w.validate(), ConfigError);
  }
}

TEST_CASE("label frequencies follow zipf") {
  WorldRecipe r = standard_recipe(9);
  r.zipf_exponent = 1.5;
  const auto w = build_world(r);
  const auto pi = w.label_frequencies();
  CHECK(sum(pi) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(pi[0] / pi[3] == doctest::Approx(std::pow(4.0, 1.5)).epsilon(1e-12));

  const auto d = generate(w, 100000, Split::train);
  const auto counts = d.label_counts();
  double tv = 0.0;
  for (std::size_t l = 0; l < pi.size(); ++l) tv += std::abs(counts[l] / 100000.0 - pi[l]);
  CHECK(0.5 * tv < 0.01);
}

TEST_CASE("generation is deterministic per seed and split") {
  const auto w = build_world(standard_recipe(11));
  CHECK(generate(w, 300, Split::train) == generate(w, 300, Split::train));
  CHECK(generate(w, 300, Split::eval) == generate(w, 300, Split::eval));
  CHECK_FALSE(generate(w, 300, Split::train).observations ==
              generate(w, 300, Split::eval).observations);
  CHECK(build_world(standard_recipe(11)) == w);
}

TEST_CASE("confusion pairs share prototypes but not habitats") {
  const auto w = build_world(standard_recipe(4));
  for (const auto& [a, b] : w.confusion_pairs) {
    CHECK(w.prototypes[a] == w.prototypes[b]);
    const double dlat = w.habitats[a][0].mean_lat - w.habitats[b][0].mean_lat;
    double dlon = std::abs(w.habitats[a][0].mean_lon - w.habitats[b][0].mean_lon);
    dlon = std::min(dlon, 360.0 - dlon);
    CHECK(std::hypot(dlat, dlon) >= 6.0 * w.habitats[a][0].sigma_deg);
  }
}

TEST_CASE("oracle: identical prototypes, deep inside one habitat") {
  const auto w = two_label_world(1.0);
  const std::vector<double> x = {1.0, 1.0};
  const auto out = oracle(w, x, GeoPoint::from_degrees(21.0, -99.0));
  CHECK(out.p_label_given_image[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(out.posterior[0] > 0.99);
  CHECK(out.log_R[0] > 0.0);
  CHECK(out.log_R[1] == doctest::Approx(-out.log_R[0]).epsilon(1e-12));
}

TEST_CASE("oracle: shared habitat makes geography uninformative") {
  WorldRecipe r = standard_recipe(2);
  r.shared_habitat = true;
  r.components_per_label = 3;
  const auto w = build_world(r);
  const auto d = generate(w, 200, Split::train);
  for (const auto& o : d.observations) {
    const auto out = oracle(w, o.features, o.geo);
    for (std::size_t l = 0; l < w.num_labels; ++l) {
      REQUIRE(std::abs(out.log_R[l]) < 1e-12);
      REQUIRE(std::abs(out.posterior[l] - out.p_label_given_image[l]) < 1e-12);
    }
  }
  const auto eval = generate(w, 1000, Split::eval);
  std::size_t image_hits = 0;
  for (const auto& o : eval.observations) {
    if (argmax(oracle(w, o.features, o.geo).p_label_given_image) == o.label) ++image_hits;
  }
  CHECK(bayes_accuracy(w, eval) == doctest::Approx(image_hits / 1000.0).epsilon(1e-15));
}

TEST_CASE("oracle matches an independent plain-space computation") {
  const auto w = build_world(standard_recipe(8));
  const auto d = generate(w, 400, Split::train);
  for (const auto& o : d.observations) {
    const auto out = oracle(w, o.features, o.geo);
    const auto ref = reference_posterior(w, o.features, o.geo);
    for (std::size_t l = 0; l < w.num_labels; ++l) {
      REQUIRE(std::abs(out.p_label_given_image[l] - ref.p_image[l]) < 1e-12);
      REQUIRE(std::abs(out.posterior[l] - ref.posterior[l]) < 1e-10);
      const double dens = habitat_pdf(w.habitats[l], o.geo.lat_deg(), o.geo.lon_deg());
      REQUIRE(out.p_geo_given_label[l] == doctest::Approx(dens).epsilon(1e-12));
    }
  }
}

TEST_CASE("dual-path posterior agreement and normalization") {
  for (double eps : {0.0, 0.3}) {
    WorldRecipe r = standard_recipe(13);
    r.mismatch_epsilon = eps;
    const auto w = build_world(r);
    for (Split split : {Split::train, Split::eval}) {
      const auto d = generate(w, 1500, split);
      for (const auto& o : d.observations) {
        const auto out = oracle(w, o.features, o.geo, split);
        REQUIRE(std::abs(sum(out.p_label_given_image) - 1.0) < 1e-12);
        REQUIRE(std::abs(sum(out.posterior) - 1.0) < 1e-12);
        for (std::size_t l = 0; l < w.num_labels; ++l) {
          REQUIRE(std::abs(out.posterior[l] - out.posterior_via_ratio[l]) < 1e-9);
        }
      }
    }
  }
}

TEST_CASE("the prior-weighted complement only closes the identity for two labels") {
  // With C = 2 the complement of L is a single label, so weighting by pi or
  // by P(L'|I) is the same. With more labels only the image-conditioned
  // weights reproduce the joint posterior.
  const auto check = [](const WorldSpec& w, std::size_t n) {
    const auto pi = w.label_frequencies();
    const auto d = generate(w, n, Split::train);
    double worst = 0.0;
    for (const auto& o : d.observations) {
      const auto out = oracle(w, o.features, o.geo);
      for (std::size_t l = 0; l < w.num_labels; ++l) {
        double rest = 0.0;
        for (std::size_t k = 0; k < w.num_labels; ++k) {
          if (k != l) rest += pi[k] * out.p_geo_given_label[k];
        }
        rest /= 1.0 - pi[l];
        const double log_r = std::log(out.p_geo_given_label[l] / rest);
        const double p = out.p_label_given_image[l];
        const double via = nn::logistic(std::log(p / (1.0 - p)) + log_r);
        worst = std::max(worst, std::abs(via - out.posterior[l]));
      }
    }
    return worst;
  };
  CHECK(check(two_label_world(0.8), 300) < 1e-9);
  CHECK(check(build_world(standard_recipe(13)), 300) > 1e-3);
}

TEST_CASE("mismatch epsilon zero keeps train and eval geography identical") {
  const auto w = build_world(standard_recipe(21));
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> lat(-60, 60), lon(-180, 180);
  for (int i = 0; i < 200; ++i) {
    const auto g = GeoPoint::from_degrees(lat(rng), lon(rng));
    REQUIRE(log_geo_density(w, g, Split::train) == log_geo_density(w, g, Split::eval));
  }
  auto mixed = w;
  mixed.mismatch_epsilon = 0.5;
  const auto g = GeoPoint::from_degrees(0, 0);
  const auto tr = log_geo_density(mixed, g, Split::train);
  const auto ev = log_geo_density(mixed, g, Split::eval);
  for (std::size_t l = 0; l < w.num_labels; ++l) {
    CHECK(std::exp(ev[l]) ==
          doctest::Approx(0.5 * std::exp(tr[l]) + 0.5 / (120.0 * 360.0)).epsilon(1e-12));
  }
}

TEST_CASE("degenerate densities raise") {
  auto w = two_label_world(0.0);
  const std::vector<double> off = {5.0, 5.0};
  CHECK_THROWS_AS(oracle(w, off, GeoPoint::from_degrees(0, 0)), NumericError);
  const std::vector<double> wrong = {1.0};
  CHECK_THROWS_AS(oracle(w, wrong, GeoPoint::from_degrees(0, 0)), ShapeMismatch);
}

TEST_CASE("bayes accuracy") {
  SUBCASE("noiseless and separable") {
    WorldRecipe r = standard_recipe(6);
    r.appearance_sigma = 0.0;
    r.confusion_pairs.clear();
    const auto w = build_world(r);
    CHECK(bayes_accuracy(w, generate(w, 2000, Split::eval)) == 1.0);
  }
  SUBCASE("deterministic on the standard world") {
    const auto w = build_world(standard_recipe());
    const auto d = generate(w, 2000, Split::eval);
    const double a = bayes_accuracy(w, d);
    CHECK(a == bayes_accuracy(build_world(standard_recipe()), generate(w, 2000, Split::eval)));
    CHECK(a > 0.5);
    CHECK(a <= 1.0);
  }
  SUBCASE("empty dataset") {
    Dataset empty;
    empty.split = "eval";
    CHECK_THROWS_AS(bayes_accuracy(two_label_world(1.0), empty), InvalidArgument);
  }
}

TEST_CASE("world documents round trip") {
  WorldRecipe r = standard_recipe(31);
  r.components_per_label = 2;
  r.mismatch_epsilon = 0.25;
  const auto w = build_world(r);
  CHECK(world_from_json(Json::parse(world_to_json(w).dump())) == w);

  Json gen = {{"num_labels", 6},
              {"feature_dim", 3},
              {"zipf_exponent", 1.0},
              {"seed", 4},
              {"generator", {{"components_per_label", 2}, {"habitat_sigma_deg", 6.0}}}};
  const auto built = world_from_json(gen);
  CHECK(built.num_labels == 6);
  CHECK(built.confusion_pairs == half_pairs(6));
  CHECK(built.habitats[0].size() == 2);
  CHECK(world_from_json(gen) == built);
  CHECK_THROWS_AS(world_from_json(Json::array()), ConfigError);
  gen["num_labels"] = "ten";
  CHECK_THROWS_AS(world_from_json(gen), ConfigError);
}
