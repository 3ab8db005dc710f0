#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"

#include "geofuse/error.hpp"
#include "geofuse/feat_mod.hpp"
#include "geofuse/geo_fusion.hpp"
#include "geofuse/micronet/gradcheck.hpp"
#include "geofuse/micronet/loss.hpp"
#include "geofuse/spatial_priors.hpp"
#include "geofuse/synthworld.hpp"
#include "support/grad_fixtures.hpp"

using namespace geofuse;
using namespace geofuse::featmod;
using nn::Tensor;
using testing::clear_kinks;
using testing::random_geo;
using testing::random_matrix;
using testing::randomize_projections;

namespace {

nn::Network small_base(std::uint64_t seed, std::vector<std::size_t> hidden = {6, 5}) {
  return nn::Network::mlp(3, hidden, 4, nn::Activation::relu, nn::Activation::identity, seed);
}

double relu(double x) { return x > 0 ? x : 0; }
double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// The formula table written out independently of the library.
double formula_value(Variant v, double f, double g, double b) {
  switch (v) {
    case Variant::film: return relu(g * f + b);
    case Variant::relu_gamma_add: return relu(g) * relu(f) + relu(b);
    case Variant::sigmoid_gamma_add: return sig(g) * relu(f) + relu(b);
    case Variant::sigmoid_gamma_only: return sig(g) * relu(f);
    case Variant::add_relu_beta: return relu(f) + relu(b);
    case Variant::add_raw_beta: return relu(f) + b;
  }
  return 0;
}

Tensor linear(const nn::DenseLayer& l, const Tensor& x) {
  Tensor out = Tensor::matrix(x.rows(), l.out_dim());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t o = 0; o < l.out_dim(); ++o) {
      double s = l.bias()[o];
      for (std::size_t i = 0; i < l.in_dim(); ++i) s += l.weights()(o, i) * x(r, i);
      out(r, o) = s;
    }
  }
  return out;
}

// Hand-composed forward: trunks through Network::predict, everything else
// spelled out.
Tensor composed_forward(const ModulatedNet& net, const Tensor& x, const Tensor& geo) {
  const Tensor bt = net.beta_trunk ? net.beta_trunk->predict(geo) : Tensor();
  const Tensor gt = net.gamma_trunk ? net.gamma_trunk->predict(geo) : Tensor();
  Tensor h = x;
  for (std::size_t i = 0; i < net.hidden_layers(); ++i) {
    const Tensor pre = linear(net.base.layer(i), h);
    Tensor out = pre;
    if (net.layer_mask[i]) {
      const Tensor b = net.beta_trunk ? linear(*net.beta_proj[i], bt) : Tensor();
      const Tensor g = net.gamma_trunk ? linear(*net.gamma_proj[i], gt) : Tensor();
      for (std::size_t k = 0; k < out.size(); ++k) {
        out[k] = formula_value(net.variant, pre[k], g.size() ? g[k] : 0.0, b.size() ? b[k] : 0.0);
      }
    } else {
      for (auto& v : out.values()) v = relu(v);
    }
    h = out;
  }
  return linear(net.base.layers().back(), h);
}

std::vector<std::size_t> some_labels(std::size_t n, std::size_t c) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back((i * 5 + 1) % c);
  return out;
}

double accuracy(const Tensor& logits, const Dataset& d) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (argmax(logits.row(i)) == d.observations[i].label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(d.size());
}

}  // namespace

TEST_CASE("variant names and formulas") {
  for (Variant v : kAllVariants) {
    CHECK(variant_from_string(to_string(v)) == v);
    CHECK_FALSE(formula(v).empty());
  }
  CHECK(formula(Variant::add_raw_beta) == "R(F) + beta");
  CHECK_THROWS_AS(variant_from_string("bogus"), ConfigError);
  CHECK_FALSE(uses_beta(Variant::sigmoid_gamma_only));
  CHECK_FALSE(uses_gamma(Variant::add_relu_beta));
  CHECK(starts_at_identity(Variant::film));
  CHECK_FALSE(starts_at_identity(Variant::sigmoid_gamma_add));
}

TEST_CASE("apply_variant examples") {
  const Tensor pre = Tensor::from_rows({{-1.0, 0.5, 2.0}});
  Tensor post = pre;
  for (auto& v : post.values()) v = relu(v);
  const Tensor zeros = Tensor::matrix(1, 3);
  const Tensor ones = Tensor::matrix(1, 3, 1.0);
  const Tensor none;

  CHECK(apply_variant(Variant::add_raw_beta, pre, post, none, zeros) == post);
  CHECK(apply_variant(Variant::film, pre, post, ones, zeros) == post);
  const Tensor huge = Tensor::matrix(1, 3, 800.0);
  CHECK(apply_variant(Variant::sigmoid_gamma_only, pre, post, huge, none) == post);

  std::mt19937_64 rng(2);
  const Tensor p = random_matrix(rng, 3, 4);
  Tensor q = p;
  for (auto& v : q.values()) v = relu(v);
  const Tensor g = random_matrix(rng, 3, 4), b = random_matrix(rng, 3, 4);
  for (Variant v : kAllVariants) {
    const Tensor out = apply_variant(v, p, q, uses_gamma(v) ? g : none, uses_beta(v) ? b : none);
    for (std::size_t k = 0; k < out.size(); ++k) {
      CHECK(out[k] == doctest::Approx(formula_value(v, p[k], g[k], b[k])).epsilon(1e-15));
    }
  }
  CHECK_THROWS_AS(apply_variant(Variant::add_raw_beta, pre, post, none, Tensor::matrix(1, 2)),
                  ShapeMismatch);
  CHECK_THROWS(apply_variant(Variant::film, pre, post, none, zeros));
}

TEST_CASE("variant_backward matches finite differences elementwise") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (Variant v : kAllVariants) {
    for (int t = 0; t < 200; ++t) {
      double f = n(rng), g = n(rng), b = n(rng);
      const double d = n(rng);
      const Tensor F = Tensor::matrix(1, 1, f), G = Tensor::matrix(1, 1, g), B = Tensor::matrix(1, 1, b);
      const Tensor D = Tensor::matrix(1, 1, d);
      const auto gr = variant_backward(v, F, uses_gamma(v) ? G : Tensor(), uses_beta(v) ? B : Tensor(), D);
      const double h = 1e-6;
      // Skip samples that straddle a kink within the step.
      if (std::min({std::abs(f), std::abs(g), std::abs(b), std::abs(g * f + b)}) < 1e-3) continue;
      const double df = d * (formula_value(v, f + h, g, b) - formula_value(v, f - h, g, b)) / (2 * h);
      REQUIRE(gr.pre[0] == doctest::Approx(df).epsilon(1e-6));
      if (uses_gamma(v)) {
        const double dg = d * (formula_value(v, f, g + h, b) - formula_value(v, f, g - h, b)) / (2 * h);
        REQUIRE(gr.gamma[0] == doctest::Approx(dg).epsilon(1e-6));
      }
      if (uses_beta(v)) {
        const double db = d * (formula_value(v, f, g, b + h) - formula_value(v, f, g, b - h)) / (2 * h);
        REQUIRE(gr.beta[0] == doctest::Approx(db).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("structure: trunks, projections and masks") {
  const auto base = small_base(1, {6, 5, 7, 3});
  CHECK(default_layer_mask(4) == std::vector<bool>{false, false, true, true});
  CHECK(default_layer_mask(1) == std::vector<bool>{true});
  CHECK(default_layer_mask(3) == std::vector<bool>{false, true, true});
  for (Variant v : kAllVariants) {
    const auto net = ModulatedNet::create(base, v, 3);
    CHECK(net.beta_trunk.has_value() == uses_beta(v));
    CHECK(net.gamma_trunk.has_value() == uses_gamma(v));
    const auto& trunk = net.beta_trunk ? *net.beta_trunk : *net.gamma_trunk;
    CHECK(trunk.input_dim() == 2);
    CHECK(trunk.layer(0).out_dim() == 128);
    CHECK(trunk.layer(1).out_dim() == 256);
    CHECK(trunk.depth() == 2);
    const auto& proj = net.beta_trunk ? net.beta_proj : net.gamma_proj;
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(proj[i].has_value() == net.layer_mask[i]);
      if (proj[i]) CHECK(proj[i]->out_dim() == base.layer(i).out_dim());
    }
  }
  if (true) {
    const auto a = ModulatedNet::create(base, Variant::film, 3);
    CHECK_FALSE(*a.beta_trunk == *a.gamma_trunk);
  }
  CHECK_THROWS_AS(ModulatedNet::create(base, Variant::film, 1, {true}), ConfigError);
  CHECK_THROWS_AS(ModulatedNet::create(base, Variant::film, 1, {false, false, false, false}),
                  ConfigError);
  const nn::Network sig = nn::Network::mlp(3, std::vector<std::size_t>{4}, 2, nn::Activation::sigmoid,
                                           nn::Activation::identity, 1);
  CHECK_THROWS_AS(ModulatedNet::create(sig, Variant::film, 1), ConfigError);
}

TEST_CASE("identity at init") {
  std::mt19937_64 rng(7);
  const auto base = small_base(4, {6, 5, 4});
  const Tensor x = random_matrix(rng, 9, 3);
  const Tensor geo = random_geo(rng, 9);
  const Tensor reference = base.predict(x);
  for (Variant v : kAllVariants) {
    const auto net = ModulatedNet::create(base, v, 11, {true, true, true});
    const Tensor out = predict_modulated(net, x, geo);
    if (starts_at_identity(v)) {
      CHECK(out == reference);
    } else {
      // S(0) = 1/2 scales every modulated hidden unit by one half.
      const ModulatedCache c = forward_modulated(net, x, geo);
      for (std::size_t i = 0; i < 3; ++i) {
        Tensor expect = c.base_layers[i].post;
        for (auto& e : expect.values()) e *= 0.5;
        CHECK(c.hidden_out[i] == expect);
      }
    }
  }
}

TEST_CASE("masked-out layers are computed exactly as in the base") {
  std::mt19937_64 rng(8);
  const auto base = small_base(5, {6, 5, 4});
  const Tensor x = random_matrix(rng, 7, 3);
  const Tensor geo = random_geo(rng, 7);
  for (Variant v : kAllVariants) {
    auto net = ModulatedNet::create(base, v, 2, {false, true, false});
    randomize_projections(net, rng);
    const ModulatedCache c = forward_modulated(net, x, geo);
    CHECK(c.hidden_out[0] == base.layer(0).forward(x));
    CHECK(c.hidden_out[2] == base.layer(2).forward(c.hidden_out[1]));
    CHECK_FALSE(c.hidden_out[1] == base.layer(1).forward(c.hidden_out[0]));
  }
}

TEST_CASE("forward matches a hand-composed oracle") {
  std::mt19937_64 rng(9);
  const auto base = small_base(6, {6, 5});
  const Tensor x = random_matrix(rng, 5, 3);
  const Tensor geo = random_geo(rng, 5);
  for (Variant v : kAllVariants) {
    auto net = ModulatedNet::create(base, v, 4, {true, true});
    randomize_projections(net, rng);
    const Tensor got = predict_modulated(net, x, geo);
    const Tensor want = composed_forward(net, x, geo);
    for (std::size_t k = 0; k < got.size(); ++k) {
      CHECK(got[k] == doctest::Approx(want[k]).epsilon(1e-12));
    }
    CHECK(forward_modulated(net, x, geo).logits == got);
  }
}

TEST_CASE("gradient check through both trunks and the base") {
  const auto base = small_base(12, {6, 5});
  for (Variant v : kAllVariants) {
    CAPTURE(to_string(v));
    std::mt19937_64 rng(100);
    ModulatedNet net = ModulatedNet::create(base, v, 3, {true, true});
    randomize_projections(net, rng);
    const Tensor x = random_matrix(rng, 4, 3);
    const Tensor geo = random_geo(rng, 4);
    REQUIRE(clear_kinks(net, x, geo, 1e-3));
    const auto labels = some_labels(4, 4);
    const ModulatedCache cache = forward_modulated(net, x, geo);
    const ModulatedGrads grads = backward_modulated(net, cache, nn::softmax_xent(cache.logits, labels).grad);
    auto params = net.parameters();
    auto analytic = grads.spans();
    REQUIRE(params.size() == analytic.size());
    // The wide trunk weight slots are sampled: their leading entries only.
    const std::size_t trunk_slots = testing::sample_trunk_slots(params, analytic);
    CHECK(trunk_slots == (uses_beta(v) ? 4u : 0u) + (uses_gamma(v) ? 4u : 0u));
    const auto r = nn::check_gradients(params, analytic, [&] {
      return nn::softmax_xent(predict_modulated(net, x, geo), labels).loss;
    });
    INFO(r.worst_parameter);
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("stale caches are refused") {
  std::mt19937_64 rng(10);
  auto net = ModulatedNet::create(small_base(1), Variant::film, 1);
  const Tensor x = random_matrix(rng, 2, 3), geo = random_geo(rng, 2);
  const ModulatedCache c = forward_modulated(net, x, geo);
  (void)net.parameters();
  CHECK_THROWS_AS(backward_modulated(net, c, Tensor::matrix(2, 4, 1.0)), StaleCache);
  CHECK_THROWS_AS(forward_modulated(net, x, random_geo(rng, 3)), ShapeMismatch);
}

TEST_CASE("one training step moves the outputs off the base") {
  const auto w = synth::build_world(synth::standard_recipe(3));
  const auto train = synth::generate(w, 64, synth::Split::train);
  const auto base = nn::Network::mlp(4, std::vector<std::size_t>{8, 8}, 10, nn::Activation::relu,
                                     nn::Activation::identity, 2);
  const Tensor x = fusion::feature_matrix(train);
  const Tensor geo = fusion::geo_inputs(train.locations());
  for (Variant v : kAllVariants) {
    JointConfig jc;
    jc.train.epochs = 1;
    jc.train.batch_size = 64;
    const auto res = train_joint(train, base, v, jc);
    const Tensor before = predict_modulated(ModulatedNet::create(base, v, jc.train.seed), x, geo);
    CHECK_FALSE(predict_modulated(res.net, x, geo) == before);
  }
  Dataset empty;
  empty.num_labels = 10;
  empty.feature_dim = 4;
  CHECK_THROWS_AS(train_joint(empty, base, Variant::film, JointConfig{}), DataError);
}

TEST_CASE("joint training on seeded worlds") {
  const auto run = [](const synth::WorldSpec& w) {
    const auto train = synth::generate(w, 3000, synth::Split::train);
    const auto eval = synth::generate(w, 1500, synth::Split::eval);
    nn::Network base = nn::Network::mlp(4, std::vector<std::size_t>{32, 32}, 10, nn::Activation::relu,
                                        nn::Activation::identity, 1);
    nn::TrainConfig tc;
    tc.optimizer.learning_rate = 0.05;
    tc.epochs = 20;
    nn::train_classifier(base, fusion::feature_matrix(train), train.labels(), tc);
    JointConfig jc;
    jc.train.epochs = 8;
    jc.train.optimizer.learning_rate = 0.002;
    const auto res = train_joint(train, base, Variant::add_raw_beta, jc);
    const Tensor x = fusion::feature_matrix(eval);
    const double b = accuracy(base.predict(x), eval);
    const double m = accuracy(predict_modulated(res.net, x, fusion::geo_inputs(eval.locations())), eval);
    return std::pair{b, m};
  };
  SUBCASE("geo-separable") {
    const auto [b, m] = run(synth::build_world(synth::standard_recipe(7)));
    INFO("base " << b << " modulated " << m);
    CHECK(m >= b + 0.10);
  }
  SUBCASE("geo noise") {
    auto r = synth::standard_recipe(7);
    r.shared_habitat = true;
    const auto [b, m] = run(synth::build_world(r));
    INFO("base " << b << " modulated " << m);
    CHECK(std::abs(m - b) <= 0.02);
  }
}

TEST_CASE("featmod checkpoints round trip") {
  std::mt19937_64 rng(13);
  const auto base = small_base(3, {6, 5, 4});
  for (Variant v : kAllVariants) {
    auto net = ModulatedNet::create(base, v, 5);
    randomize_projections(net, rng);
    JointConfig jc;
    const nn::Json doc = featmod_to_json(net, jc);
    const auto back = featmod_from_json(nn::Json::parse(doc.dump()));
    CHECK(back.variant == v);
    CHECK(back.layer_mask == net.layer_mask);
    CHECK(back.base == net.base);
    const Tensor x = random_matrix(rng, 3, 3), geo = random_geo(rng, 3);
    CHECK(predict_modulated(back, x, geo) == predict_modulated(net, x, geo));
  }
  auto doc = featmod_to_json(ModulatedNet::create(base, Variant::film, 1), JointConfig{});
  doc["gamma_trunk"] = nullptr;
  CHECK_THROWS_AS(featmod_from_json(doc), ConfigError);
  doc = featmod_to_json(ModulatedNet::create(base, Variant::film, 1), JointConfig{});
  doc["variant"] = "nope";
  CHECK_THROWS_AS(featmod_from_json(doc), ConfigError);
}
