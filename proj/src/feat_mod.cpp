#include "geofuse/feat_mod.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "geofuse/error.hpp"
#include "geofuse/geo_fusion.hpp"
#include "geofuse/micronet/loss.hpp"
#include "geofuse/micronet/optimizer.hpp"

namespace geofuse::featmod {
namespace {

using nn::Activation;
using nn::Tensor;

double relu(double x) { return x > 0.0 ? x : 0.0; }
double relu_grad(double x) { return x >= 0.0 ? 1.0 : 0.0; }
double sigmoid(double x) { return nn::activate(Activation::sigmoid, x); }

void require_operand(const Tensor& t, const Tensor& pre, bool used, const char* what) {
  if (!used) return;
  nn::require_same_shape(t, pre, what);
}

nn::Network make_trunk(std::uint64_t seed) {
  const std::vector<std::size_t> hidden = {kTrunkWidths[0]};
  return nn::Network::mlp(2, hidden, kTrunkWidths[1], Activation::relu, Activation::relu, seed);
}

nn::Json layer_to_json(const nn::DenseLayer& layer) {
  return nn::network_to_json(nn::Network({layer})).at("layers").at(0);
}

nn::DenseLayer layer_from_json(const nn::Json& doc) {
  nn::Json wrapped;
  wrapped["layers"] = nn::Json::array({doc});
  return nn::network_from_json(wrapped).layer(0);
}

nn::Json projections_to_json(const std::vector<std::optional<nn::DenseLayer>>& proj) {
  nn::Json out = nn::Json::array();
  for (const auto& p : proj) out.push_back(p ? layer_to_json(*p) : nn::Json(nullptr));
  return out;
}

std::vector<std::optional<nn::DenseLayer>> projections_from_json(const nn::Json& doc) {
  if (!doc.is_array()) throw ConfigError("projections must be an array");
  std::vector<std::optional<nn::DenseLayer>> out;
  for (const auto& item : doc) {
    if (item.is_null()) {
      out.emplace_back();
    } else {
      out.emplace_back(layer_from_json(item));
    }
  }
  return out;
}

void validate_structure(const ModulatedNet& net) {
  const auto& layers = net.base.layers();
  if (layers.size() < 2) throw ConfigError("modulated base needs at least one hidden layer");
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
    if (layers[i].activation() != Activation::relu) {
      throw ConfigError(fmt::format("hidden layer {} of the base must use relu", i));
    }
  }
  if (layers.back().activation() != Activation::identity) {
    throw ConfigError("base output layer must be linear");
  }
  const std::size_t hidden = net.hidden_layers();
  if (net.layer_mask.size() != hidden) {
    throw ConfigError(fmt::format("layer mask has {} entries for {} hidden layers",
                                  net.layer_mask.size(), hidden));
  }
  if (std::none_of(net.layer_mask.begin(), net.layer_mask.end(), [](bool b) { return b; })) {
    throw ConfigError("layer mask selects no layers");
  }
  const auto check_side = [&](bool used, const std::optional<nn::Network>& trunk,
                              const std::vector<std::optional<nn::DenseLayer>>& proj,
                              const char* name) {
    if (used != trunk.has_value()) {
      throw ConfigError(fmt::format("variant {} {} a {} trunk", to_string(net.variant),
                                    used ? "needs" : "takes no", name));
    }
    if (!used) {
      if (!proj.empty() && std::any_of(proj.begin(), proj.end(), [](const auto& p) { return p; })) {
        throw ConfigError(fmt::format("unexpected {} projections", name));
      }
      return;
    }
    if (trunk->input_dim() != 2) throw ConfigError(fmt::format("{} trunk must take 2 inputs", name));
    if (proj.size() != hidden) throw ConfigError(fmt::format("{} projections per layer", name));
    for (std::size_t i = 0; i < hidden; ++i) {
      if (proj[i].has_value() != net.layer_mask[i]) {
        throw ConfigError(fmt::format("{} projection {} disagrees with the layer mask", name, i));
      }
      if (proj[i] && (proj[i]->in_dim() != trunk->output_dim() ||
                      proj[i]->out_dim() != layers[i].out_dim() ||
                      proj[i]->activation() != Activation::identity)) {
        throw ConfigError(fmt::format("{} projection {} has the wrong shape", name, i));
      }
    }
  };
  check_side(uses_beta(net.variant), net.beta_trunk, net.beta_proj, "beta");
  check_side(uses_gamma(net.variant), net.gamma_trunk, net.gamma_proj, "gamma");
}

}  // namespace

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::film:
      return "film";
    case Variant::relu_gamma_add:
      return "relu_gamma_add";
    case Variant::sigmoid_gamma_add:
      return "sigmoid_gamma_add";
    case Variant::sigmoid_gamma_only:
      return "sigmoid_gamma_only";
    case Variant::add_relu_beta:
      return "add_relu_beta";
    case Variant::add_raw_beta:
      return "add_raw_beta";
  }
  return "add_raw_beta";
}

Variant variant_from_string(std::string_view name) {
  for (Variant v : kAllVariants) {
    if (to_string(v) == name) return v;
  }
  throw ConfigError(fmt::format("unknown modulation variant '{}'", name));
}

std::string_view formula(Variant v) {
  switch (v) {
    case Variant::film:
      return "R(gamma*F + beta)";
    case Variant::relu_gamma_add:
      return "R(gamma)*R(F) + R(beta)";
    case Variant::sigmoid_gamma_add:
      return "S(gamma)*R(F) + R(beta)";
    case Variant::sigmoid_gamma_only:
      return "S(gamma)*R(F)";
    case Variant::add_relu_beta:
      return "R(F) + R(beta)";
    case Variant::add_raw_beta:
      return "R(F) + beta";
  }
  return "";
}

bool uses_gamma(Variant v) {
  return v == Variant::film || v == Variant::relu_gamma_add || v == Variant::sigmoid_gamma_add ||
         v == Variant::sigmoid_gamma_only;
}

bool uses_beta(Variant v) { return v != Variant::sigmoid_gamma_only; }

bool starts_at_identity(Variant v) {
  return v != Variant::sigmoid_gamma_add && v != Variant::sigmoid_gamma_only;
}

Tensor apply_variant(Variant v, const Tensor& pre, const Tensor& post, const Tensor& gamma,
                     const Tensor& beta) {
  nn::require_same_shape(pre, post, "apply_variant post");
  require_operand(gamma, pre, uses_gamma(v), "apply_variant gamma");
  require_operand(beta, pre, uses_beta(v), "apply_variant beta");
  Tensor out = post;
  for (std::size_t k = 0; k < out.size(); ++k) {
    switch (v) {
      case Variant::film:
        out[k] = relu(gamma[k] * pre[k] + beta[k]);
        break;
      case Variant::relu_gamma_add:
        out[k] = relu(gamma[k]) * post[k] + relu(beta[k]);
        break;
      case Variant::sigmoid_gamma_add:
        out[k] = sigmoid(gamma[k]) * post[k] + relu(beta[k]);
        break;
      case Variant::sigmoid_gamma_only:
        out[k] = sigmoid(gamma[k]) * post[k];
        break;
      case Variant::add_relu_beta:
        out[k] = post[k] + relu(beta[k]);
        break;
      case Variant::add_raw_beta:
        out[k] = post[k] + beta[k];
        break;
    }
  }
  return out;
}

VariantGrads variant_backward(Variant v, const Tensor& pre, const Tensor& gamma,
                              const Tensor& beta, const Tensor& grad_out) {
  nn::require_same_shape(pre, grad_out, "variant_backward");
  require_operand(gamma, pre, uses_gamma(v), "variant_backward gamma");
  require_operand(beta, pre, uses_beta(v), "variant_backward beta");
  VariantGrads g;
  g.pre = Tensor(pre.shape());
  if (uses_gamma(v)) g.gamma = Tensor(pre.shape());
  if (uses_beta(v)) g.beta = Tensor(pre.shape());
  for (std::size_t k = 0; k < pre.size(); ++k) {
    const double d = grad_out[k];
    const double f = pre[k];
    switch (v) {
      case Variant::film: {
        const double du = d * relu_grad(gamma[k] * f + beta[k]);
        g.pre[k] = du * gamma[k];
        g.gamma[k] = du * f;
        g.beta[k] = du;
        break;
      }
      case Variant::relu_gamma_add:
        g.pre[k] = d * relu(gamma[k]) * relu_grad(f);
        g.gamma[k] = d * relu_grad(gamma[k]) * relu(f);
        g.beta[k] = d * relu_grad(beta[k]);
        break;
      case Variant::sigmoid_gamma_add:
      case Variant::sigmoid_gamma_only: {
        const double s = sigmoid(gamma[k]);
        g.pre[k] = d * s * relu_grad(f);
        g.gamma[k] = d * s * (1.0 - s) * relu(f);
        if (v == Variant::sigmoid_gamma_add) g.beta[k] = d * relu_grad(beta[k]);
        break;
      }
      case Variant::add_relu_beta:
        g.pre[k] = d * relu_grad(f);
        g.beta[k] = d * relu_grad(beta[k]);
        break;
      case Variant::add_raw_beta:
        g.pre[k] = d * relu_grad(f);
        g.beta[k] = d;
        break;
    }
  }
  return g;
}

std::vector<bool> default_layer_mask(std::size_t hidden_layers) {
  std::vector<bool> mask(hidden_layers, false);
  for (std::size_t i = hidden_layers / 2; i < hidden_layers; ++i) mask[i] = true;
  return mask;
}

// --- ModulatedNet ------------------------------------------------------------

ModulatedNet ModulatedNet::create(const nn::Network& base, Variant variant, std::uint64_t seed,
                                  std::vector<bool> layer_mask) {
  if (base.depth() < 2) throw ConfigError("modulated base needs at least one hidden layer");
  ModulatedNet net;
  net.variant = variant;
  net.base = base;
  net.layer_mask = layer_mask.empty() ? default_layer_mask(base.depth() - 1) : std::move(layer_mask);
  const std::size_t hidden = net.hidden_layers();
  if (net.layer_mask.size() != hidden) {
    throw ConfigError(fmt::format("layer mask has {} entries for {} hidden layers",
                                  net.layer_mask.size(), hidden));
  }
  const auto make_proj = [&] {
    std::vector<std::optional<nn::DenseLayer>> proj(hidden);
    for (std::size_t i = 0; i < hidden; ++i) {
      if (net.layer_mask[i]) {
        proj[i].emplace(kTrunkWidths[1], base.layer(i).out_dim(), Activation::identity);
      }
    }
    return proj;
  };
  if (uses_beta(variant)) {
    net.beta_trunk = make_trunk(seed * 2 + 1);
    net.beta_proj = make_proj();
  }
  if (uses_gamma(variant)) {
    net.gamma_trunk = make_trunk(seed * 2 + 2);
    net.gamma_proj = make_proj();
  }
  validate_structure(net);
  beta_zero_init(net);
  return net;
}

std::size_t ModulatedNet::parameter_count() const {
  std::size_t n = base.parameter_count();
  if (beta_trunk) n += beta_trunk->parameter_count();
  if (gamma_trunk) n += gamma_trunk->parameter_count();
  for (const auto* side : {&beta_proj, &gamma_proj}) {
    for (const auto& p : *side) {
      if (p) n += p->weights().size() + p->bias().size();
    }
  }
  return n;
}

std::vector<nn::ParamRef> ModulatedNet::parameters() {
  state_token = nn::fresh_state_token();
  std::vector<nn::ParamRef> out = base.parameters("base.");
  const auto append = [&out](std::vector<nn::ParamRef> more) {
    for (auto& p : more) out.push_back(std::move(p));
  };
  if (beta_trunk) append(beta_trunk->parameters("beta_trunk."));
  if (gamma_trunk) append(gamma_trunk->parameters("gamma_trunk."));
  for (std::size_t i = 0; i < beta_proj.size(); ++i) {
    if (beta_proj[i]) beta_proj[i]->append_params(fmt::format("beta_proj{}.", i), out);
  }
  for (std::size_t i = 0; i < gamma_proj.size(); ++i) {
    if (gamma_proj[i]) gamma_proj[i]->append_params(fmt::format("gamma_proj{}.", i), out);
  }
  return out;
}

std::vector<std::uint64_t> ModulatedNet::state_tokens() const {
  return {state_token, base.state_token(), beta_trunk ? beta_trunk->state_token() : 0,
          gamma_trunk ? gamma_trunk->state_token() : 0};
}

void beta_zero_init(ModulatedNet& net) {
  net.state_token = nn::fresh_state_token();
  const double gamma_bias = (net.variant == Variant::film || net.variant == Variant::relu_gamma_add)
                                ? 1.0
                                : 0.0;
  for (auto& p : net.beta_proj) {
    if (!p) continue;
    p->weights().fill(0.0);
    p->bias().fill(0.0);
  }
  for (auto& p : net.gamma_proj) {
    if (!p) continue;
    p->weights().fill(0.0);
    p->bias().fill(gamma_bias);
  }
}

// --- forward / backward ------------------------------------------------------

ModulatedCache forward_modulated(const ModulatedNet& net, const Tensor& features,
                                 const Tensor& geo) {
  if (features.rank() != 2 || geo.rank() != 2 || features.rows() != geo.rows()) {
    throw ShapeMismatch("features and geo inputs must be [n x D] and [n x 2] with equal n");
  }
  if (geo.cols() != 2) throw ShapeMismatch("geo inputs must have 2 columns");
  const std::size_t hidden = net.hidden_layers();
  ModulatedCache cache;
  cache.tokens = net.state_tokens();
  cache.base_layers.resize(net.base.depth());
  cache.beta_proj.resize(hidden);
  cache.gamma_proj.resize(hidden);
  cache.hidden_out.resize(hidden);
  if (net.beta_trunk) cache.beta_trunk = net.beta_trunk->forward(geo);
  if (net.gamma_trunk) cache.gamma_trunk = net.gamma_trunk->forward(geo);

  Tensor x = features;
  for (std::size_t i = 0; i < hidden; ++i) {
    auto& lc = cache.base_layers[i];
    Tensor post = net.base.layer(i).forward(x, &lc);
    if (net.layer_mask[i]) {
      Tensor gamma;
      Tensor beta;
      if (net.gamma_trunk) {
        gamma = net.gamma_proj[i]->forward(cache.gamma_trunk->output, &cache.gamma_proj[i]);
      }
      if (net.beta_trunk) {
        beta = net.beta_proj[i]->forward(cache.beta_trunk->output, &cache.beta_proj[i]);
      }
      post = apply_variant(net.variant, lc.pre, lc.post, gamma, beta);
    }
    cache.hidden_out[i] = post;
    x = std::move(post);
  }
  cache.logits = net.base.layers().back().forward(x, &cache.base_layers.back());
  return cache;
}

Tensor predict_modulated(const ModulatedNet& net, const Tensor& features, const Tensor& geo) {
  return forward_modulated(net, features, geo).logits;
}

std::vector<std::span<const double>> ModulatedGrads::spans() const {
  std::vector<std::span<const double>> out = base.spans();
  const auto append = [&out](const std::vector<std::span<const double>>& more) {
    out.insert(out.end(), more.begin(), more.end());
  };
  if (beta_trunk) append(beta_trunk->spans());
  if (gamma_trunk) append(gamma_trunk->spans());
  for (const auto* side : {&beta_proj, &gamma_proj}) {
    for (const auto& g : *side) {
      if (!g) continue;
      out.push_back(g->weights.data());
      out.push_back(g->bias.data());
    }
  }
  return out;
}

ModulatedGrads backward_modulated(const ModulatedNet& net, const ModulatedCache& cache,
                                  const Tensor& grad_logits) {
  if (cache.tokens != net.state_tokens()) {
    throw StaleCache("modulated forward cache does not match the current parameters");
  }
  const std::size_t hidden = net.hidden_layers();
  ModulatedGrads grads;
  grads.base.layers.resize(net.base.depth());
  grads.beta_proj.resize(net.beta_proj.size());
  grads.gamma_proj.resize(net.gamma_proj.size());

  const std::size_t batch = cache.logits.rows();
  Tensor d_beta_trunk;
  Tensor d_gamma_trunk;
  if (net.beta_trunk) d_beta_trunk = Tensor::matrix(batch, net.beta_trunk->output_dim());
  if (net.gamma_trunk) d_gamma_trunk = Tensor::matrix(batch, net.gamma_trunk->output_dim());
  const auto accumulate = [](Tensor& into, const Tensor& add) {
    for (std::size_t k = 0; k < into.size(); ++k) into[k] += add[k];
  };

  Tensor g = net.base.layers().back().backward(cache.base_layers.back(), grad_logits,
                                               grads.base.layers.back());
  for (std::size_t i = hidden; i-- > 0;) {
    const auto& layer = net.base.layer(i);
    const auto& lc = cache.base_layers[i];
    if (!net.layer_mask[i]) {
      g = layer.backward(lc, g, grads.base.layers[i]);
      continue;
    }
    const Tensor empty;
    const Tensor& gamma = net.gamma_trunk ? cache.gamma_proj[i].post : empty;
    const Tensor& beta = net.beta_trunk ? cache.beta_proj[i].post : empty;
    const VariantGrads vg = variant_backward(net.variant, lc.pre, gamma, beta, g);
    if (net.gamma_trunk) {
      grads.gamma_proj[i].emplace();
      accumulate(d_gamma_trunk,
                 net.gamma_proj[i]->backward(cache.gamma_proj[i], vg.gamma, *grads.gamma_proj[i]));
    }
    if (net.beta_trunk) {
      grads.beta_proj[i].emplace();
      accumulate(d_beta_trunk,
                 net.beta_proj[i]->backward(cache.beta_proj[i], vg.beta, *grads.beta_proj[i]));
    }
    g = layer.backward_from_pre(lc, vg.pre, grads.base.layers[i]);
  }
  grads.base.input = std::move(g);
  if (net.beta_trunk) grads.beta_trunk = net.beta_trunk->backward(*cache.beta_trunk, d_beta_trunk);
  if (net.gamma_trunk) {
    grads.gamma_trunk = net.gamma_trunk->backward(*cache.gamma_trunk, d_gamma_trunk);
  }
  return grads;
}

// --- training ----------------------------------------------------------------

JointConfig::JointConfig() {
  train.optimizer.kind = nn::OptimizerKind::rmsprop;
  train.optimizer.learning_rate = 0.0045;
  train.optimizer.decay_rate = 0.94;
  train.optimizer.decay_every_epochs = 4;
  train.batch_size = 32;
  train.epochs = 30;
}

JointResult train_joint(const Dataset& data, const nn::Network& init_base, Variant variant,
                        const JointConfig& config) {
  config.train.validate();
  if (data.empty()) throw DataError("joint training set is empty");
  data.validate();
  if (init_base.input_dim() != data.feature_dim || init_base.output_dim() != data.num_labels) {
    throw DataError(fmt::format("base classifier is {} -> {}, dataset has D={} C={}",
                                init_base.input_dim(), init_base.output_dim(), data.feature_dim,
                                data.num_labels));
  }
  JointResult result{ModulatedNet::create(init_base, variant, config.train.seed, config.layer_mask),
                     {}};
  ModulatedNet& net = result.net;

  const Tensor features = fusion::feature_matrix(data);
  const Tensor geo = fusion::geo_inputs(data.locations());
  const auto labels = data.labels();
  const std::size_t n = data.size();

  nn::Optimizer opt(config.train.optimizer);
  nn::EpochShuffler shuffler(n, config.train.seed);
  std::vector<std::size_t> batch_labels;
  for (int epoch = 0; epoch < config.train.epochs; ++epoch) {
    opt.set_epoch(epoch);
    const auto& order = shuffler.next();
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += config.train.batch_size) {
      const std::size_t stop = std::min(n, start + config.train.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      batch_labels.clear();
      for (std::size_t i : idx) batch_labels.push_back(labels[i]);

      const ModulatedCache cache =
          forward_modulated(net, nn::gather_rows(features, idx), nn::gather_rows(geo, idx));
      const nn::LossResult loss = nn::softmax_xent(cache.logits, batch_labels);
      loss_sum += loss.loss * static_cast<double>(idx.size());
      const ModulatedGrads grads = backward_modulated(net, cache, loss.grad);
      const auto params = net.parameters();
      opt.step(params, grads.spans());
    }
    result.history.epoch_loss.push_back(loss_sum / static_cast<double>(n));
    spdlog::debug("featmod {} epoch {} loss {:.6f}", to_string(variant), epoch,
                  result.history.epoch_loss.back());
  }
  return result;
}

// --- checkpoints -------------------------------------------------------------

nn::Json featmod_to_json(const ModulatedNet& net, const JointConfig& config) {
  nn::Json doc = nn::checkpoint_header("featmod", config.train.seed, config.train.optimizer);
  doc["batch_size"] = config.train.batch_size;
  doc["epochs"] = config.train.epochs;
  doc["variant"] = std::string(to_string(net.variant));
  doc["layer_mask"] = net.layer_mask;
  doc["base"] = nn::network_to_json(net.base);
  doc["beta_trunk"] = net.beta_trunk ? nn::network_to_json(*net.beta_trunk) : nn::Json(nullptr);
  doc["gamma_trunk"] = net.gamma_trunk ? nn::network_to_json(*net.gamma_trunk) : nn::Json(nullptr);
  doc["beta_projections"] = projections_to_json(net.beta_proj);
  doc["gamma_projections"] = projections_to_json(net.gamma_proj);
  return doc;
}

ModulatedNet featmod_from_json(const nn::Json& doc) {
  nn::check_checkpoint(doc, "featmod");
  try {
    ModulatedNet net;
    net.variant = variant_from_string(doc.at("variant").get<std::string>());
    net.layer_mask = doc.at("layer_mask").get<std::vector<bool>>();
    net.base = nn::network_from_json(doc.at("base"));
    if (!doc.at("beta_trunk").is_null()) net.beta_trunk = nn::network_from_json(doc.at("beta_trunk"));
    if (!doc.at("gamma_trunk").is_null()) {
      net.gamma_trunk = nn::network_from_json(doc.at("gamma_trunk"));
    }
    net.beta_proj = projections_from_json(doc.at("beta_projections"));
    net.gamma_proj = projections_from_json(doc.at("gamma_projections"));
    validate_structure(net);
    net.state_token = nn::fresh_state_token();
    return net;
  } catch (const nn::Json::exception& e) {
    throw ConfigError(fmt::format("malformed featmod checkpoint: {}", e.what()));
  }
}

}  // namespace geofuse::featmod
