#include "geofuse/micronet/network.hpp"

#include <atomic>
#include <cmath>

#include <fmt/format.h>

#include "geofuse/error.hpp"

namespace geofuse::nn {
namespace {

Tensor as_matrix(const Tensor& x) {
  if (x.rank() == 2) return x;
  if (x.rank() == 1) return Tensor({1, x.size()}, x.values());
  throw ShapeMismatch("network input must be rank 1 or 2");
}

Tensor as_vector(Tensor t) {
  const std::size_t n = t.size();
  return Tensor({n}, std::move(t.values()));
}

}  // namespace

std::uint64_t fresh_state_token() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::relu:
      return "relu";
    case Activation::sigmoid:
      return "sigmoid";
    case Activation::identity:
      return "identity";
  }
  return "identity";
}

Activation activation_from_string(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "identity") return Activation::identity;
  throw ConfigError(fmt::format("unknown activation '{}'", name));
}

double activate(Activation a, double x) {
  switch (a) {
    case Activation::relu:
      return x > 0.0 ? x : 0.0;
    case Activation::sigmoid:
      return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    case Activation::identity:
      return x;
  }
  return x;
}

double activation_grad(Activation a, double pre, double post) {
  switch (a) {
    case Activation::relu:
      return pre >= 0.0 ? 1.0 : 0.0;
    case Activation::sigmoid:
      return post * (1.0 - post);
    case Activation::identity:
      return 1.0;
  }
  return 1.0;
}

// --- DenseLayer -------------------------------------------------------------

DenseLayer::DenseLayer(std::size_t in_dim, std::size_t out_dim, Activation activation)
    : in_dim_(in_dim),
      out_dim_(out_dim),
      activation_(activation),
      weights_(Tensor::matrix(out_dim, in_dim)),
      bias_(Tensor({out_dim})) {
  if (in_dim == 0 || out_dim == 0) throw InvalidArgument("dense layer dimensions must be positive");
}

DenseLayer DenseLayer::glorot(std::size_t in_dim, std::size_t out_dim, Activation activation,
                              std::mt19937_64& rng) {
  DenseLayer layer(in_dim, out_dim, activation);
  const double limit = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& w : layer.weights_.values()) w = dist(rng);
  return layer;
}

Tensor DenseLayer::affine(const Tensor& x) const {
  if (x.rank() != 2 || x.cols() != in_dim_) {
    throw ShapeMismatch(fmt::format("dense layer expects [batch x {}] input", in_dim_));
  }
  const std::size_t batch = x.rows();
  Tensor out = Tensor::matrix(batch, out_dim_);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto xr = x.row(b);
    auto yr = out.row(b);
    for (std::size_t o = 0; o < out_dim_; ++o) {
      const auto wr = weights_.row(o);
      double acc = bias_[o];
      for (std::size_t i = 0; i < in_dim_; ++i) acc += wr[i] * xr[i];
      yr[o] = acc;
    }
  }
  return out;
}

Tensor DenseLayer::forward(const Tensor& x, LayerCache* cache) const {
  Tensor pre = affine(x);
  Tensor post = pre;
  if (activation_ != Activation::identity) {
    for (double& v : post.values()) v = activate(activation_, v);
  }
  if (cache != nullptr) {
    cache->input = x;
    cache->pre = std::move(pre);
    cache->post = post;
  }
  return post;
}

Tensor DenseLayer::backward_from_pre(const LayerCache& cache, const Tensor& grad_pre,
                                     LayerGrads& grads) const {
  require_same_shape(cache.pre, grad_pre, "dense backward");
  if (grads.weights.size() == 0) grads = zero_grads();
  const std::size_t batch = grad_pre.rows();
  Tensor grad_in = Tensor::matrix(batch, in_dim_);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto xr = cache.input.row(b);
    const auto gr = grad_pre.row(b);
    auto dx = grad_in.row(b);
    for (std::size_t o = 0; o < out_dim_; ++o) {
      const double g = gr[o];
      if (g == 0.0) continue;
      grads.bias[o] += g;
      auto dw = grads.weights.row(o);
      const auto wr = weights_.row(o);
      for (std::size_t i = 0; i < in_dim_; ++i) {
        dw[i] += g * xr[i];
        dx[i] += g * wr[i];
      }
    }
  }
  return grad_in;
}

Tensor DenseLayer::backward(const LayerCache& cache, const Tensor& grad_post,
                            LayerGrads& grads) const {
  require_same_shape(cache.post, grad_post, "dense backward");
  if (activation_ == Activation::identity) return backward_from_pre(cache, grad_post, grads);
  Tensor grad_pre = grad_post;
  auto& gp = grad_pre.values();
  for (std::size_t k = 0; k < gp.size(); ++k) {
    gp[k] *= activation_grad(activation_, cache.pre[k], cache.post[k]);
  }
  return backward_from_pre(cache, grad_pre, grads);
}

LayerGrads DenseLayer::zero_grads() const {
  return LayerGrads{Tensor::matrix(out_dim_, in_dim_), Tensor({out_dim_})};
}

void DenseLayer::append_params(std::string_view prefix, std::vector<ParamRef>& out) {
  out.push_back({fmt::format("{}weights", prefix), weights_.data()});
  out.push_back({fmt::format("{}bias", prefix), bias_.data()});
}

// --- Network ----------------------------------------------------------------

std::vector<std::span<const double>> NetworkGrads::spans() const {
  std::vector<std::span<const double>> out;
  out.reserve(layers.size() * 2);
  for (const auto& g : layers) {
    out.push_back(g.weights.data());
    out.push_back(g.bias.data());
  }
  return out;
}

Network::Network(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  for (std::size_t i = 1; i < layers_.size(); ++i) {
    if (layers_[i].in_dim() != layers_[i - 1].out_dim()) {
      throw ShapeMismatch(fmt::format("layer {} expects {} inputs but layer {} emits {}", i,
                                      layers_[i].in_dim(), i - 1, layers_[i - 1].out_dim()));
    }
  }
  touch();
}

Network Network::mlp(std::size_t in_dim, std::span<const std::size_t> hidden,
                     std::size_t out_dim, Activation hidden_activation,
                     Activation output_activation, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<DenseLayer> layers;
  std::size_t prev = in_dim;
  for (std::size_t width : hidden) {
    layers.push_back(DenseLayer::glorot(prev, width, hidden_activation, rng));
    prev = width;
  }
  layers.push_back(DenseLayer::glorot(prev, out_dim, output_activation, rng));
  return Network(std::move(layers));
}

std::size_t Network::input_dim() const {
  if (layers_.empty()) throw InvalidArgument("empty network");
  return layers_.front().in_dim();
}

std::size_t Network::output_dim() const {
  if (layers_.empty()) throw InvalidArgument("empty network");
  return layers_.back().out_dim();
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weights().size() + l.bias().size();
  return n;
}

void Network::touch() { state_token_ = fresh_state_token(); }

DenseLayer& Network::mutable_layer(std::size_t i) {
  touch();
  return layers_.at(i);
}

std::vector<ParamRef> Network::parameters(std::string_view prefix) {
  touch();
  std::vector<ParamRef> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].append_params(fmt::format("{}layer{}.", prefix, i), out);
  }
  return out;
}

ForwardCache Network::forward(const Tensor& input) const {
  if (layers_.empty()) throw InvalidArgument("empty network");
  ForwardCache cache;
  cache.state_token = state_token_;
  cache.layers.resize(layers_.size());
  Tensor x = as_matrix(input);
  for (std::size_t i = 0; i < layers_.size(); ++i) x = layers_[i].forward(x, &cache.layers[i]);
  if (input.rank() == 1) x = as_vector(std::move(x));
  cache.output = std::move(x);
  return cache;
}

Tensor Network::predict(const Tensor& input) const {
  if (layers_.empty()) throw InvalidArgument("empty network");
  Tensor x = as_matrix(input);
  for (const auto& layer : layers_) x = layer.forward(x);
  if (input.rank() == 1) x = as_vector(std::move(x));
  return x;
}

NetworkGrads Network::backward(const ForwardCache& cache, const Tensor& grad_output) const {
  if (cache.state_token != state_token_ || cache.layers.size() != layers_.size()) {
    throw StaleCache("forward cache does not match the network's current parameters");
  }
  Tensor g = as_matrix(grad_output);
  NetworkGrads grads;
  grads.layers.resize(layers_.size());
  for (std::size_t i = layers_.size(); i-- > 0;) {
    g = layers_[i].backward(cache.layers[i], g, grads.layers[i]);
  }
  if (grad_output.rank() == 1) g = as_vector(std::move(g));
  grads.input = std::move(g);
  return grads;
}

}  // namespace geofuse::nn
