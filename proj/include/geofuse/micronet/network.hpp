#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "geofuse/micronet/tensor.hpp"

namespace geofuse::nn {

// Process-wide unique token identifying one parameter state.
std::uint64_t fresh_state_token();

enum class Activation { relu, sigmoid, identity };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view name);

double activate(Activation a, double x);
// Derivative expressed through both pre- and post-activation values.
// relu uses the right derivative at 0 so zero-initialized paths can move.
double activation_grad(Activation a, double pre, double post);

struct LayerCache {
  Tensor input;  // [batch x in]
  Tensor pre;    // [batch x out]
  Tensor post;   // [batch x out]
};

struct LayerGrads {
  Tensor weights;  // [out x in]
  Tensor bias;     // [out]
};

// A mutable view of one parameter array, used by optimizers and
// gradient checks.
struct ParamRef {
  std::string name;
  std::span<double> values;
};

class DenseLayer {
 public:
  DenseLayer() = default;
  // Zero weights and bias.
  DenseLayer(std::size_t in_dim, std::size_t out_dim, Activation activation);
  // Uniform in +-sqrt(6 / (in + out)), zero bias.
  static DenseLayer glorot(std::size_t in_dim, std::size_t out_dim, Activation activation,
                           std::mt19937_64& rng);

  std::size_t in_dim() const noexcept { return in_dim_; }
  std::size_t out_dim() const noexcept { return out_dim_; }
  Activation activation() const noexcept { return activation_; }

  const Tensor& weights() const noexcept { return weights_; }
  const Tensor& bias() const noexcept { return bias_; }
  Tensor& weights() noexcept { return weights_; }
  Tensor& bias() noexcept { return bias_; }

  // x: [batch x in] -> x W^T + b, no activation.
  Tensor affine(const Tensor& x) const;
  // Fills cache when given one.
  Tensor forward(const Tensor& x, LayerCache* cache = nullptr) const;

  // Accumulates into grads (which must be zero-shaped or correctly shaped)
  // and returns the gradient w.r.t. the layer input.
  Tensor backward_from_pre(const LayerCache& cache, const Tensor& grad_pre,
                           LayerGrads& grads) const;
  Tensor backward(const LayerCache& cache, const Tensor& grad_post, LayerGrads& grads) const;

  LayerGrads zero_grads() const;
  void append_params(std::string_view prefix, std::vector<ParamRef>& out);

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;

 private:
  std::size_t in_dim_ = 0;
  std::size_t out_dim_ = 0;
  Activation activation_ = Activation::identity;
  Tensor weights_;
  Tensor bias_;
};

struct ForwardCache {
  std::uint64_t state_token = 0;
  std::vector<LayerCache> layers;
  Tensor output;

  // Post-activation output of layer i.
  const Tensor& tap(std::size_t i) const { return layers.at(i).post; }
};

struct NetworkGrads {
  std::vector<LayerGrads> layers;
  Tensor input;

  // Same order as Network::parameters().
  std::vector<std::span<const double>> spans() const;
};

// Ordered stack of dense layers. Plain value type; copies share no state.
class Network {
 public:
  Network() = default;
  explicit Network(std::vector<DenseLayer> layers);

  // in -> hidden... -> out, glorot initialized from seed.
  static Network mlp(std::size_t in_dim, std::span<const std::size_t> hidden, std::size_t out_dim,
                     Activation hidden_activation, Activation output_activation,
                     std::uint64_t seed);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t depth() const noexcept { return layers_.size(); }
  std::size_t parameter_count() const;

  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  const DenseLayer& layer(std::size_t i) const { return layers_.at(i); }
  // Any mutable access invalidates outstanding forward caches.
  DenseLayer& mutable_layer(std::size_t i);
  std::vector<ParamRef> parameters(std::string_view prefix = "");

  // Input is [batch x in] (or a rank-1 [in] vector, answered in kind).
  ForwardCache forward(const Tensor& input) const;
  Tensor predict(const Tensor& input) const;
  // Throws StaleCache when the parameters changed after the forward pass.
  NetworkGrads backward(const ForwardCache& cache, const Tensor& grad_output) const;

  std::uint64_t state_token() const noexcept { return state_token_; }

  friend bool operator==(const Network& a, const Network& b) { return a.layers_ == b.layers_; }

 private:
  void touch();

  std::vector<DenseLayer> layers_;
  std::uint64_t state_token_ = 0;
};

}  // namespace geofuse::nn
