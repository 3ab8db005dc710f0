#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "geofuse/dataset.hpp"
#include "geofuse/micronet/checkpoint.hpp"
#include "geofuse/micronet/network.hpp"
#include "geofuse/micronet/train.hpp"

namespace geofuse::featmod {

// How geo features gamma/beta act on a hidden layer with pre-activation F.
// R = relu, S = sigmoid.
enum class Variant {
  film,                // R(gamma * F + beta)
  relu_gamma_add,      // R(gamma) * R(F) + R(beta)
  sigmoid_gamma_add,   // S(gamma) * R(F) + R(beta)
  sigmoid_gamma_only,  // S(gamma) * R(F)
  add_relu_beta,       // R(F) + R(beta)
  add_raw_beta,        // R(F) + beta
};

inline constexpr std::array<Variant, 6> kAllVariants = {
    Variant::film,          Variant::relu_gamma_add, Variant::sigmoid_gamma_add,
    Variant::sigmoid_gamma_only, Variant::add_relu_beta, Variant::add_raw_beta};

std::string_view to_string(Variant v);
Variant variant_from_string(std::string_view name);
// Human-readable formula, e.g. "R(F) + beta".
std::string_view formula(Variant v);

bool uses_gamma(Variant v);
bool uses_beta(Variant v);
// Whether a freshly initialized net computes exactly the base function.
// False for the sigmoid-gamma variants, which start at S(0) = 0.5.
bool starts_at_identity(Variant v);

// Elementwise on [batch x width]. gamma/beta may be empty tensors when the
// variant does not use them.
nn::Tensor apply_variant(Variant v, const nn::Tensor& pre, const nn::Tensor& post,
                         const nn::Tensor& gamma, const nn::Tensor& beta);

struct VariantGrads {
  nn::Tensor pre;  // total gradient w.r.t. the pre-activation F
  nn::Tensor gamma;
  nn::Tensor beta;
};
VariantGrads variant_backward(Variant v, const nn::Tensor& pre, const nn::Tensor& gamma,
                              const nn::Tensor& beta, const nn::Tensor& grad_out);

inline const std::vector<std::size_t> kTrunkWidths = {128, 256};

// Upper half of the hidden layers: index >= hidden / 2.
std::vector<bool> default_layer_mask(std::size_t hidden_layers);

// A base classifier (relu hidden layers, linear logits) whose masked hidden
// layers are modulated by geo features. Each geo trunk maps normalized
// (lat, lon) through 128 -> 256 relu units; a linear projection per masked
// layer reshapes the trunk output to that layer's width.
struct ModulatedNet {
  Variant variant = Variant::add_raw_beta;
  nn::Network base;
  std::optional<nn::Network> beta_trunk;
  std::optional<nn::Network> gamma_trunk;
  std::vector<bool> layer_mask;
  std::vector<std::optional<nn::DenseLayer>> beta_proj;   // one slot per hidden layer
  std::vector<std::optional<nn::DenseLayer>> gamma_proj;  // one slot per hidden layer
  std::uint64_t state_token = 0;

  // Copies base, builds trunks from seed and identity-initializes the
  // projections. An empty mask means default_layer_mask.
  static ModulatedNet create(const nn::Network& base, Variant variant, std::uint64_t seed,
                             std::vector<bool> layer_mask = {});

  std::size_t hidden_layers() const { return base.depth() - 1; }
  std::size_t num_labels() const { return base.output_dim(); }
  std::size_t parameter_count() const;

  // Order: base layers, beta trunk, gamma trunk, beta projections, gamma
  // projections. Invalidates outstanding caches.
  std::vector<nn::ParamRef> parameters();
  // Identifies the current parameter state of every component.
  std::vector<std::uint64_t> state_tokens() const;
};

// Zero projection weights; beta biases 0, gamma biases 1 for film and
// relu_gamma_add, 0 for the sigmoid variants.
void beta_zero_init(ModulatedNet& net);

struct ModulatedCache {
  std::vector<std::uint64_t> tokens;  // parameter-state tokens at forward time
  std::vector<nn::LayerCache> base_layers;
  std::optional<nn::ForwardCache> beta_trunk;
  std::optional<nn::ForwardCache> gamma_trunk;
  std::vector<nn::LayerCache> beta_proj;   // empty caches for unmasked layers
  std::vector<nn::LayerCache> gamma_proj;
  std::vector<nn::Tensor> hidden_out;      // per hidden layer, after modulation
  nn::Tensor logits;
};

// features [n x D], geo [n x 2] normalized coordinates.
ModulatedCache forward_modulated(const ModulatedNet& net, const nn::Tensor& features,
                                 const nn::Tensor& geo);
nn::Tensor predict_modulated(const ModulatedNet& net, const nn::Tensor& features,
                             const nn::Tensor& geo);

struct ModulatedGrads {
  nn::NetworkGrads base;
  std::optional<nn::NetworkGrads> beta_trunk;
  std::optional<nn::NetworkGrads> gamma_trunk;
  std::vector<std::optional<nn::LayerGrads>> beta_proj;
  std::vector<std::optional<nn::LayerGrads>> gamma_proj;

  // Same order as ModulatedNet::parameters().
  std::vector<std::span<const double>> spans() const;
};

ModulatedGrads backward_modulated(const ModulatedNet& net, const ModulatedCache& cache,
                                  const nn::Tensor& grad_logits);

struct JointConfig {
  nn::TrainConfig train;  // defaults: RMSprop lr 0.0045, x0.94 every 4 epochs
  std::vector<bool> layer_mask;

  JointConfig();
};

struct JointResult {
  ModulatedNet net;
  nn::TrainHistory history;
};

// All parameters (base copy, trunks, projections) train together.
JointResult train_joint(const Dataset& data, const nn::Network& init_base, Variant variant,
                        const JointConfig& config);

nn::Json featmod_to_json(const ModulatedNet& net, const JointConfig& config);
ModulatedNet featmod_from_json(const nn::Json& doc);

}  // namespace geofuse::featmod
