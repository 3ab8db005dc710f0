#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "geofuse/micronet/network.hpp"

namespace geofuse::nn {

enum class OptimizerKind { sgd, rmsprop };

std::string_view to_string(OptimizerKind k);
OptimizerKind optimizer_kind_from_string(std::string_view name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double learning_rate = 0.02;
  // Staircase schedule lr * decay_rate^floor(epoch / decay_every_epochs);
  // decay_every_epochs == 0 disables it.
  double decay_rate = 1.0;
  int decay_every_epochs = 0;
  double rmsprop_rho = 0.9;
  double rmsprop_epsilon = 1e-10;

  void validate() const;
  double learning_rate_at(int epoch) const;

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

// SGD: p -= lr * g.
// RMSprop: a = rho * a + (1 - rho) * g^2;  p -= lr * g / sqrt(a + eps),
// with accumulators starting at zero.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config);

  const OptimizerConfig& config() const noexcept { return config_; }
  void set_epoch(int epoch) noexcept { epoch_ = epoch; }
  int epoch() const noexcept { return epoch_; }
  double current_learning_rate() const { return config_.learning_rate_at(epoch_); }

  // params and grads must line up slot for slot, with the same order on
  // every call. Every gradient is checked for finiteness before any
  // parameter moves; a bad one raises NumericError naming the slot.
  void step(std::span<const ParamRef> params, std::span<const std::span<const double>> grads);

 private:
  OptimizerConfig config_;
  int epoch_ = 0;
  std::vector<std::vector<double>> accum_;
};

}  // namespace geofuse::nn
