#include "geofuse/micronet/optimizer.hpp"

#include <cmath>

#include <fmt/format.h>

#include "geofuse/error.hpp"

namespace geofuse::nn {

std::string_view to_string(OptimizerKind k) {
  return k == OptimizerKind::sgd ? "sgd" : "rmsprop";
}

OptimizerKind optimizer_kind_from_string(std::string_view name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "rmsprop") return OptimizerKind::rmsprop;
  throw ConfigError(fmt::format("unknown optimizer '{}'", name));
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError(fmt::format("learning rate must be positive, got {}", learning_rate));
  }
  if (!(decay_rate > 0.0) || decay_rate > 1.0) {
    throw ConfigError(fmt::format("decay rate must be in (0, 1], got {}", decay_rate));
  }
  if (decay_every_epochs < 0) throw ConfigError("decay_every_epochs must be >= 0");
  if (!(rmsprop_rho > 0.0 && rmsprop_rho < 1.0)) {
    throw ConfigError(fmt::format("rmsprop rho must be in (0, 1), got {}", rmsprop_rho));
  }
  if (!(rmsprop_epsilon > 0.0)) throw ConfigError("rmsprop epsilon must be positive");
}

double OptimizerConfig::learning_rate_at(int epoch) const {
  if (decay_every_epochs <= 0) return learning_rate;
  return learning_rate * std::pow(decay_rate, epoch / decay_every_epochs);
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config) { config_.validate(); }

void Optimizer::step(std::span<const ParamRef> params,
                     std::span<const std::span<const double>> grads) {
  if (params.size() != grads.size()) {
    throw ShapeMismatch(fmt::format("{} parameter slots but {} gradients", params.size(),
                                    grads.size()));
  }
  for (std::size_t s = 0; s < params.size(); ++s) {
    if (params[s].values.size() != grads[s].size()) {
      throw ShapeMismatch(fmt::format("gradient for '{}' has {} values, expected {}",
                                      params[s].name, grads[s].size(), params[s].values.size()));
    }
    for (double g : grads[s]) {
      if (!std::isfinite(g)) {
        throw NumericError(fmt::format("non-finite gradient for parameter '{}'", params[s].name));
      }
    }
  }

  const double lr = current_learning_rate();
  if (config_.kind == OptimizerKind::sgd) {
    for (std::size_t s = 0; s < params.size(); ++s) {
      auto p = params[s].values;
      const auto g = grads[s];
      for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
    }
    return;
  }

  if (accum_.empty()) {
    accum_.resize(params.size());
    for (std::size_t s = 0; s < params.size(); ++s) accum_[s].assign(params[s].values.size(), 0.0);
  } else if (accum_.size() != params.size()) {
    throw ShapeMismatch("parameter layout changed between optimizer steps");
  }
  const double rho = config_.rmsprop_rho;
  const double eps = config_.rmsprop_epsilon;
  for (std::size_t s = 0; s < params.size(); ++s) {
    auto p = params[s].values;
    const auto g = grads[s];
    auto& a = accum_[s];
    if (a.size() != p.size()) throw ShapeMismatch("parameter layout changed between steps");
    for (std::size_t i = 0; i < p.size(); ++i) {
      a[i] = rho * a[i] + (1.0 - rho) * g[i] * g[i];
      p[i] -= lr * g[i] / std::sqrt(a[i] + eps);
    }
  }
}

}  // namespace geofuse::nn
