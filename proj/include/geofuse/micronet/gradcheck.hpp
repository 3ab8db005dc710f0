#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>

#include "geofuse/micronet/loss.hpp"
#include "geofuse/micronet/network.hpp"

namespace geofuse::nn {

inline constexpr double kGradCheckStep = 1e-5;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;  // "<slot>[<index>]"
  std::size_t checked = 0;
};

// |a - n| / max(|a|, |n|, floor). The floor keeps gradients that are zero
// up to rounding from reporting huge relative errors.
double relative_error(double analytic, double numeric, double floor = 1e-6);

// Central differences on every entry of every slot, restoring each value
// after probing. loss() must read the current parameter values.
GradCheckResult check_gradients(std::span<const ParamRef> params,
                                std::span<const std::span<const double>> analytic,
                                const std::function<double()>& loss, double h = kGradCheckStep);

using OutputLoss = std::function<LossResult(const Tensor& output)>;

// Gradient check of a whole network under a loss on its output.
GradCheckResult grad_check(const Network& net, const Tensor& input, const OutputLoss& loss,
                           double h = kGradCheckStep);

}  // namespace geofuse::nn
