#include "geofuse/micronet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "geofuse/error.hpp"

namespace geofuse::nn {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult check_gradients(std::span<const ParamRef> params,
                                std::span<const std::span<const double>> analytic,
                                const std::function<double()>& loss, double h) {
  if (params.size() != analytic.size()) throw ShapeMismatch("gradient slots do not match params");
  GradCheckResult result;
  for (std::size_t s = 0; s < params.size(); ++s) {
    auto values = params[s].values;
    if (values.size() != analytic[s].size()) {
      throw ShapeMismatch(fmt::format("gradient size mismatch for '{}'", params[s].name));
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss();
      values[i] = saved - h;
      const double down = loss();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(analytic[s][i], numeric);
      if (err > result.max_relative_error || result.checked == 0) {
        result.max_relative_error = err;
        result.worst_parameter = fmt::format("{}[{}]", params[s].name, i);
      }
      ++result.checked;
    }
  }
  return result;
}

GradCheckResult grad_check(const Network& net, const Tensor& input, const OutputLoss& loss,
                           double h) {
  Network probe = net;
  const ForwardCache cache = probe.forward(input);
  const LossResult at = loss(cache.output);
  const NetworkGrads grads = probe.backward(cache, at.grad);
  const auto spans = grads.spans();
  const auto params = probe.parameters();
  return check_gradients(params, spans,
                         [&] { return loss(probe.predict(input)).loss; }, h);
}

}  // namespace geofuse::nn
