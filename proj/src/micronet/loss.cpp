#include "geofuse/micronet/loss.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "geofuse/error.hpp"

namespace geofuse::nn {
namespace {

// Fills probs with softmax(logits) and returns log-sum-exp.
double softmax_into(std::span<const double> logits, std::span<double> probs) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - m);
    sum += probs[i];
  }
  for (double& p : probs) p /= sum;
  return m + std::log(sum);
}

}  // namespace

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw InvalidArgument("softmax of an empty vector");
  std::vector<double> out(logits.size());
  softmax_into(logits, out);
  return out;
}

Tensor softmax_rows(const Tensor& logits) {
  Tensor out(logits.shape());
  const std::size_t rows = logits.rows();
  for (std::size_t r = 0; r < rows; ++r) softmax_into(logits.row(r), out.row(r));
  return out;
}

LossResult softmax_xent(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2) throw ShapeMismatch("softmax_xent expects [batch x C] logits");
  const std::size_t batch = logits.rows();
  const std::size_t classes = logits.cols();
  if (labels.size() != batch) throw ShapeMismatch("one label per logits row required");
  if (batch == 0) throw InvalidArgument("softmax_xent over an empty batch");

  LossResult result{0.0, Tensor(logits.shape())};
  const double scale = 1.0 / static_cast<double>(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] >= classes) {
      throw InvalidArgument(fmt::format("label {} out of range [0, {})", labels[b], classes));
    }
    const auto row = logits.row(b);
    auto g = result.grad.row(b);
    const double lse = softmax_into(row, g);
    result.loss += (lse - row[labels[b]]) * scale;
    g[labels[b]] -= 1.0;
    for (double& v : g) v *= scale;
  }
  if (!std::isfinite(result.loss)) throw NumericError("non-finite cross-entropy loss");
  return result;
}

LossResult softmax_xent(const Tensor& logits, std::size_t label) {
  if (logits.rank() != 1) throw ShapeMismatch("expected rank-1 logits");
  const std::size_t labels[] = {label};
  LossResult r = softmax_xent(Tensor({1, logits.size()}, logits.values()), labels);
  r.grad = Tensor({logits.size()}, std::move(r.grad.values()));
  return r;
}

LossResult squared_error(const Tensor& output, const Tensor& target) {
  require_same_shape(output, target, "squared_error");
  LossResult result{0.0, Tensor(output.shape())};
  for (std::size_t i = 0; i < output.size(); ++i) {
    const double d = output[i] - target[i];
    result.loss += d * d;
    result.grad[i] = 2.0 * d;
  }
  return result;
}

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double inverse_logistic(double p, double eps) {
  if (std::isnan(p)) throw NumericError("inverse_logistic of NaN");
  p = std::clamp(p, eps, 1.0 - eps);
  return std::log(p) - std::log1p(-p);
}

}  // namespace geofuse::nn
