#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "geofuse/micronet/tensor.hpp"

namespace geofuse::nn {

inline constexpr double kLogitClampEps = 1e-7;

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // same shape as the network output
};

// Max-subtracted softmax. Output sums to 1.
std::vector<double> softmax(std::span<const double> logits);
Tensor softmax_rows(const Tensor& logits);

// Mean cross-entropy over the rows of [batch x C] logits; grad is
// (softmax - onehot) / batch.
LossResult softmax_xent(const Tensor& logits, std::span<const std::size_t> labels);
// Rank-1 logits, a single label.
LossResult softmax_xent(const Tensor& logits, std::size_t label);

// sum (out - target)^2; grad 2 (out - target).
LossResult squared_error(const Tensor& output, const Tensor& target);

double logistic(double x);
// log(p / (1 - p)) with p clamped to [eps, 1 - eps].
double inverse_logistic(double p, double eps = kLogitClampEps);

}  // namespace geofuse::nn
