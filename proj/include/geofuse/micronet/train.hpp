#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "geofuse/micronet/network.hpp"
#include "geofuse/micronet/optimizer.hpp"

namespace geofuse::nn {

struct TrainConfig {
  OptimizerConfig optimizer;
  std::size_t batch_size = 32;
  int epochs = 30;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainHistory {
  std::vector<double> epoch_loss;  // mean cross-entropy per epoch
};

// Per-epoch example order. A fresh permutation each epoch from one rng.
class EpochShuffler {
 public:
  EpochShuffler(std::size_t n, std::uint64_t seed);
  const std::vector<std::size_t>& next();

 private:
  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
};

// Rows of source at the given indices.
Tensor gather_rows(const Tensor& source, std::span<const std::size_t> rows);

// Minimizes softmax cross-entropy of net(inputs) + offsets. offsets, when
// non-empty, is a fixed [n x C] tensor that receives no gradient.
TrainHistory train_classifier(Network& net, const Tensor& inputs,
                              std::span<const std::size_t> labels, const TrainConfig& config,
                              const Tensor& offsets = Tensor());

}  // namespace geofuse::nn
