#include "geofuse/micronet/train.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "geofuse/error.hpp"
#include "geofuse/micronet/loss.hpp"

namespace geofuse::nn {

void TrainConfig::validate() const {
  optimizer.validate();
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (epochs <= 0) throw ConfigError("epoch count must be positive");
}

EpochShuffler::EpochShuffler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
}

const std::vector<std::size_t>& EpochShuffler::next() {
  std::shuffle(order_.begin(), order_.end(), rng_);
  return order_;
}

Tensor gather_rows(const Tensor& source, std::span<const std::size_t> rows) {
  const std::size_t cols = source.cols();
  Tensor out = Tensor::matrix(rows.size(), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto src = source.row(rows[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

TrainHistory train_classifier(Network& net, const Tensor& inputs,
                              std::span<const std::size_t> labels, const TrainConfig& config,
                              const Tensor& offsets) {
  config.validate();
  if (inputs.rank() != 2 || inputs.rows() == 0) throw DataError("training set is empty");
  const std::size_t n = inputs.rows();
  if (labels.size() != n) throw ShapeMismatch("one label per training row required");
  const bool has_offsets = offsets.size() != 0;
  if (has_offsets && (offsets.rank() != 2 || offsets.rows() != n ||
                      offsets.cols() != net.output_dim())) {
    throw ShapeMismatch("offsets must be [n x C]");
  }

  Optimizer opt(config.optimizer);
  EpochShuffler shuffler(n, config.seed);
  TrainHistory history;
  std::vector<std::size_t> batch_labels;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    opt.set_epoch(epoch);
    const auto& order = shuffler.next();
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      batch_labels.clear();
      for (std::size_t i : idx) batch_labels.push_back(labels[i]);

      const ForwardCache cache = net.forward(gather_rows(inputs, idx));
      Tensor logits = cache.output;
      if (has_offsets) {
        for (std::size_t r = 0; r < idx.size(); ++r) {
          auto row = logits.row(r);
          const auto off = offsets.row(idx[r]);
          for (std::size_t c = 0; c < row.size(); ++c) row[c] += off[c];
        }
      }
      const LossResult loss = softmax_xent(logits, batch_labels);
      loss_sum += loss.loss * static_cast<double>(idx.size());
      const NetworkGrads grads = net.backward(cache, loss.grad);
      const auto params = net.parameters();
      opt.step(params, grads.spans());
    }
    history.epoch_loss.push_back(loss_sum / static_cast<double>(n));
    spdlog::debug("epoch {} loss {:.6f} lr {}", epoch, history.epoch_loss.back(),
                  opt.current_learning_rate());
  }
  return history;
}

}  // namespace geofuse::nn
