#include "geofuse/geo_fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "geofuse/error.hpp"
#include "geofuse/micronet/loss.hpp"
#include "geofuse/spatial_priors.hpp"

namespace geofuse::fusion {

GeoNet GeoNet::create(std::size_t num_labels, std::uint64_t seed,
                      std::span<const std::size_t> hidden) {
  return GeoNet{nn::Network::mlp(2, hidden, num_labels, nn::Activation::relu,
                                 nn::Activation::identity, seed)};
}

nn::Tensor GeoNet::logits(std::span<const GeoPoint> geo) const {
  return network.predict(geo_inputs(geo));
}

std::vector<double> GeoNet::logits(const GeoPoint& geo) const {
  const GeoPoint one[] = {geo};
  return logits(one).values();
}

nn::Tensor geo_inputs(std::span<const GeoPoint> geo) {
  nn::Tensor out = nn::Tensor::matrix(geo.size(), 2);
  for (std::size_t i = 0; i < geo.size(); ++i) {
    const NormalizedGeo g = normalize(geo[i]);
    out(i, 0) = g.x;
    out(i, 1) = g.y;
  }
  return out;
}

nn::Tensor feature_matrix(const Dataset& data) {
  nn::Tensor out = nn::Tensor::matrix(data.size(), data.feature_dim);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& f = data.observations[i].features;
    if (f.size() != data.feature_dim) throw DataError("feature dimension mismatch");
    std::copy(f.begin(), f.end(), out.row(i).begin());
  }
  return out;
}

nn::Tensor base_probabilities(const nn::Network& base, const nn::Tensor& features) {
  return nn::softmax_rows(base.predict(features));
}

nn::Tensor base_logits(const nn::Tensor& base_probs) {
  nn::Tensor out = base_probs;
  for (double& v : out.values()) v = nn::inverse_logistic(v);
  return out;
}

std::vector<double> fuse_logits(std::span<const double> base_probs,
                                std::span<const double> geo_logits) {
  if (base_probs.size() != geo_logits.size()) {
    throw ShapeMismatch(fmt::format("base has {} labels, geo net {}", base_probs.size(),
                                    geo_logits.size()));
  }
  std::vector<double> fused(base_probs.size());
  for (std::size_t l = 0; l < fused.size(); ++l) {
    if (!(base_probs[l] >= 0.0 && base_probs[l] <= 1.0)) {
      throw InvalidArgument(fmt::format("base probability {} outside [0, 1]", base_probs[l]));
    }
    fused[l] = nn::inverse_logistic(base_probs[l]) + geo_logits[l];
  }
  return fused;
}

double oracle_fused_posterior(double p, double log_R) {
  constexpr double lo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(1.0, 0.0);
  p = std::clamp(p, lo, hi);
  return nn::logistic(std::log(p) - std::log1p(-p) + log_R);
}

std::vector<double> oracle_fused_posterior(std::span<const double> p,
                                           std::span<const double> log_R) {
  if (p.size() != log_R.size()) throw ShapeMismatch("posterior inputs differ in length");
  std::vector<double> out(p.size());
  for (std::size_t l = 0; l < p.size(); ++l) out[l] = oracle_fused_posterior(p[l], log_R[l]);
  return out;
}

PostprocConfig::PostprocConfig() {
  train.optimizer.kind = nn::OptimizerKind::sgd;
  train.optimizer.learning_rate = 0.02;
  train.batch_size = 32;
  train.epochs = 30;
}

nn::Tensor FusionModel::base_probs(const nn::Tensor& features) const {
  return base_probabilities(base, features);
}

PostprocResult train_postproc(const Dataset& data, const nn::Network& base,
                              const PostprocConfig& config) {
  if (data.empty()) throw DataError("post-processing training set is empty");
  data.validate();
  if (base.output_dim() != data.num_labels) {
    throw DataError(fmt::format("base classifier has {} labels, dataset {}", base.output_dim(),
                                data.num_labels));
  }
  const nn::Tensor offsets = base_logits(base_probabilities(base, feature_matrix(data)));
  const auto locations = data.locations();
  const auto labels = data.labels();

  PostprocResult result{GeoNet::create(data.num_labels, config.train.seed, config.hidden), {}};
  result.history = nn::train_classifier(result.geo.network, geo_inputs(locations), labels,
                                        config.train, offsets);
  return result;
}

FusedPrediction predict_fused(const GeoNet& geo, std::span<const double> base_probs,
                              const GeoPoint& g) {
  const auto fused = fuse_logits(base_probs, geo.logits(g));
  FusedPrediction out;
  out.probs = nn::softmax(fused);
  out.label = argmax(fused);
  return out;
}

nn::Tensor fused_scores(const GeoNet& geo, const nn::Tensor& base_probs,
                        std::span<const GeoPoint> geo_points) {
  if (base_probs.rows() != geo_points.size()) throw ShapeMismatch("one location per row required");
  nn::Tensor logits = geo.logits(geo_points);
  nn::require_same_shape(logits, base_probs, "fused_scores");
  const nn::Tensor offsets = base_logits(base_probs);
  for (std::size_t k = 0; k < logits.size(); ++k) logits[k] += offsets[k];
  return nn::softmax_rows(logits);
}

FusedLoss fused_loss(const GeoNet& geo, const nn::Tensor& base_logit_rows,
                     const nn::Tensor& geo_input_rows, std::span<const std::size_t> labels) {
  const nn::ForwardCache cache = geo.network.forward(geo_input_rows);
  nn::Tensor logits = cache.output;
  nn::require_same_shape(logits, base_logit_rows, "fused_loss");
  for (std::size_t k = 0; k < logits.size(); ++k) logits[k] += base_logit_rows[k];
  const nn::LossResult loss = nn::softmax_xent(logits, labels);
  return FusedLoss{loss.loss, geo.network.backward(cache, loss.grad)};
}

nn::Json postproc_to_json(const GeoNet& geo, const PostprocConfig& config) {
  nn::Json doc = nn::checkpoint_header("postproc", config.train.seed, config.train.optimizer);
  doc["batch_size"] = config.train.batch_size;
  doc["epochs"] = config.train.epochs;
  doc["geo_net"] = nn::network_to_json(geo.network);
  return doc;
}

GeoNet postproc_from_json(const nn::Json& doc) {
  nn::check_checkpoint(doc, "postproc");
  if (!doc.contains("geo_net")) throw ConfigError("postproc checkpoint lacks 'geo_net'");
  GeoNet geo{nn::network_from_json(doc.at("geo_net"))};
  if (geo.network.input_dim() != 2) throw ConfigError("geo net must take 2 inputs");
  return geo;
}

}  // namespace geofuse::fusion
