#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "geofuse/dataset.hpp"
#include "geofuse/geodesy.hpp"
#include "geofuse/micronet/checkpoint.hpp"
#include "geofuse/micronet/network.hpp"
#include "geofuse/micronet/train.hpp"

namespace geofuse::fusion {

inline const std::vector<std::size_t> kGeoNetHidden = {256, 128, 128};

// Normalized (lat, lon) -> relu hidden stack -> linear logits over C labels.
struct GeoNet {
  nn::Network network;

  static GeoNet create(std::size_t num_labels, std::uint64_t seed,
                       std::span<const std::size_t> hidden = kGeoNetHidden);
  std::size_t num_labels() const { return network.output_dim(); }
  // [n x C] logits.
  nn::Tensor logits(std::span<const GeoPoint> geo) const;
  std::vector<double> logits(const GeoPoint& geo) const;
};

// [n x 2] rows of normalize(g).
nn::Tensor geo_inputs(std::span<const GeoPoint> geo);

// Softmax outputs of an image-only classifier over [n x D] features.
nn::Tensor base_probabilities(const nn::Network& base, const nn::Tensor& features);
nn::Tensor feature_matrix(const Dataset& data);

// Per-label inverse logistic of (clamped) base probabilities.
nn::Tensor base_logits(const nn::Tensor& base_probs);

// fused[l] = logit(clamp(base_probs[l])) + geo_logits[l].
std::vector<double> fuse_logits(std::span<const double> base_probs,
                                std::span<const double> geo_logits);

// sigma(logit(p) + log_R). p is only clamped to the open interval (0, 1),
// so the identity with the exact posterior holds to rounding.
double oracle_fused_posterior(double p_label_given_image, double log_R);
std::vector<double> oracle_fused_posterior(std::span<const double> p_label_given_image,
                                           std::span<const double> log_R);

struct PostprocConfig {
  std::vector<std::size_t> hidden = kGeoNetHidden;
  nn::TrainConfig train;  // defaults: SGD lr 0.02, no decay, batch 32, 30 epochs

  PostprocConfig();
};

// A frozen base classifier plus the geo net whose logits are added to it.
struct FusionModel {
  nn::Network base;
  GeoNet geo;

  nn::Tensor base_probs(const nn::Tensor& features) const;
};

struct PostprocResult {
  GeoNet geo;
  nn::TrainHistory history;
};

// Trains only the geo net; base is read through a const reference and is
// never written.
PostprocResult train_postproc(const Dataset& data, const nn::Network& base,
                              const PostprocConfig& config);

struct FusedPrediction {
  std::size_t label = 0;
  std::vector<double> probs;  // softmax of fused logits
};

FusedPrediction predict_fused(const GeoNet& geo, std::span<const double> base_probs,
                              const GeoPoint& g);

// [n x C] fused softmax scores for a batch.
nn::Tensor fused_scores(const GeoNet& geo, const nn::Tensor& base_probs,
                        std::span<const GeoPoint> geo_points);

// Cross-entropy of fused logits and its gradient w.r.t. the geo net, used by
// training and by gradient checks.
struct FusedLoss {
  double loss = 0.0;
  nn::NetworkGrads grads;
};
FusedLoss fused_loss(const GeoNet& geo, const nn::Tensor& base_logit_rows,
                     const nn::Tensor& geo_input_rows, std::span<const std::size_t> labels);

nn::Json postproc_to_json(const GeoNet& geo, const PostprocConfig& config);
GeoNet postproc_from_json(const nn::Json& doc);

}  // namespace geofuse::fusion
