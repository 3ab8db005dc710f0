#include "geofuse/spatial_priors.hpp"

#include <cmath>

#include <fmt/format.h>

#include "geofuse/error.hpp"

namespace geofuse {
namespace {

void check_scores(std::span<const double> base_probs, const LabelHistogram& hist) {
  if (base_probs.size() != hist.counts.size()) {
    throw ShapeMismatch(fmt::format("score vector has {} labels, histogram has {}",
                                    base_probs.size(), hist.counts.size()));
  }
  for (double p : base_probs) {
    if (!std::isfinite(p) || p < 0.0) {
      throw InvalidArgument(fmt::format("base score {} is not a non-negative finite value", p));
    }
  }
}

std::optional<std::vector<double>> fallback_scores(std::span<const double> base_probs,
                                                   EmptyFallback fallback) {
  if (fallback == EmptyFallback::abstain) return std::nullopt;
  return std::vector<double>(base_probs.begin(), base_probs.end());
}

// A rescored vector with no positive entry carries no ranking; treat it
// like an empty neighbourhood.
std::optional<std::vector<double>> finish(std::vector<double> scores,
                                          std::span<const double> base_probs,
                                          EmptyFallback fallback) {
  for (double s : scores) {
    if (s > 0.0) return scores;
  }
  return fallback_scores(base_probs, fallback);
}

}  // namespace

void PriorConfig::validate() const {
  if (!(theta_miles > 0.0)) {
    throw ConfigError(fmt::format("prior radius must be positive, got {}", theta_miles));
  }
  if (!(smoothing_alpha >= 0.0) || !std::isfinite(smoothing_alpha)) {
    throw ConfigError(fmt::format("smoothing alpha must be >= 0, got {}", smoothing_alpha));
  }
}

PriorContext PriorContext::from_training(std::span<const GeoPoint> locations,
                                         std::span<const std::size_t> labels,
                                         std::size_t num_labels, double cell_size_deg) {
  if (locations.size() != labels.size()) {
    throw ShapeMismatch("training locations and labels differ in length");
  }
  std::vector<std::pair<PointId, GeoPoint>> points;
  points.reserve(locations.size());
  PriorContext ctx;
  ctx.num_labels = num_labels;
  for (std::size_t i = 0; i < locations.size(); ++i) {
    if (labels[i] >= num_labels) {
      throw DataError(fmt::format("training label {} out of range [0, {})", labels[i], num_labels));
    }
    points.emplace_back(i, locations[i]);
    ctx.labels.emplace(i, labels[i]);
  }
  ctx.index = SpatialIndex::build(points, cell_size_deg);
  return ctx;
}

LabelHistogram local_histogram(const SpatialIndex& index,
                               const std::unordered_map<PointId, std::size_t>& labels,
                               std::size_t num_labels, const GeoPoint& g, double theta_miles) {
  LabelHistogram hist;
  hist.counts.assign(num_labels, 0);
  hist.theta_miles = theta_miles;
  hist.center = g;
  for (PointId id : index.radius_query(g, theta_miles)) {
    auto it = labels.find(id);
    if (it == labels.end()) throw DataError(fmt::format("point id {} has no label", id));
    if (it->second >= num_labels) {
      throw DataError(fmt::format("label {} of point {} out of range", it->second, id));
    }
    ++hist.counts[it->second];
    ++hist.total;
  }
  return hist;
}

std::optional<std::vector<double>> bayes_rescore(std::span<const double> base_probs,
                                                 const LabelHistogram& hist, double alpha,
                                                 EmptyFallback fallback) {
  check_scores(base_probs, hist);
  if (!(alpha >= 0.0)) throw InvalidArgument("smoothing alpha must be non-negative");
  const double denom =
      static_cast<double>(hist.total) + alpha * static_cast<double>(hist.counts.size());
  if (denom <= 0.0) return fallback_scores(base_probs, fallback);

  std::vector<double> scores(base_probs.size());
  for (std::size_t l = 0; l < scores.size(); ++l) {
    scores[l] = base_probs[l] * ((static_cast<double>(hist.counts[l]) + alpha) / denom);
  }
  return finish(std::move(scores), base_probs, fallback);
}

std::optional<std::vector<double>> whitelist_gate(std::span<const double> base_probs,
                                                  const LabelHistogram& hist,
                                                  EmptyFallback fallback) {
  check_scores(base_probs, hist);
  if (hist.total == 0) return fallback_scores(base_probs, fallback);
  std::vector<double> scores(base_probs.size());
  for (std::size_t l = 0; l < scores.size(); ++l) {
    scores[l] = hist.counts[l] > 0 ? base_probs[l] : 0.0;
  }
  return finish(std::move(scores), base_probs, fallback);
}

PriorPrediction predict_with_prior(std::span<const double> base_probs, const PriorContext& ctx,
                                   const GeoPoint& g, const PriorConfig& config) {
  config.validate();
  const LabelHistogram hist =
      local_histogram(ctx.index, ctx.labels, ctx.num_labels, g, config.theta_miles);
  auto scores = config.mode == PriorMode::bayesian
                    ? bayes_rescore(base_probs, hist, config.smoothing_alpha, config.empty_fallback)
                    : whitelist_gate(base_probs, hist, config.empty_fallback);
  PriorPrediction out;
  if (!scores) return out;
  out.label = argmax(*scores);
  out.scores = std::move(*scores);
  return out;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

}  // namespace geofuse
