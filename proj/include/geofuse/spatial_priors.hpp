#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "geofuse/geodesy.hpp"

namespace geofuse {

// Label counts of the training observations within theta_miles of center.
struct LabelHistogram {
  std::vector<std::size_t> counts;
  std::size_t total = 0;
  double theta_miles = 0.0;
  GeoPoint center;
};

enum class PriorMode { bayesian, whitelist };
enum class EmptyFallback { image_only, abstain };

struct PriorConfig {
  PriorMode mode = PriorMode::whitelist;
  double theta_miles = 100.0;
  double smoothing_alpha = 0.0;
  EmptyFallback empty_fallback = EmptyFallback::image_only;

  void validate() const;
};

// Training-side lookup: a spatial index over training sightings plus the
// label of each indexed id.
struct PriorContext {
  SpatialIndex index;
  std::unordered_map<PointId, std::size_t> labels;
  std::size_t num_labels = 0;

  // Indexes locations[i] under id i.
  static PriorContext from_training(std::span<const GeoPoint> locations,
                                    std::span<const std::size_t> labels,
                                    std::size_t num_labels, double cell_size_deg = 2.0);
};

LabelHistogram local_histogram(const SpatialIndex& index,
                               const std::unordered_map<PointId, std::size_t>& labels,
                               std::size_t num_labels, const GeoPoint& g, double theta_miles);

// score[l] = base[l] * (counts[l] + alpha) / (total + alpha * C).
// std::nullopt means abstain (empty histogram, alpha = 0, abstain fallback).
std::optional<std::vector<double>> bayes_rescore(std::span<const double> base_probs,
                                                 const LabelHistogram& hist, double alpha,
                                                 EmptyFallback fallback = EmptyFallback::image_only);

// score[l] = base[l] if label l was seen within the radius, else 0.
std::optional<std::vector<double>> whitelist_gate(std::span<const double> base_probs,
                                                  const LabelHistogram& hist,
                                                  EmptyFallback fallback = EmptyFallback::image_only);

struct PriorPrediction {
  std::optional<std::size_t> label;  // empty when abstaining
  std::vector<double> scores;        // empty when abstaining
};

PriorPrediction predict_with_prior(std::span<const double> base_probs, const PriorContext& ctx,
                                   const GeoPoint& g, const PriorConfig& config);

// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

}  // namespace geofuse
