#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "geofuse/dataset.hpp"
#include "geofuse/micronet/tensor.hpp"
#include "geofuse/spatial_priors.hpp"

namespace geofuse::eval {

using Json = nlohmann::ordered_json;

inline constexpr std::size_t kDefaultHeadThreshold = 100;
// Covers the whole sphere.
inline constexpr double kGlobalRadius = std::numeric_limits<double>::infinity();

// True label ranks among the k highest scores; equal scores rank the lower
// index first. An empty score vector (abstention) is never a hit.
bool in_topk(std::span<const double> scores, std::size_t label, std::size_t k);

double topk_accuracy(std::span<const std::vector<double>> scores,
                     std::span<const std::size_t> labels, std::size_t k);

struct HeadTail {
  std::vector<std::size_t> head;  // train count >= threshold
  std::vector<std::size_t> tail;
};
HeadTail head_tail_split(std::span<const std::size_t> train_counts, std::size_t threshold);

struct EvalReport {
  std::string model;
  double top1 = 0.0;
  double top5 = 0.0;
  std::optional<double> head_top1;  // empty when no eval example has a head label
  std::optional<double> tail_top1;
  std::size_t n_examples = 0;
  std::size_t n_head = 0;
  std::size_t n_tail = 0;
  std::size_t abstained = 0;
  std::size_t head_threshold = kDefaultHeadThreshold;
};

EvalReport evaluate(std::string model, std::span<const std::vector<double>> scores,
                    std::span<const std::size_t> labels,
                    std::span<const std::size_t> train_counts,
                    std::size_t head_threshold = kDefaultHeadThreshold);

// Score rows of an [n x C] tensor.
std::vector<std::vector<double>> score_rows(const nn::Tensor& scores);

struct ModelPredictions {
  std::string name;
  std::size_t num_labels = 0;
  std::vector<std::vector<double>> scores;  // one row per eval example, empty = abstain
};

// One report per model, in input order. Throws DataError when a model's
// label count or row count disagrees with the eval set.
std::vector<EvalReport> compare_models(std::span<const ModelPredictions> models,
                                       const Dataset& eval, const Dataset& train,
                                       std::size_t head_threshold = kDefaultHeadThreshold);

struct SweepRow {
  double radius_miles = 0.0;
  double top1 = 0.0;
  std::size_t abstained = 0;
};

struct SweepResult {
  PriorMode mode = PriorMode::whitelist;
  double image_only_top1 = 0.0;
  std::size_t n_examples = 0;
  std::vector<SweepRow> rows;

  // First row with the highest accuracy.
  const SweepRow& best() const;
};

// Priors come from the train split; accuracy is measured on the eval split.
// base_probs are the image-only scores for the eval observations.
SweepResult radius_sweep(const nn::Tensor& base_probs, const Dataset& train, const Dataset& eval,
                         std::span<const double> radii, const PriorConfig& config);

// Scores of one prior-based model over the whole eval split.
ModelPredictions prior_predictions(std::string name, const nn::Tensor& base_probs,
                                   const Dataset& train, const Dataset& eval,
                                   const PriorConfig& config);

std::string to_string(PriorMode mode);
PriorMode prior_mode_from_string(const std::string& name);

Json report_to_json(const EvalReport& report);
Json reports_to_json(std::span<const EvalReport> reports);
Json sweep_to_json(const SweepResult& sweep);
std::string report_table(std::span<const EvalReport> reports);
std::string sweep_table(const SweepResult& sweep);

// "global" for an infinite radius, else the number.
std::string format_radius(double miles);
double parse_radius(const std::string& text);

}  // namespace geofuse::eval
