#include "geofuse/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include <fmt/format.h>

#include "geofuse/error.hpp"

namespace geofuse::eval {
namespace {

Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::string optional_cell(const std::optional<double>& v) {
  return v ? fmt::format("{:.4f}", *v) : std::string("-");
}

}  // namespace

bool in_topk(std::span<const double> scores, std::size_t label, std::size_t k) {
  if (k == 0) throw InvalidArgument("k must be at least 1");
  if (scores.empty()) return false;
  if (label >= scores.size()) {
    throw InvalidArgument(fmt::format("label {} outside {} scores", label, scores.size()));
  }
  const double s = scores[label];
  std::size_t ahead = 0;
  for (std::size_t l = 0; l < scores.size(); ++l) {
    if (scores[l] > s || (scores[l] == s && l < label)) ++ahead;
  }
  return ahead < k;
}

double topk_accuracy(std::span<const std::vector<double>> scores,
                     std::span<const std::size_t> labels, std::size_t k) {
  if (scores.empty()) throw InvalidArgument("top-k accuracy of an empty set");
  if (scores.size() != labels.size()) throw ShapeMismatch("one label per score row required");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) hits += in_topk(scores[i], labels[i], k) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

HeadTail head_tail_split(std::span<const std::size_t> train_counts, std::size_t threshold) {
  if (threshold == 0) throw InvalidArgument("head threshold must be at least 1");
  HeadTail out;
  for (std::size_t l = 0; l < train_counts.size(); ++l) {
    (train_counts[l] >= threshold ? out.head : out.tail).push_back(l);
  }
  return out;
}

EvalReport evaluate(std::string model, std::span<const std::vector<double>> scores,
                    std::span<const std::size_t> labels,
                    std::span<const std::size_t> train_counts, std::size_t head_threshold) {
  if (scores.empty()) throw InvalidArgument("cannot evaluate an empty set");
  if (scores.size() != labels.size()) throw ShapeMismatch("one label per score row required");
  if (head_threshold == 0) throw InvalidArgument("head threshold must be at least 1");
  EvalReport r;
  r.model = std::move(model);
  r.n_examples = scores.size();
  r.head_threshold = head_threshold;
  std::size_t hit1 = 0, hit5 = 0, head_hits = 0, tail_hits = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const std::size_t label = labels[i];
    if (label >= train_counts.size()) {
      throw DataError(fmt::format("label {} outside the training label map", label));
    }
    if (scores[i].empty()) ++r.abstained;
    const bool top1 = in_topk(scores[i], label, 1);
    hit1 += top1 ? 1 : 0;
    hit5 += in_topk(scores[i], label, 5) ? 1 : 0;
    if (train_counts[label] >= head_threshold) {
      ++r.n_head;
      head_hits += top1 ? 1 : 0;
    } else {
      ++r.n_tail;
      tail_hits += top1 ? 1 : 0;
    }
  }
  const auto frac = [](std::size_t a, std::size_t b) {
    return static_cast<double>(a) / static_cast<double>(b);
  };
  r.top1 = frac(hit1, r.n_examples);
  r.top5 = frac(hit5, r.n_examples);
  if (r.n_head > 0) r.head_top1 = frac(head_hits, r.n_head);
  if (r.n_tail > 0) r.tail_top1 = frac(tail_hits, r.n_tail);
  return r;
}

std::vector<std::vector<double>> score_rows(const nn::Tensor& scores) {
  std::vector<std::vector<double>> out;
  out.reserve(scores.rows());
  for (std::size_t r = 0; r < scores.rows(); ++r) {
    const auto row = scores.row(r);
    out.emplace_back(row.begin(), row.end());
  }
  return out;
}

std::vector<EvalReport> compare_models(std::span<const ModelPredictions> models,
                                       const Dataset& eval, const Dataset& train,
                                       std::size_t head_threshold) {
  if (eval.empty()) throw DataError("eval split is empty");
  if (train.num_labels != eval.num_labels) {
    throw DataError(fmt::format("train split has {} labels, eval split {}", train.num_labels,
                                eval.num_labels));
  }
  const auto labels = eval.labels();
  const auto counts = train.label_counts();
  std::vector<EvalReport> out;
  for (const auto& m : models) {
    if (m.num_labels != eval.num_labels) {
      throw DataError(fmt::format("model '{}' predicts {} labels but the eval split has {}",
                                  m.name, m.num_labels, eval.num_labels));
    }
    if (m.scores.size() != eval.size()) {
      throw DataError(fmt::format("model '{}' scored {} of {} examples", m.name, m.scores.size(),
                                  eval.size()));
    }
    for (const auto& row : m.scores) {
      if (!row.empty() && row.size() != m.num_labels) {
        throw DataError(fmt::format("model '{}' has a score row of length {}", m.name, row.size()));
      }
    }
    out.push_back(evaluate(m.name, m.scores, labels, counts, head_threshold));
  }
  return out;
}

const SweepRow& SweepResult::best() const {
  if (rows.empty()) throw InvalidArgument("empty sweep");
  const SweepRow* best = &rows.front();
  for (const auto& r : rows) {
    if (r.top1 > best->top1) best = &r;
  }
  return *best;
}

ModelPredictions prior_predictions(std::string name, const nn::Tensor& base_probs,
                                   const Dataset& train, const Dataset& eval,
                                   const PriorConfig& config) {
  config.validate();
  if (base_probs.rows() != eval.size() || base_probs.cols() != eval.num_labels) {
    throw ShapeMismatch("base probabilities must be [eval n x C]");
  }
  const auto locations = train.locations();
  const auto labels = train.labels();
  const PriorContext ctx =
      PriorContext::from_training(locations, labels, train.num_labels);
  ModelPredictions out{std::move(name), eval.num_labels, {}};
  out.scores.reserve(eval.size());
  for (std::size_t i = 0; i < eval.size(); ++i) {
    out.scores.push_back(
        predict_with_prior(base_probs.row(i), ctx, eval.observations[i].geo, config).scores);
  }
  return out;
}

SweepResult radius_sweep(const nn::Tensor& base_probs, const Dataset& train, const Dataset& eval,
                         std::span<const double> radii, const PriorConfig& config) {
  if (radii.empty()) throw InvalidArgument("radius sweep needs at least one radius");
  for (double r : radii) {
    if (!(r > 0.0)) throw InvalidArgument(fmt::format("sweep radius must be positive, got {}", r));
  }
  if (eval.empty()) throw DataError("eval split is empty");
  if (base_probs.rows() != eval.size() || base_probs.cols() != eval.num_labels) {
    throw ShapeMismatch("base probabilities must be [eval n x C]");
  }
  const auto eval_labels = eval.labels();
  const auto locations = train.locations();
  const auto train_labels = train.labels();
  const PriorContext ctx = PriorContext::from_training(locations, train_labels, train.num_labels);

  SweepResult out;
  out.mode = config.mode;
  out.n_examples = eval.size();
  out.image_only_top1 = topk_accuracy(score_rows(base_probs), eval_labels, 1);
  for (double radius : radii) {
    PriorConfig c = config;
    c.theta_miles = radius;
    std::size_t hits = 0;
    std::size_t abstained = 0;
    for (std::size_t i = 0; i < eval.size(); ++i) {
      const PriorPrediction p =
          predict_with_prior(base_probs.row(i), ctx, eval.observations[i].geo, c);
      if (!p.label) ++abstained;
      hits += (p.label && *p.label == eval_labels[i]) ? 1 : 0;
    }
    out.rows.push_back(
        {radius, static_cast<double>(hits) / static_cast<double>(eval.size()), abstained});
  }
  return out;
}

std::string to_string(PriorMode mode) {
  return mode == PriorMode::bayesian ? "bayes_prior" : "whitelist";
}

PriorMode prior_mode_from_string(const std::string& name) {
  if (name == "bayes_prior" || name == "bayesian") return PriorMode::bayesian;
  if (name == "whitelist") return PriorMode::whitelist;
  throw ConfigError(fmt::format("unknown prior mode '{}'", name));
}

Json report_to_json(const EvalReport& r) {
  Json j;
  j["model"] = r.model;
  j["top1"] = r.top1;
  j["top5"] = r.top5;
  j["head_top1"] = optional_number(r.head_top1);
  j["tail_top1"] = optional_number(r.tail_top1);
  j["n_examples"] = r.n_examples;
  j["n_head"] = r.n_head;
  j["n_tail"] = r.n_tail;
  j["abstained"] = r.abstained;
  j["head_threshold"] = r.head_threshold;
  return j;
}

Json reports_to_json(std::span<const EvalReport> reports) {
  Json rows = Json::array();
  for (const auto& r : reports) rows.push_back(report_to_json(r));
  Json j;
  j["rows"] = std::move(rows);
  return j;
}

Json sweep_to_json(const SweepResult& sweep) {
  Json rows = Json::array();
  for (const auto& r : sweep.rows) {
    Json row;
    row["radius_miles"] = format_radius(r.radius_miles);
    row["top1"] = r.top1;
    row["abstained"] = r.abstained;
    rows.push_back(std::move(row));
  }
  Json j;
  j["mode"] = to_string(sweep.mode);
  j["n_examples"] = sweep.n_examples;
  j["image_only_top1"] = sweep.image_only_top1;
  j["rows"] = std::move(rows);
  return j;
}

std::string report_table(std::span<const EvalReport> reports) {
  std::size_t width = 5;
  for (const auto& r : reports) width = std::max(width, r.model.size());
  std::string out = fmt::format("{:<{}}  {:>7}  {:>7}  {:>9}  {:>9}  {:>6}\n", "model", width,
                                "top1", "top5", "head_top1", "tail_top1", "n");
  for (const auto& r : reports) {
    out += fmt::format("{:<{}}  {:>7.4f}  {:>7.4f}  {:>9}  {:>9}  {:>6}\n", r.model, width, r.top1,
                       r.top5, optional_cell(r.head_top1), optional_cell(r.tail_top1),
                       r.n_examples);
  }
  return out;
}

std::string sweep_table(const SweepResult& sweep) {
  std::string out = fmt::format("mode {}  image-only top1 {:.4f}  n {}\n", to_string(sweep.mode),
                                sweep.image_only_top1, sweep.n_examples);
  out += fmt::format("{:>10}  {:>7}  {:>9}\n", "radius", "top1", "abstained");
  for (const auto& r : sweep.rows) {
    out += fmt::format("{:>10}  {:>7.4f}  {:>9}\n", format_radius(r.radius_miles), r.top1,
                       r.abstained);
  }
  return out;
}

std::string format_radius(double miles) {
  if (std::isinf(miles)) return "global";
  return fmt::format("{}", miles);
}

double parse_radius(const std::string& text) {
  if (text == "global" || text == "inf") return kGlobalRadius;
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (end == text.c_str() || *end != '\0' || !(v > 0.0)) {
    throw ConfigError(fmt::format("invalid radius '{}'", text));
  }
  return v;
}

}  // namespace geofuse::eval
