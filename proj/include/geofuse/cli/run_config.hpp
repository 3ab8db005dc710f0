#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "geofuse/feat_mod.hpp"
#include "geofuse/micronet/optimizer.hpp"
#include "geofuse/spatial_priors.hpp"

namespace geofuse::cli {

using Json = nlohmann::ordered_json;

enum class ModelKind { image_only, bayes_prior, whitelist, postproc, featmod };

// "image_only", "bayes_prior", "whitelist", "postproc" or "featmod:<variant>".
struct ModelSpec {
  ModelKind kind = ModelKind::image_only;
  std::optional<featmod::Variant> variant;  // featmod only; may be supplied by --variant

  static ModelSpec parse(const std::string& text);
  std::string str() const;
  bool is_prior() const { return kind == ModelKind::bayes_prior || kind == ModelKind::whitelist; }
};

// One row of a comparison.
struct ModelEntry {
  std::string name;
  ModelSpec model;
  std::filesystem::path checkpoint;       // trained models
  std::filesystem::path base_checkpoint;  // prior models
};

struct RunConfig {
  std::optional<std::uint64_t> seed;
  ModelSpec model;
  std::filesystem::path train_data;
  std::filesystem::path eval_data;
  std::filesystem::path checkpoint;
  std::filesystem::path base_checkpoint;
  std::filesystem::path out;
  std::optional<nn::OptimizerConfig> optimizer;
  std::optional<std::size_t> batch_size;
  std::optional<int> epochs;
  std::vector<std::size_t> hidden = {64, 64};  // image-only base widths
  std::vector<bool> layer_mask;                // featmod; empty = default
  double radius = 100.0;
  double alpha = 0.0;
  EmptyFallback fallback = EmptyFallback::image_only;
  std::size_t head_threshold = 100;
  std::vector<double> radii;
  std::vector<std::string> sweep_modes = {"whitelist", "bayes_prior"};
  std::vector<ModelEntry> models;

  // Relative paths resolve against base_dir.
  static RunConfig from_json(const Json& doc, const std::filesystem::path& base_dir);
  static RunConfig load(const std::filesystem::path& path);

  std::uint64_t require_seed() const;
  PriorConfig prior_config(ModelKind kind) const;
};

// Command-line flags that take precedence over the config document.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::optional<std::filesystem::path> base;
  std::optional<std::vector<double>> radii;
  std::optional<std::string> variant;
};

void apply_overrides(RunConfig& config, const Overrides& overrides);

std::vector<double> default_sweep_radii();

}  // namespace geofuse::cli
