#include "geofuse/cli/run_config.hpp"

#include <fmt/format.h>

#include "geofuse/error.hpp"
#include "geofuse/evalkit.hpp"
#include "geofuse/micronet/checkpoint.hpp"

namespace geofuse::cli {
namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::string path_field(const Json& doc, const char* key) {
  return doc.contains(key) ? doc.at(key).get<std::string>() : std::string();
}

double radius_from_json(const Json& v) {
  if (v.is_string()) return eval::parse_radius(v.get<std::string>());
  const double r = v.get<double>();
  if (!(r > 0.0)) throw ConfigError(fmt::format("radius must be positive, got {}", r));
  return r;
}

}  // namespace

ModelSpec ModelSpec::parse(const std::string& text) {
  ModelSpec m;
  if (text == "image_only") {
    m.kind = ModelKind::image_only;
  } else if (text == "bayes_prior") {
    m.kind = ModelKind::bayes_prior;
  } else if (text == "whitelist") {
    m.kind = ModelKind::whitelist;
  } else if (text == "postproc") {
    m.kind = ModelKind::postproc;
  } else if (text == "featmod") {
    m.kind = ModelKind::featmod;
  } else if (text.rfind("featmod:", 0) == 0) {
    m.kind = ModelKind::featmod;
    m.variant = featmod::variant_from_string(text.substr(8));
  } else {
    throw ConfigError(fmt::format("unknown model kind '{}'", text));
  }
  return m;
}

std::string ModelSpec::str() const {
  switch (kind) {
    case ModelKind::image_only:
      return "image_only";
    case ModelKind::bayes_prior:
      return "bayes_prior";
    case ModelKind::whitelist:
      return "whitelist";
    case ModelKind::postproc:
      return "postproc";
    case ModelKind::featmod:
      return variant ? fmt::format("featmod:{}", featmod::to_string(*variant)) : "featmod";
  }
  return "image_only";
}

RunConfig RunConfig::from_json(const Json& doc, const std::filesystem::path& base_dir) {
  if (!doc.is_object()) throw ConfigError("run config must be a JSON object");
  RunConfig c;
  try {
    if (doc.contains("seed")) c.seed = doc.at("seed").get<std::uint64_t>();
    if (doc.contains("model")) c.model = ModelSpec::parse(doc.at("model").get<std::string>());
    c.train_data = resolve(base_dir, path_field(doc, "train_data"));
    c.eval_data = resolve(base_dir, path_field(doc, "eval_data"));
    c.checkpoint = resolve(base_dir, path_field(doc, "checkpoint"));
    c.base_checkpoint = resolve(base_dir, path_field(doc, "base_checkpoint"));
    c.out = resolve(base_dir, path_field(doc, "out"));
    if (doc.contains("optimizer")) c.optimizer = nn::optimizer_from_json(doc.at("optimizer"));
    if (doc.contains("batch_size")) c.batch_size = doc.at("batch_size").get<std::size_t>();
    if (doc.contains("epochs")) c.epochs = doc.at("epochs").get<int>();
    if (doc.contains("hidden")) c.hidden = doc.at("hidden").get<std::vector<std::size_t>>();
    if (doc.contains("layer_mask")) c.layer_mask = doc.at("layer_mask").get<std::vector<bool>>();
    if (doc.contains("radius")) c.radius = radius_from_json(doc.at("radius"));
    c.alpha = doc.value("alpha", c.alpha);
    if (doc.contains("fallback")) {
      const auto f = doc.at("fallback").get<std::string>();
      if (f == "image_only") {
        c.fallback = EmptyFallback::image_only;
      } else if (f == "abstain") {
        c.fallback = EmptyFallback::abstain;
      } else {
        throw ConfigError(fmt::format("unknown fallback '{}'", f));
      }
    }
    c.head_threshold = doc.value("head_threshold", c.head_threshold);
    if (doc.contains("radii")) {
      for (const auto& r : doc.at("radii")) c.radii.push_back(radius_from_json(r));
    }
    if (doc.contains("sweep_modes")) {
      c.sweep_modes = doc.at("sweep_modes").get<std::vector<std::string>>();
    }
    if (doc.contains("models")) {
      for (const auto& m : doc.at("models")) {
        ModelEntry e;
        e.model = ModelSpec::parse(m.at("model").get<std::string>());
        e.name = m.value("name", e.model.str());
        e.checkpoint = resolve(base_dir, path_field(m, "checkpoint"));
        e.base_checkpoint = resolve(base_dir, path_field(m, "base_checkpoint"));
        c.models.push_back(std::move(e));
      }
    }
  } catch (const Json::exception& e) {
    throw ConfigError(fmt::format("run config: {}", e.what()));
  }
  if (c.head_threshold == 0) throw ConfigError("head_threshold must be at least 1");
  if (c.alpha < 0.0) throw ConfigError("alpha must be >= 0");
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  return from_json(nn::read_json_file(path), path.parent_path());
}

std::uint64_t RunConfig::require_seed() const {
  if (!seed) throw ConfigError("run config needs a seed (set \"seed\" or pass --seed)");
  return *seed;
}

PriorConfig RunConfig::prior_config(ModelKind kind) const {
  PriorConfig p;
  p.mode = kind == ModelKind::bayes_prior ? PriorMode::bayesian : PriorMode::whitelist;
  p.theta_miles = radius;
  p.smoothing_alpha = alpha;
  p.empty_fallback = fallback;
  return p;
}

void apply_overrides(RunConfig& config, const Overrides& o) {
  if (o.seed) config.seed = *o.seed;
  if (o.out) config.out = *o.out;
  if (o.base) config.base_checkpoint = *o.base;
  if (o.radii) config.radii = *o.radii;
  if (o.variant) {
    if (config.model.kind != ModelKind::featmod) {
      throw ConfigError(fmt::format("--variant applies to featmod models, config has '{}'",
                                    config.model.str()));
    }
    config.model.variant = featmod::variant_from_string(*o.variant);
  }
}

std::vector<double> default_sweep_radii() {
  return {50.0, 100.0, 200.0, 500.0, 1000.0, 2000.0, 5000.0, eval::kGlobalRadius};
}

}  // namespace geofuse::cli
