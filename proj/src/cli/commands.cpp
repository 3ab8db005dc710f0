#include "geofuse/cli/commands.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "geofuse/cli/dataset_io.hpp"
#include "geofuse/feat_mod.hpp"
#include "geofuse/geo_fusion.hpp"
#include "geofuse/micronet/checkpoint.hpp"
#include "geofuse/micronet/loss.hpp"
#include "geofuse/synthworld.hpp"

namespace geofuse::cli {
namespace fs = std::filesystem;
namespace {

fs::path require_out(const fs::path& out) {
  if (out.empty()) throw ConfigError("no output directory (set \"out\" or pass --out)");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError(fmt::format("cannot create '{}': {}", out.string(), ec.message()));
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  out << text;
  if (!out) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

Dataset load_split(const fs::path& path, const char* what) {
  if (path.empty()) throw ConfigError(fmt::format("run config names no {}", what));
  return read_dataset_file(path);
}

nn::Json load_checkpoint(const fs::path& path, const std::string& what) {
  if (path.empty()) throw ConfigError(fmt::format("{} is not set", what));
  if (!fs::exists(path)) {
    throw ConfigError(fmt::format("{} '{}' does not exist", what, path.string()));
  }
  return nn::read_json_file(path);
}

nn::Network load_base(const fs::path& path, const std::string& requirer) {
  if (path.empty()) {
    throw ConfigError(fmt::format(
        "{} needs a base checkpoint: pass --base or set \"base_checkpoint\"", requirer));
  }
  return image_only_from_json(load_checkpoint(path, "base checkpoint"));
}

void apply_train_overrides(nn::TrainConfig& t, const RunConfig& config) {
  t.seed = config.require_seed();
  if (config.optimizer) t.optimizer = *config.optimizer;
  if (config.batch_size) t.batch_size = *config.batch_size;
  if (config.epochs) t.epochs = *config.epochs;
}

std::string loss_log(const nn::TrainHistory& history) {
  std::string out = "epoch\tloss\n";
  for (std::size_t e = 0; e < history.epoch_loss.size(); ++e) {
    out += fmt::format("{}\t{:.17g}\n", e, history.epoch_loss[e]);
  }
  return out;
}

void check_labels(const nn::Network& net, const Dataset& data, const char* what) {
  if (net.output_dim() != data.num_labels || net.input_dim() != data.feature_dim) {
    throw DataError(fmt::format("{} is {} -> {} but the data has D = {}, C = {}", what,
                                net.input_dim(), net.output_dim(), data.feature_dim,
                                data.num_labels));
  }
}

}  // namespace

nn::Json image_only_to_json(const nn::Network& net, const nn::TrainConfig& train) {
  nn::Json doc = nn::checkpoint_header("image_only", train.seed, train.optimizer);
  doc["batch_size"] = train.batch_size;
  doc["epochs"] = train.epochs;
  doc["network"] = nn::network_to_json(net);
  return doc;
}

nn::Network image_only_from_json(const nn::Json& doc) {
  nn::check_checkpoint(doc, "image_only");
  if (!doc.contains("network")) throw ConfigError("image_only checkpoint lacks 'network'");
  return nn::network_from_json(doc.at("network"));
}

Paths cmd_synth(const SynthArgs& args) {
  if (args.n_train == 0) throw ConfigError("n_train must be positive");
  if (args.n_eval == 0) throw ConfigError("n_eval must be positive");
  if (args.world.empty()) throw ConfigError("no world spec given (--world)");
  nn::Json doc = nn::read_json_file(args.world);
  if (args.seed) doc["seed"] = *args.seed;
  const synth::WorldSpec world = synth::world_from_json(doc);
  const fs::path out = require_out(args.out);

  const Paths written = {out / "train.jsonl", out / "eval.jsonl", out / "world.json"};
  write_dataset_file(written[0], synth::generate(world, args.n_train, synth::Split::train));
  write_dataset_file(written[1], synth::generate(world, args.n_eval, synth::Split::eval));
  write_text(written[2], synth::world_to_json(world).dump(2) + "\n");
  spdlog::info("wrote {} train and {} eval observations to {}", args.n_train, args.n_eval,
               out.string());
  return written;
}

Paths cmd_train(const RunConfig& config) {
  const std::string kind = config.model.str();
  if (config.model.is_prior()) {
    throw ConfigError(fmt::format("'{}' has no trainable parameters; use eval or sweep", kind));
  }
  // Dependencies are checked before any data is read.
  std::optional<nn::Network> base;
  if (config.model.kind == ModelKind::postproc || config.model.kind == ModelKind::featmod) {
    base = load_base(config.base_checkpoint, kind);
  }
  if (config.model.kind == ModelKind::featmod && !config.model.variant) {
    throw ConfigError("featmod training needs a variant (model \"featmod:<variant>\" or --variant)");
  }
  const Dataset train = load_split(config.train_data, "train_data");
  const fs::path out = require_out(config.out);

  nn::Json doc;
  nn::TrainHistory history;
  switch (config.model.kind) {
    case ModelKind::image_only: {
      nn::TrainConfig t;
      apply_train_overrides(t, config);
      nn::Network net = nn::Network::mlp(train.feature_dim, config.hidden, train.num_labels,
                                         nn::Activation::relu, nn::Activation::identity, t.seed);
      history = nn::train_classifier(net, fusion::feature_matrix(train), train.labels(), t);
      doc = image_only_to_json(net, t);
      break;
    }
    case ModelKind::postproc: {
      check_labels(*base, train, "base checkpoint");
      fusion::PostprocConfig pc;
      apply_train_overrides(pc.train, config);
      auto result = fusion::train_postproc(train, *base, pc);
      history = std::move(result.history);
      doc = fusion::postproc_to_json(result.geo, pc);
      doc["base"] = nn::network_to_json(*base);
      break;
    }
    case ModelKind::featmod: {
      check_labels(*base, train, "base checkpoint");
      featmod::JointConfig jc;
      apply_train_overrides(jc.train, config);
      jc.layer_mask = config.layer_mask;
      auto result = featmod::train_joint(train, *base, *config.model.variant, jc);
      history = std::move(result.history);
      doc = featmod::featmod_to_json(result.net, jc);
      break;
    }
    case ModelKind::bayes_prior:
    case ModelKind::whitelist:
      break;
  }
  const Paths written = {out / "checkpoint.json", out / "loss_log.tsv"};
  nn::write_json_file(written[0], doc);
  write_text(written[1], loss_log(history));
  spdlog::info("trained {} for {} epochs, final loss {:.6f}", kind, history.epoch_loss.size(),
               history.epoch_loss.empty() ? 0.0 : history.epoch_loss.back());
  return written;
}

eval::ModelPredictions predict_model(const ModelEntry& entry, const RunConfig& config,
                                     const Dataset& train, const Dataset& eval) {
  const nn::Tensor features = fusion::feature_matrix(eval);
  const auto finish = [&](const nn::Tensor& probs) {
    return eval::ModelPredictions{entry.name, probs.cols(), eval::score_rows(probs)};
  };
  switch (entry.model.kind) {
    case ModelKind::image_only: {
      const nn::Network net = image_only_from_json(load_checkpoint(entry.checkpoint, "checkpoint"));
      check_labels(net, eval, "image_only checkpoint");
      return finish(fusion::base_probabilities(net, features));
    }
    case ModelKind::bayes_prior:
    case ModelKind::whitelist: {
      const nn::Network base = load_base(entry.base_checkpoint, entry.model.str());
      check_labels(base, eval, "base checkpoint");
      return eval::prior_predictions(entry.name, fusion::base_probabilities(base, features), train,
                                     eval, config.prior_config(entry.model.kind));
    }
    case ModelKind::postproc: {
      const nn::Json doc = load_checkpoint(entry.checkpoint, "checkpoint");
      const fusion::GeoNet geo = fusion::postproc_from_json(doc);
      if (!doc.contains("base")) throw ConfigError("postproc checkpoint lacks its base network");
      const nn::Network base = nn::network_from_json(doc.at("base"));
      check_labels(base, eval, "postproc base");
      const auto locations = eval.locations();
      return finish(fusion::fused_scores(geo, fusion::base_probabilities(base, features), locations));
    }
    case ModelKind::featmod: {
      const featmod::ModulatedNet net =
          featmod::featmod_from_json(load_checkpoint(entry.checkpoint, "checkpoint"));
      check_labels(net.base, eval, "featmod checkpoint");
      const nn::Tensor logits =
          featmod::predict_modulated(net, features, fusion::geo_inputs(eval.locations()));
      return finish(nn::softmax_rows(logits));
    }
  }
  throw ConfigError("unreachable model kind");
}

Paths cmd_eval(const RunConfig& config) {
  ModelEntry entry{config.model.str(), config.model, config.checkpoint, config.base_checkpoint};
  // Fail on missing models before reading data.
  if (entry.model.is_prior()) {
    load_base(entry.base_checkpoint, entry.name);
  } else {
    load_checkpoint(entry.checkpoint, "checkpoint");
  }
  const Dataset train = load_split(config.train_data, "train_data");
  const Dataset eval = load_split(config.eval_data, "eval_data");
  const fs::path out = require_out(config.out);
  const eval::ModelPredictions preds = predict_model(entry, config, train, eval);
  const auto reports = eval::compare_models(std::span(&preds, 1), eval, train,
                                            config.head_threshold);
  const Paths written = {out / "report.json", out / "report.txt"};
  write_text(written[0], eval::reports_to_json(reports).dump(2) + "\n");
  write_text(written[1], eval::report_table(reports));
  std::cout << eval::report_table(reports);
  return written;
}

Paths cmd_sweep(const RunConfig& config) {
  const nn::Network base = load_base(config.base_checkpoint, "sweep");
  const Dataset train = load_split(config.train_data, "train_data");
  const Dataset eval = load_split(config.eval_data, "eval_data");
  check_labels(base, eval, "base checkpoint");
  const fs::path out = require_out(config.out);
  const std::vector<double> radii = config.radii.empty() ? default_sweep_radii() : config.radii;
  const nn::Tensor probs = fusion::base_probabilities(base, fusion::feature_matrix(eval));

  nn::Json doc;
  doc["sweeps"] = nn::Json::array();
  std::string table;
  for (const auto& mode : config.sweep_modes) {
    PriorConfig pc = config.prior_config(ModelKind::whitelist);
    pc.mode = eval::prior_mode_from_string(mode);
    const auto sweep = eval::radius_sweep(probs, train, eval, radii, pc);
    doc["sweeps"].push_back(eval::sweep_to_json(sweep));
    if (!table.empty()) table += "\n";
    table += eval::sweep_table(sweep);
  }
  const Paths written = {out / "sweep.json", out / "sweep.txt"};
  write_text(written[0], doc.dump(2) + "\n");
  write_text(written[1], table);
  std::cout << table;
  return written;
}

Paths cmd_compare(const RunConfig& config) {
  if (config.models.empty()) throw ConfigError("compare needs a non-empty \"models\" list");
  for (const auto& m : config.models) {
    if (m.model.is_prior()) {
      load_base(m.base_checkpoint.empty() ? config.base_checkpoint : m.base_checkpoint, m.name);
    } else {
      load_checkpoint(m.checkpoint, fmt::format("checkpoint of '{}'", m.name));
    }
  }
  const Dataset train = load_split(config.train_data, "train_data");
  const Dataset eval = load_split(config.eval_data, "eval_data");
  const fs::path out = require_out(config.out);
  std::vector<eval::ModelPredictions> preds;
  for (ModelEntry m : config.models) {
    if (m.base_checkpoint.empty()) m.base_checkpoint = config.base_checkpoint;
    preds.push_back(predict_model(m, config, train, eval));
  }
  const auto reports = eval::compare_models(preds, eval, train, config.head_threshold);
  const Paths written = {out / "compare.json", out / "compare.txt"};
  write_text(written[0], eval::reports_to_json(reports).dump(2) + "\n");
  write_text(written[1], eval::report_table(reports));
  std::cout << eval::report_table(reports);
  return written;
}

std::vector<double> parse_radius_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(eval::parse_radius(item));
  }
  if (out.empty()) throw ConfigError("empty radius list");
  return out;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument:
    case ErrorKind::config:
      return 2;
    case ErrorKind::data:
      return 3;
    case ErrorKind::numeric:
      return 4;
    case ErrorKind::io:
      return 5;
  }
  return 1;
}

void configure_logging() {
  if (!spdlog::get("geofuse")) spdlog::set_default_logger(spdlog::stderr_color_mt("geofuse"));
  spdlog::level::level_enum level = spdlog::level::info;
  if (const char* env = std::getenv("GEOFUSE_LOG")) {
    const std::string v(env);
    if (v == "error") {
      level = spdlog::level::err;
    } else if (v == "debug") {
      level = spdlog::level::debug;
    } else if (v != "info") {
      spdlog::warn("ignoring unknown GEOFUSE_LOG value '{}'", v);
    }
  }
  spdlog::set_level(level);
}

int run(int argc, char** argv) {
  configure_logging();
  CLI::App app{"geofuse: geolocation-aware classification experiments"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  std::uint64_t seed = 0;
  auto* synth = app.add_subcommand("synth", "generate train/eval splits from a world spec");
  synth->add_option("--world", synth_args.world, "world spec JSON")->required();
  synth->add_option("--n-train", synth_args.n_train, "training observations")->required();
  synth->add_option("--n-eval", synth_args.n_eval, "eval observations")->required();
  synth->add_option("--out", synth_args.out, "output directory")->required();
  auto* synth_seed = synth->add_option("--seed", seed, "override the world seed");

  std::string config_path;
  Overrides overrides;
  std::string out_dir, base_path, radius_list, variant;
  std::vector<CLI::Option*> seed_opts;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "run config JSON")->required();
    seed_opts.push_back(sub->add_option("--seed", seed, "override the config seed"));
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--base", base_path, "base (image-only) checkpoint");
  };
  auto* train = app.add_subcommand("train", "train a model and write its checkpoint");
  add_common(train);
  train->add_option("--variant", variant, "feature-modulation variant");
  auto* evaluate = app.add_subcommand("eval", "evaluate one model");
  add_common(evaluate);
  auto* sweep = app.add_subcommand("sweep", "accuracy of prior models across radii");
  add_common(sweep);
  sweep->add_option("--radius-list", radius_list, "comma-separated radii in miles, or 'global'");
  auto* compare = app.add_subcommand("compare", "compare several models on one eval split");
  add_common(compare);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) {
      if (synth_seed->count() > 0) synth_args.seed = seed;
      for (const auto& p : cmd_synth(synth_args)) std::cout << p.string() << '\n';
      return 0;
    }
    RunConfig config = RunConfig::load(config_path);
    for (auto* opt : seed_opts) {
      if (opt->count() > 0) overrides.seed = seed;
    }
    if (!out_dir.empty()) overrides.out = out_dir;
    if (!base_path.empty()) overrides.base = base_path;
    if (!radius_list.empty()) overrides.radii = parse_radius_list(radius_list);
    if (!variant.empty()) overrides.variant = variant;
    apply_overrides(config, overrides);
    config.require_seed();

    Paths written;
    if (train->parsed()) {
      written = cmd_train(config);
    } else if (evaluate->parsed()) {
      written = cmd_eval(config);
    } else if (sweep->parsed()) {
      written = cmd_sweep(config);
    } else {
      written = cmd_compare(config);
    }
    for (const auto& p : written) spdlog::info("wrote {}", p.string());
    return 0;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}

}  // namespace geofuse::cli
