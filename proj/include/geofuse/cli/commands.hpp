#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "geofuse/cli/run_config.hpp"
#include "geofuse/dataset.hpp"
#include "geofuse/error.hpp"
#include "geofuse/evalkit.hpp"
#include "geofuse/micronet/network.hpp"

namespace geofuse::cli {

using Paths = std::vector<std::filesystem::path>;

struct SynthArgs {
  std::filesystem::path world;
  std::size_t n_train = 0;
  std::size_t n_eval = 0;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
};

// Each command returns the files it wrote.
// train.jsonl, eval.jsonl and the materialized world.json.
Paths cmd_synth(const SynthArgs& args);
// checkpoint.json and loss_log.tsv.
Paths cmd_train(const RunConfig& config);
// report.json and report.txt.
Paths cmd_eval(const RunConfig& config);
// sweep.json and sweep.txt.
Paths cmd_sweep(const RunConfig& config);
// compare.json and compare.txt.
Paths cmd_compare(const RunConfig& config);

nn::Json image_only_to_json(const nn::Network& net, const nn::TrainConfig& train);
nn::Network image_only_from_json(const nn::Json& doc);

// Scores for one configured model over the eval split.
eval::ModelPredictions predict_model(const ModelEntry& entry, const RunConfig& config,
                                     const Dataset& train, const Dataset& eval);

// "50,100,global" -> radii in miles.
std::vector<double> parse_radius_list(const std::string& text);

int exit_code(ErrorKind kind);
// Sets the log level from GEOFUSE_LOG (error, info, debug).
void configure_logging();

// Full command-line entry point; returns the process exit code.
int run(int argc, char** argv);

}  // namespace geofuse::cli
