#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "json.hpp"

#include "geofuse/micronet/network.hpp"
#include "geofuse/micronet/optimizer.hpp"

namespace geofuse::nn {

using Json = nlohmann::ordered_json;

inline constexpr int kCheckpointFormatVersion = 1;

// {"layers": [{"in", "out", "activation", "weights": [...row-major], "bias": [...]}]}
Json network_to_json(const Network& net);
Network network_from_json(const Json& doc);

Json optimizer_to_json(const OptimizerConfig& config);
OptimizerConfig optimizer_from_json(const Json& doc);

// Top-level checkpoint envelope shared by every model kind:
// {"format_version", "kind", "seed", "optimizer", ...payload}.
Json checkpoint_header(std::string_view kind, std::uint64_t seed, const OptimizerConfig& config);
// Throws ConfigError if the version is unsupported or the kind differs.
void check_checkpoint(const Json& doc, std::string_view expected_kind);

// Whole-file helpers. Output is deterministic for identical documents.
void write_json_file(const std::filesystem::path& path, const Json& doc);
Json read_json_file(const std::filesystem::path& path);

}  // namespace geofuse::nn
