#include "geofuse/micronet/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "geofuse/error.hpp"

namespace geofuse::nn {
namespace {

template <typename T>
T required(const Json& doc, const char* key) {
  if (!doc.is_object() || !doc.contains(key)) {
    throw ConfigError(fmt::format("checkpoint is missing field '{}'", key));
  }
  try {
    return doc.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("checkpoint field '{}': {}", key, e.what()));
  }
}

}  // namespace

Json network_to_json(const Network& net) {
  Json layers = Json::array();
  for (const auto& layer : net.layers()) {
    Json l;
    l["in"] = layer.in_dim();
    l["out"] = layer.out_dim();
    l["activation"] = std::string(to_string(layer.activation()));
    l["weights"] = layer.weights().values();
    l["bias"] = layer.bias().values();
    layers.push_back(std::move(l));
  }
  Json doc;
  doc["layers"] = std::move(layers);
  return doc;
}

Network network_from_json(const Json& doc) {
  const Json layers = required<Json>(doc, "layers");
  if (!layers.is_array() || layers.empty()) throw ConfigError("network has no layers");
  std::vector<DenseLayer> out;
  for (const auto& l : layers) {
    const auto in = required<std::size_t>(l, "in");
    const auto width = required<std::size_t>(l, "out");
    DenseLayer layer(in, width, activation_from_string(required<std::string>(l, "activation")));
    auto weights = required<std::vector<double>>(l, "weights");
    auto bias = required<std::vector<double>>(l, "bias");
    if (weights.size() != in * width || bias.size() != width) {
      throw ConfigError(fmt::format("layer {}x{} has {} weights and {} biases", width, in,
                                    weights.size(), bias.size()));
    }
    layer.weights() = Tensor({width, in}, std::move(weights));
    layer.bias() = Tensor({width}, std::move(bias));
    if (!layer.weights().all_finite() || !layer.bias().all_finite()) {
      throw NumericError("checkpoint contains non-finite parameters");
    }
    out.push_back(std::move(layer));
  }
  try {
    return Network(std::move(out));
  } catch (const ShapeMismatch& e) {
    throw ConfigError(e.what());
  }
}

Json optimizer_to_json(const OptimizerConfig& config) {
  Json doc;
  doc["kind"] = std::string(to_string(config.kind));
  doc["learning_rate"] = config.learning_rate;
  doc["decay_rate"] = config.decay_rate;
  doc["decay_every_epochs"] = config.decay_every_epochs;
  doc["rmsprop_rho"] = config.rmsprop_rho;
  doc["rmsprop_epsilon"] = config.rmsprop_epsilon;
  return doc;
}

OptimizerConfig optimizer_from_json(const Json& doc) {
  OptimizerConfig c;
  if (!doc.is_object()) throw ConfigError("optimizer settings must be an object");
  if (doc.contains("kind")) c.kind = optimizer_kind_from_string(doc.at("kind").get<std::string>());
  // RMSprop runs default to the joint-training schedule.
  if (c.kind == OptimizerKind::rmsprop) {
    c.learning_rate = 0.0045;
    c.decay_rate = 0.94;
    c.decay_every_epochs = 4;
  }
  try {
    c.learning_rate = doc.value("learning_rate", c.learning_rate);
    c.decay_rate = doc.value("decay_rate", c.decay_rate);
    c.decay_every_epochs = doc.value("decay_every_epochs", c.decay_every_epochs);
    c.rmsprop_rho = doc.value("rmsprop_rho", c.rmsprop_rho);
    c.rmsprop_epsilon = doc.value("rmsprop_epsilon", c.rmsprop_epsilon);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("optimizer settings: {}", e.what()));
  }
  c.validate();
  return c;
}

Json checkpoint_header(std::string_view kind, std::uint64_t seed, const OptimizerConfig& config) {
  Json doc;
  doc["format_version"] = kCheckpointFormatVersion;
  doc["kind"] = std::string(kind);
  doc["seed"] = seed;
  doc["optimizer"] = optimizer_to_json(config);
  return doc;
}

void check_checkpoint(const Json& doc, std::string_view expected_kind) {
  const int version = required<int>(doc, "format_version");
  if (version != kCheckpointFormatVersion) {
    throw ConfigError(fmt::format("unsupported checkpoint format_version {}", version));
  }
  const auto kind = required<std::string>(doc, "kind");
  if (kind != expected_kind) {
    throw ConfigError(fmt::format("checkpoint holds a '{}' model, expected '{}'", kind,
                                  expected_kind));
  }
}

void write_json_file(const std::filesystem::path& path, const Json& doc) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  out << doc.dump() << '\n';
  if (!out) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot read '{}'", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return Json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(fmt::format("'{}' is not valid JSON: {}", path.string(), e.what()));
  }
}

}  // namespace geofuse::nn
