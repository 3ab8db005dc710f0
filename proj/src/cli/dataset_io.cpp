#include "geofuse/cli/dataset_io.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include <fmt/format.h>

#include "json.hpp"

#include "geofuse/error.hpp"

namespace geofuse::cli {
namespace {

using Json = nlohmann::ordered_json;

}  // namespace

void write_dataset(std::ostream& out, const Dataset& data) {
  data.validate();
  Json header;
  header["format_version"] = kDatasetFormatVersion;
  header["C"] = data.num_labels;
  header["D"] = data.feature_dim;
  header["split"] = data.split;
  out << header.dump() << '\n';
  for (const auto& o : data.observations) {
    Json line;
    line["label"] = o.label;
    line["lat"] = o.geo.lat_deg();
    line["lon"] = o.geo.lon_deg();
    line["features"] = o.features;
    out << line.dump() << '\n';
  }
}

Dataset read_dataset(std::istream& in, const std::string& source) {
  std::string text;
  std::size_t line_no = 0;
  const auto fail = [&](const std::string& why) {
    return DataError(fmt::format("{}:{}: {}", source, line_no, why));
  };
  Dataset data;
  bool have_header = false;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.empty()) continue;
    Json doc;
    try {
      doc = Json::parse(text);
    } catch (const Json::parse_error& e) {
      throw fail(e.what());
    }
    try {
      if (!have_header) {
        const int version = doc.at("format_version").get<int>();
        if (version != kDatasetFormatVersion) {
          throw fail(fmt::format("unsupported format_version {}", version));
        }
        data.num_labels = doc.at("C").get<std::size_t>();
        data.feature_dim = doc.at("D").get<std::size_t>();
        data.split = doc.at("split").get<std::string>();
        if (data.num_labels == 0) throw fail("C must be positive");
        have_header = true;
        continue;
      }
      Observation o;
      o.label = doc.at("label").get<std::size_t>();
      o.geo = GeoPoint::from_degrees(doc.at("lat").get<double>(), doc.at("lon").get<double>());
      o.features = doc.at("features").get<std::vector<double>>();
      if (o.label >= data.num_labels) {
        throw fail(fmt::format("label {} not below C = {}", o.label, data.num_labels));
      }
      if (o.features.size() != data.feature_dim) {
        throw fail(fmt::format("{} features, header says D = {}", o.features.size(),
                               data.feature_dim));
      }
      data.observations.push_back(std::move(o));
    } catch (const Json::exception& e) {
      throw fail(e.what());
    } catch (const InvalidCoordinate& e) {
      throw fail(e.what());
    }
  }
  if (!have_header) throw DataError(fmt::format("{}: missing header line", source));
  return data;
}

void write_dataset_file(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
  write_dataset(out, data);
  if (!out) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

Dataset read_dataset_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot read dataset '{}'", path.string()));
  return read_dataset(in, path.string());
}

}  // namespace geofuse::cli
