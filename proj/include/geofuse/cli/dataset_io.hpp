#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "geofuse/dataset.hpp"

namespace geofuse::cli {

inline constexpr int kDatasetFormatVersion = 1;

// Header line {"format_version", "C", "D", "split"}, then one
// {"label", "lat", "lon", "features"} object per line.
void write_dataset(std::ostream& out, const Dataset& data);
Dataset read_dataset(std::istream& in, const std::string& source = "<stream>");

void write_dataset_file(const std::filesystem::path& path, const Dataset& data);
Dataset read_dataset_file(const std::filesystem::path& path);

}  // namespace geofuse::cli
