#include "geofuse/dataset.hpp"

#include <fmt/format.h>

#include "geofuse/error.hpp"

namespace geofuse {

void Dataset::validate() const {
  if (num_labels == 0) throw DataError("dataset declares no labels");
  for (std::size_t i = 0; i < observations.size(); ++i) {
    const auto& o = observations[i];
    if (o.label >= num_labels) {
      throw DataError(fmt::format("observation {} has label {} but C = {}", i, o.label, num_labels));
    }
    if (o.features.size() != feature_dim) {
      throw DataError(fmt::format("observation {} has {} features, expected {}", i,
                                  o.features.size(), feature_dim));
    }
  }
}

std::vector<std::size_t> Dataset::labels() const {
  std::vector<std::size_t> out;
  out.reserve(observations.size());
  for (const auto& o : observations) out.push_back(o.label);
  return out;
}

std::vector<GeoPoint> Dataset::locations() const {
  std::vector<GeoPoint> out;
  out.reserve(observations.size());
  for (const auto& o : observations) out.push_back(o.geo);
  return out;
}

std::vector<std::size_t> Dataset::label_counts() const {
  std::vector<std::size_t> counts(num_labels, 0);
  for (const auto& o : observations) {
    if (o.label >= num_labels) throw DataError(fmt::format("label {} out of range", o.label));
    ++counts[o.label];
  }
  return counts;
}

}  // namespace geofuse
