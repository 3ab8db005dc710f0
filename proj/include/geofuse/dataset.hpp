#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "geofuse/geodesy.hpp"

namespace geofuse {

// One labelled sighting: appearance features plus where it was made.
struct Observation {
  std::size_t label = 0;
  GeoPoint geo;
  std::vector<double> features;

  friend bool operator==(const Observation&, const Observation&) = default;
};

struct Dataset {
  std::size_t num_labels = 0;
  std::size_t feature_dim = 0;
  std::string split = "train";
  std::vector<Observation> observations;

  std::size_t size() const noexcept { return observations.size(); }
  bool empty() const noexcept { return observations.empty(); }

  // Throws DataError if any observation disagrees with num_labels/feature_dim.
  void validate() const;

  std::vector<std::size_t> labels() const;
  std::vector<GeoPoint> locations() const;
  std::vector<std::size_t> label_counts() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

}  // namespace geofuse
