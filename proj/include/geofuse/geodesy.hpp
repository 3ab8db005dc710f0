#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

namespace geofuse {

inline constexpr double kEarthRadiusMiles = 3958.7613;

// A validated latitude/longitude pair in degrees.
// lat in [-90, 90], lon in [-180, 180).
class GeoPoint {
 public:
  GeoPoint() = default;

  // Validates and canonicalizes. lon == 180 wraps to -180; anything else
  // outside [-90,90] x [-180,180] or non-finite throws InvalidCoordinate.
  static GeoPoint from_degrees(double lat_deg, double lon_deg);

  double lat_deg() const noexcept { return lat_; }
  double lon_deg() const noexcept { return lon_; }

  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;

 private:
  GeoPoint(double lat, double lon) : lat_(lat), lon_(lon) {}
  double lat_ = 0.0;
  double lon_ = 0.0;
};

// Geolocation scaled to x = lat/90 in [-1,1], y = lon/180 in [-1,1).
struct NormalizedGeo {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const NormalizedGeo&, const NormalizedGeo&) = default;
};

NormalizedGeo normalize(const GeoPoint& p);
GeoPoint denormalize(const NormalizedGeo& g);

// Great-circle distance on a sphere of radius kEarthRadiusMiles.
double haversine_miles(const GeoPoint& a, const GeoPoint& b);

using PointId = std::uint64_t;

// Uniform lat/lon grid over the sphere. Immutable once built; queries are
// safe to run concurrently.
class SpatialIndex {
 public:
  using CellKey = std::pair<int, int>;  // (lat band, lon band)

  SpatialIndex() = default;

  static SpatialIndex build(std::span<const std::pair<PointId, GeoPoint>> points,
                            double cell_size_deg);

  // Ids within theta_miles (inclusive) of center, ascending.
  std::vector<PointId> radius_query(const GeoPoint& center, double theta_miles) const;

  double cell_size_deg() const noexcept { return cell_size_deg_; }
  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t occupied_cells() const noexcept { return cells_.size(); }
  const std::map<CellKey, std::vector<std::size_t>>& cells() const noexcept { return cells_; }
  PointId id_at(std::size_t slot) const { return ids_.at(slot); }
  const GeoPoint& point_at(std::size_t slot) const { return points_.at(slot); }

  CellKey cell_of(const GeoPoint& p) const;

 private:
  void scan_band(int lat_band, int lon_lo, int lon_hi, const GeoPoint& center,
                 double theta_miles, std::vector<PointId>& out) const;

  double cell_size_deg_ = 1.0;
  int lat_bands_ = 0;
  int lon_bands_ = 0;
  std::vector<PointId> ids_;
  std::vector<GeoPoint> points_;
  std::map<CellKey, std::vector<std::size_t>> cells_;
};

// Reference filter over every point; used to cross-check the grid.
std::vector<PointId> brute_force_radius(std::span<const std::pair<PointId, GeoPoint>> points,
                                        const GeoPoint& center, double theta_miles);

}  // namespace geofuse
