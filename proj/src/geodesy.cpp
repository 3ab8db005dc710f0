#include "geofuse/geodesy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <string>

#include <fmt/format.h>

#include "geofuse/error.hpp"

namespace geofuse {
namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

// Inverse of x = fl(v / scale) that recovers v bit-exactly. fl(x * scale)
// can land one ulp off, so the neighbours are checked too.
double unscale(double x, double scale) {
  const double r = x * scale;
  if (r / scale == x) return r;
  for (double c : {std::nextafter(r, -INFINITY), std::nextafter(r, INFINITY)}) {
    if (c / scale == x) return c;
  }
  return r;
}

}  // namespace

GeoPoint GeoPoint::from_degrees(double lat_deg, double lon_deg) {
  if (!std::isfinite(lat_deg) || !std::isfinite(lon_deg)) {
    throw InvalidCoordinate(fmt::format("non-finite coordinate ({}, {})", lat_deg, lon_deg));
  }
  if (lat_deg < -90.0 || lat_deg > 90.0) {
    throw InvalidCoordinate(fmt::format("latitude {} outside [-90, 90]", lat_deg));
  }
  if (lon_deg < -180.0 || lon_deg > 180.0) {
    throw InvalidCoordinate(fmt::format("longitude {} outside [-180, 180]", lon_deg));
  }
  if (lon_deg == 180.0) lon_deg = -180.0;
  return GeoPoint(lat_deg, lon_deg);
}

NormalizedGeo normalize(const GeoPoint& p) {
  return NormalizedGeo{p.lat_deg() / 90.0, p.lon_deg() / 180.0};
}

GeoPoint denormalize(const NormalizedGeo& g) {
  return GeoPoint::from_degrees(unscale(g.x, 90.0), unscale(g.y, 180.0));
}

double haversine_miles(const GeoPoint& a, const GeoPoint& b) {
  const double lat1 = a.lat_deg() * kDegToRad;
  const double lat2 = b.lat_deg() * kDegToRad;
  const double dlat = lat2 - lat1;
  const double dlon = (b.lon_deg() - a.lon_deg()) * kDegToRad;
  const double s1 = std::sin(dlat / 2.0);
  const double s2 = std::sin(dlon / 2.0);
  double h = s1 * s1 + std::cos(lat1) * std::cos(lat2) * s2 * s2;
  h = std::clamp(h, 0.0, 1.0);
  return 2.0 * kEarthRadiusMiles * std::asin(std::sqrt(h));
}

SpatialIndex::CellKey SpatialIndex::cell_of(const GeoPoint& p) const {
  int lat_band = static_cast<int>(std::floor((p.lat_deg() + 90.0) / cell_size_deg_));
  int lon_band = static_cast<int>(std::floor((p.lon_deg() + 180.0) / cell_size_deg_));
  lat_band = std::clamp(lat_band, 0, lat_bands_ - 1);
  lon_band = std::clamp(lon_band, 0, lon_bands_ - 1);
  return {lat_band, lon_band};
}

SpatialIndex SpatialIndex::build(std::span<const std::pair<PointId, GeoPoint>> points,
                                 double cell_size_deg) {
  if (!(cell_size_deg > 0.0) || !std::isfinite(cell_size_deg)) {
    throw InvalidArgument(fmt::format("cell size must be positive, got {}", cell_size_deg));
  }
  SpatialIndex index;
  index.cell_size_deg_ = cell_size_deg;
  index.lat_bands_ = std::max(1, static_cast<int>(std::ceil(180.0 / cell_size_deg)));
  index.lon_bands_ = std::max(1, static_cast<int>(std::ceil(360.0 / cell_size_deg)));
  index.ids_.reserve(points.size());
  index.points_.reserve(points.size());

  std::set<PointId> seen;
  for (const auto& [id, p] : points) {
    if (!seen.insert(id).second) {
      throw InvalidArgument(fmt::format("duplicate point id {}", id));
    }
    const std::size_t slot = index.ids_.size();
    index.ids_.push_back(id);
    index.points_.push_back(p);
    index.cells_[index.cell_of(p)].push_back(slot);
  }
  return index;
}

void SpatialIndex::scan_band(int lat_band, int lon_lo, int lon_hi, const GeoPoint& center,
                             double theta_miles, std::vector<PointId>& out) const {
  auto it = cells_.lower_bound({lat_band, lon_lo});
  for (; it != cells_.end() && it->first.first == lat_band && it->first.second <= lon_hi; ++it) {
    for (std::size_t slot : it->second) {
      if (haversine_miles(center, points_[slot]) <= theta_miles) out.push_back(ids_[slot]);
    }
  }
}

std::vector<PointId> SpatialIndex::radius_query(const GeoPoint& center,
                                                double theta_miles) const {
  if (!(theta_miles >= 0.0)) {
    throw InvalidArgument(fmt::format("radius must be non-negative, got {}", theta_miles));
  }
  std::vector<PointId> out;
  if (ids_.empty()) return out;

  // Small slack so boundary points are never dropped from the candidate set;
  // the exact haversine test decides membership.
  constexpr double kSlackDeg = 1e-6;
  const double angle = theta_miles / kEarthRadiusMiles;  // radians
  const double angle_deg = std::min(angle / kDegToRad, 180.0);  // infinite radius is global

  const double lat_lo = center.lat_deg() - angle_deg - kSlackDeg;
  const double lat_hi = center.lat_deg() + angle_deg + kSlackDeg;
  const int band_lo = std::max(0, static_cast<int>(std::floor((lat_lo + 90.0) / cell_size_deg_)));
  const int band_hi =
      std::min(lat_bands_ - 1, static_cast<int>(std::floor((lat_hi + 90.0) / cell_size_deg_)));

  // Longitude half-span of the query cap. A cap touching a pole, or wider
  // than a hemisphere, covers every longitude.
  bool all_lon = angle >= std::numbers::pi / 2.0 || lat_lo <= -90.0 || lat_hi >= 90.0;
  double lon_span_deg = 360.0;
  if (!all_lon) {
    const double ratio = std::sin(angle) / std::cos(center.lat_deg() * kDegToRad);
    if (ratio >= 1.0) {
      all_lon = true;
    } else {
      lon_span_deg = std::asin(ratio) / kDegToRad + kSlackDeg;
      if (lon_span_deg >= 180.0) all_lon = true;
    }
  }

  for (int band = band_lo; band <= band_hi; ++band) {
    if (all_lon) {
      scan_band(band, 0, lon_bands_ - 1, center, theta_miles, out);
      continue;
    }
    const double west = center.lon_deg() - lon_span_deg + 180.0;
    const double east = center.lon_deg() + lon_span_deg + 180.0;
    int w = static_cast<int>(std::floor(west / cell_size_deg_));
    int e = static_cast<int>(std::floor(east / cell_size_deg_));
    if (e - w + 1 >= lon_bands_) {
      scan_band(band, 0, lon_bands_ - 1, center, theta_miles, out);
      continue;
    }
    // Bring the interval into [0, lon_bands) splitting at the antimeridian.
    auto wrap = [this](int b) { return ((b % lon_bands_) + lon_bands_) % lon_bands_; };
    const int ws = wrap(w);
    const int es = wrap(e);
    if (ws <= es) {
      scan_band(band, ws, es, center, theta_miles, out);
    } else {
      scan_band(band, ws, lon_bands_ - 1, center, theta_miles, out);
      scan_band(band, 0, es, center, theta_miles, out);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<PointId> brute_force_radius(std::span<const std::pair<PointId, GeoPoint>> points,
                                        const GeoPoint& center, double theta_miles) {
  if (!(theta_miles >= 0.0)) {
    throw InvalidArgument(fmt::format("radius must be non-negative, got {}", theta_miles));
  }
  std::vector<PointId> out;
  for (const auto& [id, p] : points) {
    if (haversine_miles(center, p) <= theta_miles) out.push_back(id);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace geofuse
