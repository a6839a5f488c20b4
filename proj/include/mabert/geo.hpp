#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mabert {

constexpr double kEarthRadiusNm = 3440.065;
constexpr double kDegToRad = M_PI / 180.0;

struct GeoPoint {
  double lon = 0.0;  // degrees
  double lat = 0.0;  // degrees
};

struct TrackPoint {
  double lon = 0.0;  // degrees
  double lat = 0.0;  // degrees
  double alt = 0.0;  // feet
};

/// Irregularly sampled raw flight record.
struct RawTrack {
  std::string flight_id;
  std::vector<std::int64_t> times;  // seconds, strictly increasing
  std::vector<TrackPoint> points;

  void validate() const {
    if (points.size() < 2)
      throw std::invalid_argument("RawTrack " + flight_id + ": needs at least 2 samples");
    if (times.size() != points.size())
      throw std::invalid_argument("RawTrack " + flight_id + ": time/point count mismatch");
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (i > 0 && times[i] <= times[i - 1])
        throw std::invalid_argument("RawTrack " + flight_id +
                                    ": timestamps not strictly increasing at index " +
                                    std::to_string(i));
      const auto& p = points[i];
      if (p.lon < -180.0 || p.lon > 180.0 || p.lat < -90.0 || p.lat > 90.0)
        throw std::invalid_argument("RawTrack " + flight_id + ": coordinate out of range");
    }
  }
};

/// Evenly sampled, range-limited arrival trajectory. Sample i is at time
/// t0 + i * dt; the last point is the arrival fix used as the ETA terminus.
struct Trajectory {
  std::string flight_id;
  std::int64_t t0 = 0;
  std::int64_t dt = 10;
  std::vector<TrackPoint> points;
  GeoPoint airport_ref;

  std::int64_t end_time() const {
    return t0 + static_cast<std::int64_t>(points.size() - 1) * dt;
  }
};

/// Great-circle distance in nautical miles.
inline double horizontal_error(const GeoPoint& a, const GeoPoint& b) {
  const double lat1 = a.lat * kDegToRad, lat2 = b.lat * kDegToRad;
  const double dlat = (b.lat - a.lat) * kDegToRad;
  const double dlon = (b.lon - a.lon) * kDegToRad;
  const double s1 = std::sin(dlat / 2.0), s2 = std::sin(dlon / 2.0);
  const double h = s1 * s1 + std::cos(lat1) * std::cos(lat2) * s2 * s2;
  return 2.0 * kEarthRadiusNm * std::asin(std::min(1.0, std::sqrt(h)));
}

inline double vertical_error(double a_alt_ft, double b_alt_ft) {
  return std::abs(a_alt_ft - b_alt_ft);
}

/// Local tangent-plane helpers used by the traffic generator: positions in
/// nautical miles east/north of a reference point.
inline GeoPoint local_to_geo(const GeoPoint& ref, double east_nm, double north_nm) {
  GeoPoint g;
  g.lat = ref.lat + north_nm / 60.0;
  g.lon = ref.lon + east_nm / (60.0 * std::cos(ref.lat * kDegToRad));
  return g;
}

inline double distance_to_ref_nm(const GeoPoint& ref, const GeoPoint& p) {
  return horizontal_error(ref, p);
}

}  // namespace mabert
