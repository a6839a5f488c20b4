#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mabert/banded.hpp"
#include "mabert/geo.hpp"

namespace mabert {

struct ReconstructionConfig {
  double lambda2 = 1.0;   // acceleration penalty
  double lambda3 = 0.1;   // jerk penalty

  void validate() const {
    if (lambda2 < 0.0 || lambda3 < 0.0)
      throw std::invalid_argument("ReconstructionConfig: weights must be nonnegative");
  }
};

/// Per-second positions on the grid [t0, t0 + pts.size() - 1].
struct DensePositions {
  std::int64_t t0 = 0;
  std::vector<std::array<double, 3>> pts;  // lon, lat, alt
};

namespace detail {

/// Adds lambda * D^T D to the system for the difference stencil `coef`
/// (second order: 1 -2 1, third order: -1 3 -3 1).
inline void add_difference_penalty(SymmetricBanded& sys, double lambda,
                                   const std::vector<double>& coef) {
  if (lambda == 0.0) return;
  const std::size_t n = sys.size();
  const std::size_t w = coef.size();
  if (n < w) return;
  for (std::size_t r = 0; r + w <= n; ++r)
    for (std::size_t a = 0; a < w; ++a)
      for (std::size_t b = 0; b <= a; ++b)
        sys.add(r + a, r + b, lambda * coef[a] * coef[b]);
}

}  // namespace detail

/// Smooths an irregular track onto a per-second grid by minimizing
///   |C P - P~|_F^2 + lambda2 |D2 P|_F^2 + lambda3 |D3 P|_F^2
/// per coordinate, where C marks observed grid seconds and D2/D3 are the
/// second/third-order difference operators. The normal equations are
/// banded (bandwidth 3) and solved by banded Cholesky, O(t) per coordinate.
inline DensePositions reconstruct(const RawTrack& track, const ReconstructionConfig& cfg) {
  track.validate();
  cfg.validate();

  const std::int64_t t0 = track.times.front();
  const std::int64_t t1 = track.times.back();
  const std::size_t n = static_cast<std::size_t>(t1 - t0) + 1;

  std::vector<std::uint8_t> observed(n, 0);
  std::vector<std::array<double, 3>> target(n, {0.0, 0.0, 0.0});
  for (std::size_t i = 0; i < track.times.size(); ++i) {
    const std::size_t g = static_cast<std::size_t>(track.times[i] - t0);
    observed[g] = 1;
    target[g] = {track.points[i].lon, track.points[i].lat, track.points[i].alt};
  }

  SymmetricBanded sys(n, 3);
  for (std::size_t i = 0; i < n; ++i)
    if (observed[i]) sys.add(i, i, 1.0);
  detail::add_difference_penalty(sys, cfg.lambda2, {1.0, -2.0, 1.0});
  detail::add_difference_penalty(sys, cfg.lambda3, {-1.0, 3.0, -3.0, 1.0});
  sys.cholesky();

  DensePositions out;
  out.t0 = t0;
  out.pts.assign(n, {0.0, 0.0, 0.0});
  std::vector<double> rhs(n);
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < n; ++i)
      rhs[i] = observed[i] ? target[i][c] : 0.0;
    const std::vector<double> x = sys.solve(rhs);
    for (std::size_t i = 0; i < n; ++i) out.pts[i][c] = x[i];
  }
  return out;
}

/// Picks the on-grid samples (times divisible by dt) from per-second
/// positions, then drops everything before the last inbound crossing of
/// the cutoff radius. The boundary is closed: a point at exactly
/// cutoff_nm is kept. The final retained point is the arrival fix.
inline Trajectory resample_and_cut(const DensePositions& dense, std::int64_t dt,
                                   const GeoPoint& airport_ref, double cutoff_nm,
                                   const std::string& flight_id) {
  if (dt <= 0) throw std::invalid_argument("resample_and_cut: dt must be positive");
  if (dense.pts.size() < 2) throw std::runtime_error("trajectory too short: " + flight_id);

  const std::int64_t t_first = dense.t0;
  const std::int64_t t_last = dense.t0 + static_cast<std::int64_t>(dense.pts.size()) - 1;
  std::int64_t start = ((t_first + dt - 1) / dt) * dt;  // first grid time >= t_first
  if (t_first < 0) start = -((-t_first) / dt) * dt;     // keep floor semantics for negatives

  std::vector<TrackPoint> sampled;
  std::vector<std::int64_t> times;
  for (std::int64_t t = start; t <= t_last; t += dt) {
    const auto& p = dense.pts[static_cast<std::size_t>(t - dense.t0)];
    sampled.push_back({p[0], p[1], p[2]});
    times.push_back(t);
  }
  if (sampled.size() < 2) throw std::runtime_error("trajectory too short: " + flight_id);

  // last index outside the cutoff radius; keep everything after it
  std::size_t first_kept = 0;
  for (std::size_t i = 0; i < sampled.size(); ++i) {
    const double d = horizontal_error(airport_ref, {sampled[i].lon, sampled[i].lat});
    if (d > cutoff_nm) first_kept = i + 1;
  }
  if (sampled.size() - first_kept < 2)
    throw std::runtime_error("trajectory too short: " + flight_id);

  Trajectory traj;
  traj.flight_id = flight_id;
  traj.dt = dt;
  traj.t0 = times[first_kept];
  traj.airport_ref = airport_ref;
  traj.points.assign(sampled.begin() + static_cast<std::ptrdiff_t>(first_kept), sampled.end());
  return traj;
}

}  // namespace mabert
