#include <catch2/catch_amalgamated.hpp>

#include "mabert/geo.hpp"
#include "mabert/reconstruct.hpp"
#include "mabert/rng.hpp"

using namespace mabert;

namespace {

// dense Gaussian-elimination oracle for the banded solver
std::vector<double> dense_solve(std::vector<std::vector<double>> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    std::swap(a[col], a[pivot]);
    std::swap(b[col], b[pivot]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= a[i][j] * x[j];
    x[i] = s / a[i][i];
  }
  return x;
}

// dense normal-equation matrix for the reconstruction objective
std::vector<std::vector<double>> dense_system(const std::vector<std::uint8_t>& obs,
                                              double l2, double l3) {
  const std::size_t n = obs.size();
  std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    if (obs[i]) a[i][i] += 1.0;
  const auto add = [&](const std::vector<double>& coef, double lambda) {
    if (lambda == 0.0 || n < coef.size()) return;
    for (std::size_t r = 0; r + coef.size() <= n; ++r)
      for (std::size_t p = 0; p < coef.size(); ++p)
        for (std::size_t q = 0; q < coef.size(); ++q)
          a[r + p][r + q] += lambda * coef[p] * coef[q];
  };
  add({1.0, -2.0, 1.0}, l2);
  add({-1.0, 3.0, -3.0, 1.0}, l3);
  return a;
}

double d2_norm_sq(const std::vector<double>& x) {
  double s = 0.0;
  for (std::size_t i = 0; i + 2 < x.size(); ++i) {
    const double d = x[i] - 2.0 * x[i + 1] + x[i + 2];
    s += d * d;
  }
  return s;
}

RawTrack track_from(const std::vector<std::int64_t>& times, const std::vector<double>& vals) {
  RawTrack t;
  t.flight_id = "T";
  t.times = times;
  for (double v : vals) t.points.push_back({v * 1e-3, v * 1e-3, v});
  return t;
}

}  // namespace

TEST_CASE("horizontal error is a haversine distance in nautical miles") {
  CHECK(horizontal_error({12.3, 45.6}, {12.3, 45.6}) == 0.0);
  CHECK(horizontal_error({0.0, 0.0}, {0.0, 1.0}) == Catch::Approx(60.0).margin(0.1));
  CHECK(horizontal_error({10.0, 20.0}, {11.0, 21.0}) ==
        Catch::Approx(horizontal_error({11.0, 21.0}, {10.0, 20.0})).margin(1e-12));
}

TEST_CASE("horizontal error satisfies the triangle inequality") {
  Rng rng(11);
  for (int k = 0; k < 200; ++k) {
    const GeoPoint a{rng.uniform(-180, 180), rng.uniform(-80, 80)};
    const GeoPoint b{rng.uniform(-180, 180), rng.uniform(-80, 80)};
    const GeoPoint c{rng.uniform(-180, 180), rng.uniform(-80, 80)};
    CHECK(horizontal_error(a, c) <= horizontal_error(a, b) + horizontal_error(b, c) + 1e-9);
  }
}

TEST_CASE("vertical error") {
  CHECK(vertical_error(100, 100) == 0.0);
  CHECK(vertical_error(1000, 250) == 750.0);
  Rng rng(3);
  for (int k = 0; k < 50; ++k)
    CHECK(vertical_error(rng.uniform(0, 40000), rng.uniform(0, 40000)) >= 0.0);
}

TEST_CASE("banded cholesky agrees with a dense solver") {
  Rng rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 5 + rng.below(46);  // t <= 50
    std::vector<std::uint8_t> obs(n, 0);
    std::size_t n_obs = 0;
    for (auto& o : obs)
      if (rng.uniform() < 0.4) {
        o = 1;
        ++n_obs;
      }
    if (n_obs < 4) {
      obs[0] = obs[n / 2] = obs[n - 1] = obs[1] = 1;
    }
    const double l2 = rng.uniform(0.01, 10.0);
    const double l3 = rng.uniform(0.0, 1.0);

    SymmetricBanded sys(n, 3);
    for (std::size_t i = 0; i < n; ++i)
      if (obs[i]) sys.add(i, i, 1.0);
    detail::add_difference_penalty(sys, l2, {1.0, -2.0, 1.0});
    detail::add_difference_penalty(sys, l3, {-1.0, 3.0, -3.0, 1.0});
    sys.cholesky();

    std::vector<double> rhs(n);
    for (auto& v : rhs) v = rng.gaussian();
    const auto x = sys.solve(rhs);
    const auto x_ref = dense_solve(dense_system(obs, l2, l3), rhs);
    for (std::size_t i = 0; i < n; ++i) {
      const double denom = std::max(std::abs(x_ref[i]), 1.0);
      CHECK(std::abs(x[i] - x_ref[i]) / denom < 1e-8);
    }
  }
}

TEST_CASE("reconstruction is the identity when fully observed with zero smoothing") {
  std::vector<std::int64_t> times;
  std::vector<double> vals;
  Rng rng(5);
  for (int i = 0; i <= 20; ++i) {
    times.push_back(i);
    vals.push_back(rng.uniform(0, 100));
  }
  const auto dense = reconstruct(track_from(times, vals), {0.0, 0.0});
  REQUIRE(dense.pts.size() == 21);
  for (std::size_t i = 0; i < dense.pts.size(); ++i)
    CHECK(std::abs(dense.pts[i][2] - vals[i]) < 1e-9);
}

TEST_CASE("strong acceleration penalty pulls endpoints onto the straight line") {
  RawTrack t;
  t.flight_id = "line";
  t.times = {0, 10};
  t.points.push_back({0.0, 0.0, 0.0});
  t.points.push_back({10.0, 10.0, 10.0});
  const auto dense = reconstruct(t, {1e6, 0.0});
  REQUIRE(dense.pts.size() == 11);
  for (int i = 0; i <= 10; ++i) {
    CHECK(std::abs(dense.pts[i][0] - i) < 1e-3);
    CHECK(std::abs(dense.pts[i][2] - i) < 1e-3);
  }
  // cross-check one coordinate against the dense oracle
  std::vector<std::uint8_t> obs(11, 0);
  obs[0] = obs[10] = 1;
  std::vector<double> rhs(11, 0.0);
  rhs[10] = 10.0;
  const auto x_ref = dense_solve(dense_system(obs, 1e6, 0.0), rhs);
  for (int i = 0; i <= 10; ++i) CHECK(std::abs(dense.pts[i][2] - x_ref[i]) < 1e-6);
}

TEST_CASE("smoothing beats the piecewise-linear interpolant on the D2 norm") {
  const std::vector<std::int64_t> times = {0, 5, 10, 15, 20};
  const std::vector<double> vals = {0.0, 9.0, 3.0, 14.0, 6.0};
  const auto dense = reconstruct(track_from(times, vals), {1.0, 0.0});
  std::vector<double> smooth, interp;
  for (std::size_t i = 0; i < dense.pts.size(); ++i) smooth.push_back(dense.pts[i][2]);
  for (std::size_t k = 0; k + 1 < times.size(); ++k)
    for (std::int64_t t = times[k]; t < times[k + 1]; ++t) {
      const double f = static_cast<double>(t - times[k]) /
                       static_cast<double>(times[k + 1] - times[k]);
      interp.push_back(vals[k] + f * (vals[k + 1] - vals[k]));
    }
  interp.push_back(vals.back());
  REQUIRE(interp.size() == smooth.size());
  CHECK(d2_norm_sq(smooth) < d2_norm_sq(interp));
}

TEST_CASE("D2 norm is nonincreasing in lambda2") {
  std::vector<std::int64_t> times;
  std::vector<double> vals;
  Rng rng(9);
  for (int i = 0; i <= 40; ++i) {
    times.push_back(i);
    vals.push_back(std::sin(0.3 * i) * 10.0 + rng.gaussian(0.0, 1.0));
  }
  double prev = -1.0;
  for (const double l2 : {0.0, 0.1, 1.0, 10.0, 100.0}) {
    const auto dense = reconstruct(track_from(times, vals), {l2, 0.1});
    std::vector<double> x;
    for (const auto& p : dense.pts) x.push_back(p[2]);
    const double norm = d2_norm_sq(x);
    if (prev >= 0.0) CHECK(norm <= prev + 1e-12);
    prev = norm;
  }
}

TEST_CASE("unobserved grid times with no smoothing are underdetermined") {
  RawTrack t;
  t.flight_id = "gap";
  t.times = {0, 2, 10};
  t.points = {{0, 0, 0}, {1, 1, 100}, {2, 2, 200}};
  CHECK_THROWS_WITH(reconstruct(t, {0.0, 0.0}),
                    Catch::Matchers::ContainsSubstring("underdetermined reconstruction"));
}

TEST_CASE("raw track validation") {
  RawTrack t;
  t.flight_id = "bad";
  t.times = {0};
  t.points = {{0, 0, 0}};
  CHECK_THROWS(t.validate());
  t.times = {0, 0};
  t.points.push_back({0, 0, 0});
  CHECK_THROWS(t.validate());
  t.times = {0, 5};
  t.points[1] = {200.0, 0, 0};  // lon out of range
  CHECK_THROWS(t.validate());
}

namespace {

/// Inbound radial track: straight line toward the airport at constant speed.
DensePositions radial_positions(double start_nm, double speed_kt, std::int64_t seconds) {
  DensePositions dense;
  dense.t0 = 0;
  const GeoPoint ref{0.0, 0.0};
  for (std::int64_t t = 0; t <= seconds; ++t) {
    const double range = start_nm - speed_kt / 3600.0 * static_cast<double>(t);
    const GeoPoint g = local_to_geo(ref, 0.0, range);
    dense.pts.push_back({g.lon, g.lat, 10000.0});
  }
  return dense;
}

}  // namespace

TEST_CASE("resampling keeps a fully inside trajectory intact") {
  const auto dense = radial_positions(50.0, 250.0, 600);
  const auto traj = resample_and_cut(dense, 10, {0.0, 0.0}, 70.0, "in");
  CHECK(traj.points.size() == 61);
  CHECK(traj.t0 == 0);
  CHECK(traj.dt == 10);
  // every point must be on the 10 s grid of the dense positions
  for (std::size_t i = 0; i < traj.points.size(); ++i)
    CHECK(traj.points[i].lat ==
          Catch::Approx(dense.pts[10 * i][1]).margin(0.0));
}

TEST_CASE("a point exactly on the cutoff boundary is retained") {
  DensePositions dense;
  dense.t0 = 0;
  const GeoPoint ref{0.0, 0.0};
  // largest latitude whose computed distance is exactly <= 70 nm
  double deg70 = 70.0 / (kEarthRadiusNm * kDegToRad);
  while (horizontal_error(ref, {0.0, deg70}) > 70.0) deg70 = std::nextafter(deg70, 0.0);
  REQUIRE(horizontal_error(ref, {0.0, deg70}) == Catch::Approx(70.0).margin(1e-9));
  for (int t = 0; t <= 30; ++t) {
    const double lat = deg70 * (1.0 - static_cast<double>(t) / 300.0);
    dense.pts.push_back({0.0, lat, 5000.0});
  }
  const auto traj = resample_and_cut(dense, 10, ref, 70.0, "edge");
  REQUIRE(traj.points.size() == 4);  // t = 0, 10, 20, 30 all kept
  CHECK(horizontal_error(ref, {traj.points[0].lon, traj.points[0].lat}) ==
        Catch::Approx(70.0).margin(1e-6));
}

TEST_CASE("inbound radial is cut just inside the boundary") {
  const double speed_kt = 250.0;
  const auto dense = radial_positions(100.0, speed_kt, 1300);
  const auto traj = resample_and_cut(dense, 10, {0.0, 0.0}, 70.0, "radial");
  const double first_dist =
      horizontal_error({0.0, 0.0}, {traj.points.front().lon, traj.points.front().lat});
  const double per_sample_nm = speed_kt / 3600.0 * 10.0;
  CHECK(first_dist <= 70.0);
  CHECK(first_dist > 70.0 - per_sample_nm);
}

TEST_CASE("too few points after the cut is an error") {
  const auto dense = radial_positions(100.0, 250.0, 30);  // never reaches 70 nm
  CHECK_THROWS_WITH(resample_and_cut(dense, 10, {0.0, 0.0}, 70.0, "short"),
                    Catch::Matchers::ContainsSubstring("trajectory too short"));
}
