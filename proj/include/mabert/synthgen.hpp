#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "mabert/geo.hpp"
#include "mabert/rng.hpp"

namespace mabert {

/// Route node in the airport-local frame (nm east/north of the reference
/// point) with target altitude and speed at that node.
struct Waypoint {
  double east_nm = 0.0;
  double north_nm = 0.0;
  double alt_ft = 0.0;
  double speed_kt = 0.0;
};

struct EntryFix {
  double bearing_deg = 0.0;  // from the airport, clockwise from north
  double range_nm = 75.0;
};

/// Synthetic terminal-area airport: entry fixes feed route templates that
/// funnel onto a common final approach. Arrivals are Poisson per hour
/// with occasional chained followers on the same fix, a minimum in-trail
/// separation is enforced at entry, and a follower that closes in on its
/// leader slows to hold the gap. A flight's motion therefore depends on
/// the preceding traffic on its route — the controller-like interaction
/// multi-agent models can exploit.
struct AirportSpec {
  std::string name = "A";
  GeoPoint ref_point{126.45, 37.46};
  double runway_heading_deg = 330.0;
  std::vector<EntryFix> entry_fixes;
  std::vector<std::vector<Waypoint>> route_templates;  // one per entry fix
  double arrival_rate_per_hr = 3.0;  // base Poisson rate; followers add on top
  double follow_probability = 0.35;  // chance an arrival tows another close behind
  double separation_s = 180.0;
  double lateral_sigma_nm = 0.6;
  double vertical_sigma_ft = 250.0;
  double speed_sigma_kt = 8.0;

  void validate() const {
    if (!(arrival_rate_per_hr > 0.0))
      throw std::invalid_argument("AirportSpec: arrival_rate must be positive");
    if (follow_probability < 0.0 || follow_probability >= 1.0)
      throw std::invalid_argument("AirportSpec: follow_probability must be in [0,1)");
    if (entry_fixes.empty() || entry_fixes.size() != route_templates.size())
      throw std::invalid_argument("AirportSpec: route template per entry fix required");
    for (const auto& f : entry_fixes)
      if (f.range_nm > 78.0)
        throw std::invalid_argument("AirportSpec: entry fix beyond the 70 nm boundary margin");
  }
};

struct TrafficDay {
  std::size_t day_index = 0;
  std::vector<RawTrack> tracks;  // sorted by first timestamp
};

namespace detail {

inline Waypoint polar(double bearing_deg, double range_nm, double alt_ft, double speed_kt) {
  const double b = bearing_deg * kDegToRad;
  return {range_nm * std::sin(b), range_nm * std::cos(b), alt_ft, speed_kt};
}

/// entry fix -> mid merge -> approach gate -> final fix -> threshold,
/// funneling every route onto the runway axis.
inline std::vector<Waypoint> make_route(const EntryFix& fix, double runway_heading_deg) {
  const double final_bearing = runway_heading_deg + 180.0;  // arrivals sit on this side
  const Waypoint entry = polar(fix.bearing_deg, fix.range_nm, 280.0 * fix.range_nm, 280.0);
  const Waypoint gate = polar(final_bearing, 18.0, 6000.0, 210.0);
  const Waypoint faf = polar(final_bearing, 8.0, 2600.0, 170.0);
  const Waypoint thr = polar(final_bearing, 0.8, 300.0, 140.0);
  Waypoint mid;
  mid.east_nm = 0.5 * (entry.east_nm + gate.east_nm);
  mid.north_nm = 0.5 * (entry.north_nm + gate.north_nm);
  mid.alt_ft = 12000.0;
  mid.speed_kt = 250.0;
  return {entry, mid, gate, faf, thr};
}

struct WaypointNoise {
  double east_nm = 0.0;
  double north_nm = 0.0;
  double alt_ft = 0.0;
  double speed_kt = 0.0;
};

struct PendingFlight {
  std::int64_t entry_s = 0;
  std::size_t fix = 0;
  // chain members share one route perturbation (same assigned transition);
  // a small per-flight jitter is added on top at simulation time
  std::vector<WaypointNoise> route_noise;
};

/// Along-route progress of a simulated flight, queried by followers on
/// the same fix.
struct FlightTrace {
  std::vector<std::int64_t> times;
  std::vector<double> s_nm;
  std::vector<double> speed_kt;

  bool active_at(std::int64_t t) const {
    return !times.empty() && t >= times.front() && t <= times.back();
  }
  std::pair<double, double> state_at(std::int64_t t) const {  // (s, speed)
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    const std::size_t hi = static_cast<std::size_t>(it - times.begin());
    if (hi == 0) return {s_nm.front(), speed_kt.front()};
    if (hi == times.size()) return {s_nm.back(), speed_kt.back()};
    const std::size_t lo = hi - 1;
    const double f = static_cast<double>(t - times[lo]) /
                     static_cast<double>(times[hi] - times[lo]);
    return {s_nm[lo] + f * (s_nm[hi] - s_nm[lo]),
            speed_kt[lo] + f * (speed_kt[hi] - speed_kt[lo])};
  }
};

inline std::vector<WaypointNoise> draw_route_noise(const AirportSpec& spec, std::size_t fix,
                                                   Rng& rng) {
  std::vector<WaypointNoise> noise(spec.route_templates[fix].size());
  for (std::size_t i = 0; i < noise.size(); ++i) {
    const double lat_sigma = (i + 1 == noise.size()) ? 0.05 : spec.lateral_sigma_nm;
    noise[i].east_nm = rng.gaussian(0.0, lat_sigma);
    noise[i].north_nm = rng.gaussian(0.0, lat_sigma);
    noise[i].alt_ft = rng.gaussian(0.0, spec.vertical_sigma_ft);
    noise[i].speed_kt = rng.gaussian(0.0, spec.speed_sigma_kt);
  }
  return noise;
}

inline RawTrack simulate_flight(const AirportSpec& spec, const PendingFlight& plan,
                                const std::string& flight_id, Rng& rng,
                                const FlightTrace* leader, FlightTrace& trace_out) {
  const std::size_t fix = plan.fix;
  std::vector<Waypoint> wps = spec.route_templates[fix];
  for (std::size_t i = 0; i < wps.size(); ++i) {
    const WaypointNoise& shared = plan.route_noise[i];
    const double lat_sigma = (i + 1 == wps.size()) ? 0.02 : 0.25 * spec.lateral_sigma_nm;
    wps[i].east_nm += shared.east_nm + rng.gaussian(0.0, lat_sigma);
    wps[i].north_nm += shared.north_nm + rng.gaussian(0.0, lat_sigma);
    wps[i].alt_ft = std::max(150.0, wps[i].alt_ft + shared.alt_ft +
                                        rng.gaussian(0.0, 0.25 * spec.vertical_sigma_ft));
    wps[i].speed_kt = std::max(120.0, wps[i].speed_kt + shared.speed_kt +
                                          rng.gaussian(0.0, 0.25 * spec.speed_sigma_kt));
  }

  std::vector<double> seg_len(wps.size() - 1);
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < wps.size(); ++i) {
    const double de = wps[i + 1].east_nm - wps[i].east_nm;
    const double dn = wps[i + 1].north_nm - wps[i].north_nm;
    seg_len[i] = std::sqrt(de * de + dn * dn);
    total += seg_len[i];
  }

  auto state_at = [&](double s) {
    std::size_t k = 0;
    double acc = 0.0;
    while (k + 1 < seg_len.size() && acc + seg_len[k] < s) acc += seg_len[k++];
    const double f = seg_len[k] > 0.0 ? std::clamp((s - acc) / seg_len[k], 0.0, 1.0) : 0.0;
    Waypoint w;
    w.east_nm = wps[k].east_nm + f * (wps[k + 1].east_nm - wps[k].east_nm);
    w.north_nm = wps[k].north_nm + f * (wps[k + 1].north_nm - wps[k].north_nm);
    w.alt_ft = wps[k].alt_ft + f * (wps[k + 1].alt_ft - wps[k].alt_ft);
    w.speed_kt = wps[k].speed_kt + f * (wps[k + 1].speed_kt - wps[k].speed_kt);
    return w;
  };

  RawTrack track;
  track.flight_id = flight_id;
  std::int64_t t = plan.entry_s;
  double s = 0.0;
  while (true) {
    Waypoint w = state_at(s);
    // in-trail speed adherence: inside the hold zone a follower tracks its
    // leader's speed (slightly below it) instead of flying its own profile
    if (leader && leader->active_at(t)) {
      const auto [leader_s, leader_v] = leader->state_at(t);
      const double gap = leader_s - s;
      const double hold_gap = 1.5 * spec.separation_s / 3600.0 * w.speed_kt;
      if (gap >= 0.0 && gap < hold_gap)
        w.speed_kt = std::min(w.speed_kt * 1.1, std::max(110.0, leader_v * 0.97));
    }
    const GeoPoint g = local_to_geo(spec.ref_point, w.east_nm, w.north_nm);
    track.times.push_back(t);
    track.points.push_back({g.lon, g.lat, w.alt_ft});
    trace_out.times.push_back(t);
    trace_out.s_nm.push_back(s);
    trace_out.speed_kt.push_back(w.speed_kt);
    if (s >= total) break;
    const std::int64_t step = 4 + static_cast<std::int64_t>(rng.below(9));  // 4..12 s
    const double v_nm_s = w.speed_kt / 3600.0;
    double advance = v_nm_s * static_cast<double>(step);
    if (s + advance >= total) {
      const std::int64_t dt_end =
          std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil((total - s) / v_nm_s)));
      t += dt_end;
      s = total;
    } else {
      t += step;
      s += advance;
    }
  }
  return track;
}

}  // namespace detail

/// Seeded multi-day traffic generation. Pure in (spec, days, seed).
inline std::vector<TrafficDay> generate(const AirportSpec& spec, std::size_t days,
                                        std::uint64_t seed) {
  spec.validate();
  Rng base = Rng(seed).child(spec.name);
  std::vector<TrafficDay> out;
  out.reserve(days);
  for (std::size_t day = 0; day < days; ++day) {
    Rng day_rng = base.child("day", day);
    std::vector<detail::PendingFlight> pending;
    const std::int64_t sep = static_cast<std::int64_t>(spec.separation_s);
    for (int hour = 0; hour < 24; ++hour) {
      const int n = day_rng.poisson(spec.arrival_rate_per_hr);
      for (int i = 0; i < n; ++i) {
        detail::PendingFlight f;
        f.entry_s = static_cast<std::int64_t>(day) * 86400 + hour * 3600 +
                    static_cast<std::int64_t>(day_rng.below(3600));
        f.fix = day_rng.below(spec.entry_fixes.size());
        f.route_noise = detail::draw_route_noise(spec, f.fix, day_rng);
        pending.push_back(f);
        // bursty flows: an arrival may tow followers close behind it,
        // spawned inside the adherence zone on the same perturbed route
        std::int64_t tail = pending.back().entry_s;
        while (day_rng.uniform() < spec.follow_probability) {
          tail += sep + static_cast<std::int64_t>(day_rng.below(static_cast<std::uint64_t>(
                      std::max<std::int64_t>(1, sep / 4))));
          detail::PendingFlight follower;
          follower.entry_s = tail;
          follower.fix = f.fix;
          follower.route_noise = f.route_noise;
          pending.push_back(std::move(follower));
        }
      }
    }
    std::stable_sort(pending.begin(), pending.end(),
                     [](const auto& a, const auto& b) { return a.entry_s < b.entry_s; });

    // in-trail rule: delay entries violating the separation on their fix
    std::map<std::size_t, std::int64_t> last_entry;
    for (auto& f : pending) {
      auto it = last_entry.find(f.fix);
      if (it != last_entry.end() && f.entry_s < it->second + sep)
        f.entry_s = it->second + sep;
      last_entry[f.fix] = f.entry_s;
    }

    TrafficDay td;
    td.day_index = day;
    std::map<std::size_t, detail::FlightTrace> last_trace;  // leader per fix
    for (std::size_t i = 0; i < pending.size(); ++i) {
      char id[64];
      std::snprintf(id, sizeof(id), "%s-d%03zu-f%zu-n%04zu", spec.name.c_str(), day,
                    pending[i].fix, i);
      detail::FlightTrace trace;
      const auto it = last_trace.find(pending[i].fix);
      const detail::FlightTrace* leader = it == last_trace.end() ? nullptr : &it->second;
      td.tracks.push_back(detail::simulate_flight(spec, pending[i], id, day_rng, leader, trace));
      last_trace[pending[i].fix] = std::move(trace);
    }
    std::stable_sort(td.tracks.begin(), td.tracks.end(),
                     [](const RawTrack& a, const RawTrack& b) {
                       return a.times.front() < b.times.front();
                     });
    out.push_back(std::move(td));
  }
  return out;
}

struct AirportFamily {
  AirportSpec a;  // large airport, pre-training source
  AirportSpec b;  // nearby airport with similar route geometry
  AirportSpec c;  // distant airport operating very differently
};

/// Three airports standing in for a large pre-training source, a
/// similarly-operated neighbor, and a differently-operated remote field.
/// With the follower chains (expected multiplier 1/(1-p)), the base rates
/// are set so the documented day counts (60/20/20) land near a
/// 418:155:111 trajectory ratio.
inline AirportFamily make_airport_family(std::uint64_t seed) {
  (void)seed;  // geometry is fixed; randomness enters through generate()
  AirportFamily fam;

  auto finish = [](AirportSpec& s) {
    s.route_templates.clear();
    for (const auto& f : s.entry_fixes)
      s.route_templates.push_back(detail::make_route(f, s.runway_heading_deg));
    s.validate();
  };

  fam.a.name = "A";
  fam.a.ref_point = {126.45, 37.46};
  fam.a.runway_heading_deg = 330.0;
  fam.a.entry_fixes = {{20.0, 75.0}, {105.0, 75.0}, {200.0, 75.0}, {290.0, 75.0}};
  fam.a.arrival_rate_per_hr = 1.888;  // ~2.9/hr effective with followers
  finish(fam.a);

  fam.b.name = "B";
  fam.b.ref_point = {127.15, 37.20};
  fam.b.runway_heading_deg = 330.0;
  fam.b.entry_fixes = {{28.0, 75.0}, {99.0, 75.0}, {205.0, 75.0}, {281.0, 75.0}};
  fam.b.arrival_rate_per_hr = 2.096;  // ~3.2/hr effective
  finish(fam.b);

  fam.c.name = "C";
  fam.c.ref_point = {129.00, 35.18};
  fam.c.runway_heading_deg = 150.0;  // reversed runway
  fam.c.entry_fixes = {{120.0, 75.0}, {205.0, 75.0}, {300.0, 75.0}, {30.0, 75.0}};
  fam.c.arrival_rate_per_hr = 1.503;  // ~2.3/hr effective
  finish(fam.c);

  return fam;
}

}  // namespace mabert
