#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mabert/geo.hpp"

namespace mabert {

/// Writes a file atomically: contents land under the final name only once
/// fully written (temp file + rename).
inline void atomic_write(const std::string& path, const std::string& contents) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for write: " + tmp.string());
    os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!os) throw std::runtime_error("short write: " + tmp.string());
  }
  fs::rename(tmp, target);
}

inline std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

constexpr const char* kTrackCsvHeader = "flight_id,timestamp,lon,lat,alt";

/// Reads tracks from `flight_id,timestamp,lon,lat,alt` CSV. Rows for one
/// flight must be contiguous and time-ordered (the generator and the
/// resampler both emit that layout).
inline std::vector<RawTrack> read_tracks_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("empty CSV: " + path);
  if (line != kTrackCsvHeader)
    throw std::runtime_error(path + ": expected header '" + kTrackCsvHeader + "'");

  std::vector<RawTrack> tracks;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string id, ts, lon, lat, alt;
    if (!std::getline(ss, id, ',') || !std::getline(ss, ts, ',') ||
        !std::getline(ss, lon, ',') || !std::getline(ss, lat, ',') ||
        !std::getline(ss, alt, ','))
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed row");
    try {
      if (tracks.empty() || tracks.back().flight_id != id) {
        tracks.push_back(RawTrack{});
        tracks.back().flight_id = id;
      }
      tracks.back().times.push_back(std::stoll(ts));
      tracks.back().points.push_back({std::stod(lon), std::stod(lat), std::stod(alt)});
    } catch (const std::exception&) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad numeric field");
    }
  }
  for (const auto& t : tracks) t.validate();
  return tracks;
}

inline void append_track_csv(std::string& out, const std::string& flight_id,
                             const std::vector<std::int64_t>& times,
                             const std::vector<TrackPoint>& points) {
  char buf[160];
  for (std::size_t i = 0; i < points.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%s,%lld,%.7f,%.7f,%.2f\n", flight_id.c_str(),
                  static_cast<long long>(times[i]), points[i].lon, points[i].lat,
                  points[i].alt);
    out += buf;
  }
}

inline void write_tracks_csv(const std::string& path, const std::vector<RawTrack>& tracks) {
  std::string out = std::string(kTrackCsvHeader) + "\n";
  for (const auto& t : tracks) append_track_csv(out, t.flight_id, t.times, t.points);
  atomic_write(path, out);
}

inline void write_trajectories_csv(const std::string& path,
                                   const std::vector<Trajectory>& trajs) {
  std::string out = std::string(kTrackCsvHeader) + "\n";
  for (const auto& t : trajs) {
    std::vector<std::int64_t> times(t.points.size());
    for (std::size_t i = 0; i < times.size(); ++i)
      times[i] = t.t0 + static_cast<std::int64_t>(i) * t.dt;
    append_track_csv(out, t.flight_id, times, t.points);
  }
  atomic_write(path, out);
}

}  // namespace mabert
