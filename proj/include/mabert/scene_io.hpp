#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "mabert/scene.hpp"
#include "mabert/track_io.hpp"

namespace mabert {

static_assert(std::endian::native == std::endian::little,
              "scene container assumes a little-endian host");

// Scene container layout (all integers little-endian):
//   magic "MBSC", u32 version (1), u64 scene count
//   per scene:
//     i64 window_start, i64 dt, u32 N, u32 T, u32 F
//     u32 valid_len[N], u32 entry_step[N], i64 arrival_s[N]
//     per agent: u32 id length, id bytes
//     f32 payload, N*T*F values, row-major (agent, time, feature)
constexpr char kSceneMagic[4] = {'M', 'B', 'S', 'C'};
constexpr std::uint32_t kSceneVersion = 1;

namespace detail {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw std::runtime_error("scene container truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace detail

inline std::string encode_scenes(const std::vector<Scene>& scenes) {
  std::string out;
  out.append(kSceneMagic, 4);
  detail::put<std::uint32_t>(out, kSceneVersion);
  detail::put<std::uint64_t>(out, scenes.size());
  for (const Scene& s : scenes) {
    detail::put<std::int64_t>(out, s.window_start);
    detail::put<std::int64_t>(out, s.dt);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(s.N));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(s.T));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(s.F));
    for (std::size_t n = 0; n < s.N; ++n)
      detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(s.valid_len[n]));
    for (std::size_t n = 0; n < s.N; ++n)
      detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(s.entry_step[n]));
    for (std::size_t n = 0; n < s.N; ++n) detail::put<std::int64_t>(out, s.arrival_s[n]);
    for (std::size_t n = 0; n < s.N; ++n) {
      detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(s.agent_ids[n].size()));
      out += s.agent_ids[n];
    }
    for (std::size_t i = 0; i < s.data.size(); ++i)
      detail::put<float>(out, static_cast<float>(s.data[i]));
  }
  return out;
}

inline std::vector<Scene> decode_scenes(const std::string& in) {
  std::size_t pos = 0;
  if (in.size() < 4 || std::memcmp(in.data(), kSceneMagic, 4) != 0)
    throw std::runtime_error("scene container: bad magic");
  pos = 4;
  const auto version = detail::take<std::uint32_t>(in, pos);
  if (version != kSceneVersion)
    throw std::runtime_error("scene container: unknown version " + std::to_string(version));
  const auto count = detail::take<std::uint64_t>(in, pos);
  std::vector<Scene> scenes;
  scenes.reserve(count);
  for (std::uint64_t k = 0; k < count; ++k) {
    Scene s;
    s.window_start = detail::take<std::int64_t>(in, pos);
    s.dt = detail::take<std::int64_t>(in, pos);
    s.N = detail::take<std::uint32_t>(in, pos);
    s.T = detail::take<std::uint32_t>(in, pos);
    s.F = detail::take<std::uint32_t>(in, pos);
    s.valid_len.resize(s.N);
    s.entry_step.resize(s.N);
    s.arrival_s.resize(s.N);
    s.agent_ids.resize(s.N);
    for (std::size_t n = 0; n < s.N; ++n)
      s.valid_len[n] = detail::take<std::uint32_t>(in, pos);
    for (std::size_t n = 0; n < s.N; ++n)
      s.entry_step[n] = detail::take<std::uint32_t>(in, pos);
    for (std::size_t n = 0; n < s.N; ++n) s.arrival_s[n] = detail::take<std::int64_t>(in, pos);
    for (std::size_t n = 0; n < s.N; ++n) {
      const auto len = detail::take<std::uint32_t>(in, pos);
      if (pos + len > in.size()) throw std::runtime_error("scene container truncated");
      s.agent_ids[n].assign(in.data() + pos, len);
      pos += len;
    }
    s.data = Tensor({s.N, s.T, s.F});
    for (std::size_t i = 0; i < s.data.size(); ++i)
      s.data[i] = static_cast<double>(detail::take<float>(in, pos));
    s.validate();
    scenes.push_back(std::move(s));
  }
  if (pos != in.size()) throw std::runtime_error("scene container: trailing bytes");
  return scenes;
}

inline void write_scenes(const std::string& path, const std::vector<Scene>& scenes) {
  atomic_write(path, encode_scenes(scenes));
}

inline std::vector<Scene> read_scenes(const std::string& path) {
  return decode_scenes(read_file(path));
}

}  // namespace mabert
