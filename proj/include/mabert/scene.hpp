#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mabert/geo.hpp"
#include "mabert/tensor.hpp"

namespace mabert {

/// One fixed window of multi-agent traffic. Per agent, samples are stored
/// compactly at steps [0, valid_len) and zero-padded after; entry_step
/// records where the agent's first sample sits relative to the window, so
/// positional encodings can use true scene time. data is (N, T, F)
/// row-major with F = 3 (lon, lat, alt).
struct Scene {
  std::int64_t window_start = 0;  // seconds
  std::int64_t dt = 10;           // seconds
  std::size_t N = 0;
  std::size_t T = 0;
  std::size_t F = 3;
  Tensor data;                           // (N, T, F)
  std::vector<std::size_t> valid_len;    // t_n per agent, 1..T
  std::vector<std::size_t> entry_step;   // first occupied window step
  std::vector<std::int64_t> arrival_s;   // absolute time of the flight's final point
  std::vector<std::string> agent_ids;

  double& at(std::size_t n, std::size_t t, std::size_t f) {
    return data[(n * T + t) * F + f];
  }
  double at(std::size_t n, std::size_t t, std::size_t f) const {
    return data[(n * T + t) * F + f];
  }

  /// Absolute time of agent n's last sample inside this window.
  std::int64_t agent_last_time(std::size_t n) const {
    return window_start +
           static_cast<std::int64_t>(entry_step[n] + valid_len[n] - 1) * dt;
  }
  /// Absolute time of the scene's final step.
  std::int64_t end_time() const {
    return window_start + static_cast<std::int64_t>(T - 1) * dt;
  }

  void validate() const {
    if (N < 1 || T < 1) throw std::invalid_argument("Scene: empty");
    if (valid_len.size() != N || entry_step.size() != N || arrival_s.size() != N ||
        agent_ids.size() != N)
      throw std::invalid_argument("Scene: per-agent array size mismatch");
    for (std::size_t n = 0; n < N; ++n) {
      if (valid_len[n] < 1 || valid_len[n] > T)
        throw std::invalid_argument("Scene: valid_len out of range");
      if (entry_step[n] + valid_len[n] > T)
        throw std::invalid_argument("Scene: agent overruns window");
    }
  }
};

/// Attention masks for one scene, in time-major slot order: slot(t, n) =
/// t * N + n. agent_mask is 1 where row and column slots belong to the
/// same agent; pad_mask marks slots without a real sample.
struct SceneMask {
  std::size_t N = 0, T = 0;
  std::vector<std::uint8_t> agent_mask;  // (NT) x (NT)
  std::vector<std::uint8_t> pad_mask;    // NT

  std::size_t nt() const { return N * T; }
  std::uint8_t agent(std::size_t row, std::size_t col) const {
    return agent_mask[row * nt() + col];
  }
};

inline std::size_t scene_slot(std::size_t t, std::size_t n, std::size_t N) {
  return t * N + n;
}

/// Works for batch-padded scenes too: a ghost agent (valid_len 0) is
/// fully pad-masked.
inline SceneMask build_masks(const Scene& scene) {
  const std::size_t N = scene.N, T = scene.T, NT = N * T;
  SceneMask m;
  m.N = N;
  m.T = T;
  m.agent_mask.assign(NT * NT, 0);
  m.pad_mask.assign(NT, 0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t row = scene_slot(t, n, N);
      if (t >= scene.valid_len[n]) m.pad_mask[row] = 1;
      for (std::size_t s = 0; s < T; ++s)
        m.agent_mask[row * NT + scene_slot(s, n, N)] = 1;
    }
  return m;
}

/// Sinusoidal positional encoding table: row t, column i is
/// sin(t / 10000^(i/d)) for even i and cos(t / 10000^((i-1)/d)) for odd i.
struct PositionalEncoding {
  Tensor table;  // (T_max, d)
};

inline PositionalEncoding positional_encoding(std::size_t t_max, std::size_t d) {
  if (d % 2 != 0) throw std::invalid_argument("positional_encoding: d must be even");
  PositionalEncoding pe;
  pe.table = Tensor::zeros(t_max, d);
  for (std::size_t t = 0; t < t_max; ++t)
    for (std::size_t i = 0; i < d; ++i) {
      const double expo = static_cast<double>(i % 2 == 0 ? i : i - 1) / static_cast<double>(d);
      const double angle = static_cast<double>(t) / std::pow(10000.0, expo);
      pe.table(t, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

/// Per-feature affine normalizer fitted on the training split.
struct Normalizer {
  std::vector<double> mean;  // size F
  std::vector<double> std;   // size F, strictly positive

  Normalizer() = default;
  Normalizer(std::vector<double> m, std::vector<double> s)
      : mean(std::move(m)), std(std::move(s)) {
    for (double v : std)
      if (!(v > 0.0))
        throw std::invalid_argument("Normalizer: std must be positive (constant feature?)");
  }

  std::size_t features() const { return mean.size(); }

  static Normalizer fit(const std::vector<const Scene*>& scenes) {
    if (scenes.empty()) throw std::invalid_argument("Normalizer::fit: no scenes");
    const std::size_t F = scenes.front()->F;
    std::vector<double> sum(F, 0.0), sumsq(F, 0.0);
    std::size_t count = 0;
    for (const Scene* s : scenes)
      for (std::size_t n = 0; n < s->N; ++n)
        for (std::size_t t = 0; t < s->valid_len[n]; ++t) {
          for (std::size_t f = 0; f < F; ++f) {
            const double v = s->at(n, t, f);
            sum[f] += v;
            sumsq[f] += v * v;
          }
          ++count;
        }
    std::vector<double> mean(F), stddev(F);
    for (std::size_t f = 0; f < F; ++f) {
      mean[f] = sum[f] / static_cast<double>(count);
      const double var = sumsq[f] / static_cast<double>(count) - mean[f] * mean[f];
      stddev[f] = std::sqrt(std::max(var, 0.0));
    }
    return Normalizer(mean, stddev);
  }
};

/// Applies (x - mean) / std to valid entries; padding stays exactly zero.
inline Scene normalize(const Scene& scene, const Normalizer& norm) {
  if (norm.features() != scene.F)
    throw std::invalid_argument("normalize: feature count mismatch");
  Scene out = scene;
  for (std::size_t n = 0; n < scene.N; ++n)
    for (std::size_t t = 0; t < scene.valid_len[n]; ++t)
      for (std::size_t f = 0; f < scene.F; ++f)
        out.at(n, t, f) = (scene.at(n, t, f) - norm.mean[f]) / norm.std[f];
  return out;
}

inline Scene denormalize(const Scene& scene, const Normalizer& norm) {
  if (norm.features() != scene.F)
    throw std::invalid_argument("denormalize: feature count mismatch");
  Scene out = scene;
  for (std::size_t n = 0; n < scene.N; ++n)
    for (std::size_t t = 0; t < scene.valid_len[n]; ++t)
      for (std::size_t f = 0; f < scene.F; ++f)
        out.at(n, t, f) = scene.at(n, t, f) * norm.std[f] + norm.mean[f];
  return out;
}

inline std::array<double, 3> denormalize_point(const double* v, const Normalizer& norm) {
  return {v[0] * norm.std[0] + norm.mean[0], v[1] * norm.std[1] + norm.mean[1],
          v[2] * norm.std[2] + norm.mean[2]};
}

/// Carves trajectories into consecutive non-overlapping windows of t_max
/// steps anchored at the earliest sample. A flight spanning several
/// windows contributes one segment per window. Agents are ordered by
/// first appearance, ties broken by flight id. Empty windows are skipped.
inline std::vector<Scene> assemble_scenes(const std::vector<Trajectory>& trajectories,
                                          std::size_t t_max, std::int64_t dt) {
  if (t_max < 1) throw std::invalid_argument("assemble_scenes: t_max must be >= 1");
  std::vector<Scene> scenes;
  if (trajectories.empty()) return scenes;

  std::int64_t anchor = trajectories.front().t0;
  for (const auto& tr : trajectories) {
    if (tr.dt != dt) throw std::invalid_argument("assemble_scenes: trajectory dt mismatch");
    if (tr.t0 % dt != 0)
      throw std::invalid_argument("assemble_scenes: trajectory not on the dt grid");
    anchor = std::min(anchor, tr.t0);
  }
  const std::int64_t window_len = static_cast<std::int64_t>(t_max) * dt;

  struct Segment {
    const Trajectory* traj;
    std::size_t first_sample;  // index into traj->points
    std::size_t count;
    std::size_t entry_step;    // window-relative step of first sample
  };
  std::map<std::int64_t, std::vector<Segment>> by_window;

  for (const auto& tr : trajectories) {
    const std::int64_t first_step = (tr.t0 - anchor) / dt;
    const std::size_t len = tr.points.size();
    std::size_t i = 0;
    while (i < len) {
      const std::int64_t step = first_step + static_cast<std::int64_t>(i);
      const std::int64_t w = step / static_cast<std::int64_t>(t_max);
      const std::size_t entry = static_cast<std::size_t>(step - w * static_cast<std::int64_t>(t_max));
      const std::size_t room = t_max - entry;
      const std::size_t take = std::min(room, len - i);
      by_window[w].push_back({&tr, i, take, entry});
      i += take;
    }
  }

  for (auto& [w, segs] : by_window) {
    std::stable_sort(segs.begin(), segs.end(), [](const Segment& a, const Segment& b) {
      if (a.entry_step != b.entry_step) return a.entry_step < b.entry_step;
      return a.traj->flight_id < b.traj->flight_id;
    });
    Scene sc;
    sc.window_start = anchor + w * window_len;
    sc.dt = dt;
    sc.N = segs.size();
    sc.F = 3;
    sc.T = 0;
    for (const auto& s : segs) sc.T = std::max(sc.T, s.entry_step + s.count);
    sc.data = Tensor({sc.N, sc.T, sc.F});
    for (const auto& s : segs) {
      const std::size_t n = sc.valid_len.size();
      sc.valid_len.push_back(s.count);
      sc.entry_step.push_back(s.entry_step);
      sc.arrival_s.push_back(s.traj->end_time());
      sc.agent_ids.push_back(s.traj->flight_id);
      for (std::size_t t = 0; t < s.count; ++t) {
        const TrackPoint& p = s.traj->points[s.first_sample + t];
        sc.at(n, t, 0) = p.lon;
        sc.at(n, t, 1) = p.lat;
        sc.at(n, t, 2) = p.alt;
      }
    }
    sc.validate();
    scenes.push_back(std::move(sc));
  }
  return scenes;
}

/// Pads every scene in the list to the same agent count and step count.
/// Ghost agents get valid_len 0 and stay fully pad-masked; the model's
/// output at every real slot is unchanged by the padding.
struct PaddedScene {
  Scene scene;                         // data padded to (maxN, maxT, F)
  std::size_t real_agents = 0;         // agents that exist in the source scene
};

inline std::vector<PaddedScene> batch(const std::vector<const Scene*>& scenes) {
  if (scenes.empty()) throw std::invalid_argument("batch: empty scene list");
  std::size_t max_n = 0, max_t = 0;
  for (const Scene* s : scenes) {
    max_n = std::max(max_n, s->N);
    max_t = std::max(max_t, s->T);
  }
  std::vector<PaddedScene> out;
  out.reserve(scenes.size());
  for (const Scene* s : scenes) {
    PaddedScene p;
    p.real_agents = s->N;
    Scene& sc = p.scene;
    sc.window_start = s->window_start;
    sc.dt = s->dt;
    sc.N = max_n;
    sc.T = max_t;
    sc.F = s->F;
    sc.data = Tensor({max_n, max_t, s->F});
    for (std::size_t n = 0; n < s->N; ++n)
      for (std::size_t t = 0; t < s->valid_len[n]; ++t)
        for (std::size_t f = 0; f < s->F; ++f) sc.at(n, t, f) = s->at(n, t, f);
    sc.valid_len = s->valid_len;
    sc.entry_step = s->entry_step;
    sc.arrival_s = s->arrival_s;
    sc.agent_ids = s->agent_ids;
    sc.valid_len.resize(max_n, 0);
    sc.entry_step.resize(max_n, 0);
    sc.arrival_s.resize(max_n, 0);
    sc.agent_ids.resize(max_n, "");
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace mabert
