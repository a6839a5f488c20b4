#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mabert/decoder.hpp"
#include "mabert/encoder.hpp"

namespace mabert {

/// Affine scaler for scalar regression targets.
struct LabelScaler {
  double mean = 0.0;
  double std = 1.0;

  double normalize(double v) const { return (v - mean) / std; }
  double denormalize(double v) const { return v * std + mean; }

  static LabelScaler fit(const std::vector<double>& labels) {
    LabelScaler s;
    if (labels.empty()) return s;
    double sum = 0.0, sumsq = 0.0;
    for (double v : labels) {
      sum += v;
      sumsq += v * v;
    }
    s.mean = sum / static_cast<double>(labels.size());
    const double var = sumsq / static_cast<double>(labels.size()) - s.mean * s.mean;
    s.std = std::sqrt(std::max(var, 1e-18));  // guard degenerate label sets
    return s;
  }
};

/// Encoder, optional task head, and the data scalers they were trained
/// with. Copyable by value; parameter pointers are materialized on demand.
struct Model {
  ModelConfig cfg;
  EncoderStack encoder;
  std::optional<DecoderHead> decoder;
  Normalizer norm;
  LabelScaler eta_scaler;

  Model() = default;
  explicit Model(const ModelConfig& c) : cfg(c), encoder(c) {}

  static Model create(const ModelConfig& c, Rng& rng) {
    Model m(c);
    m.encoder.init(rng);
    return m;
  }

  void add_decoder(std::size_t out_dim, Rng& rng) {
    decoder.emplace(cfg, out_dim);
    decoder->init(rng);
  }

  std::vector<std::pair<std::string, Param*>> registry() {
    std::vector<std::pair<std::string, Param*>> out;
    encoder.collect(out);
    if (decoder) decoder->collect(out);
    return out;
  }

  std::vector<Param*> params() {
    std::vector<Param*> out;
    for (auto& [name, p] : registry()) out.push_back(p);
    return out;
  }

  void zero_grads() {
    for (Param* p : params()) p->zero_grad();
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (Param* p : params()) n += p->value.size();
    return n;
  }
};

/// Exact trainable-scalar count from the configuration alone; matched
/// against the registry in tests and reported in run logs.
inline std::size_t parameter_count(const ModelConfig& cfg, bool with_decoder = false,
                                   std::size_t O = 1) {
  const std::size_t d = cfg.d, dff = cfg.d_ff, F = cfg.F;
  const std::size_t attn = 4 * d * d;  // both attention flavors hold 4 d x d maps
  const std::size_t ffn = d * dff + dff + dff * d + d;
  const std::size_t norms = 2 * (2 * d);
  const std::size_t layer = attn + ffn + norms;
  std::size_t total = (F * d + d) + d + cfg.n_layers * layer + (d * F + F);
  if (with_decoder)
    total += (F * d + d) + attn + ffn + norms + (d * O + O);
  return total;
}

}  // namespace mabert
