#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mabert/attention.hpp"
#include "mabert/nn.hpp"
#include "mabert/scene.hpp"

namespace mabert {

enum class Variant { agent_aware, multi_head };

inline const char* variant_name(Variant v) {
  return v == Variant::agent_aware ? "agent_aware" : "multi_head";
}

inline Variant variant_from(const std::string& s) {
  if (s == "agent_aware") return Variant::agent_aware;
  if (s == "multi_head") return Variant::multi_head;
  throw std::invalid_argument("unknown model variant: " + s);
}

struct ModelConfig {
  Variant variant = Variant::agent_aware;
  std::size_t d = 32;
  std::size_t d_ff = 64;
  std::size_t n_layers = 2;
  std::size_t h = 4;  // heads, multi_head variant only
  std::size_t F = 3;
  std::size_t T_max = 60;
  double dropout_pretrain = 0.1;
  double dropout_finetune = 0.0;

  void validate() const {
    if (d < 1 || d_ff < 1 || n_layers < 1 || h < 1 || F < 1 || T_max < 1)
      throw std::invalid_argument("ModelConfig: all dimensions must be >= 1");
    if (d % 2 != 0) throw std::invalid_argument("ModelConfig: d must be even");
    if (d % h != 0) throw std::invalid_argument("ModelConfig: d must be divisible by h");
    if (dropout_pretrain < 0.0 || dropout_pretrain >= 1.0 || dropout_finetune < 0.0 ||
        dropout_finetune >= 1.0)
      throw std::invalid_argument("ModelConfig: dropout must be in [0,1)");
  }

  bool operator==(const ModelConfig&) const = default;
};

struct DropoutCtx {
  bool train = false;
  double p = 0.0;
  Rng* rng = nullptr;
};

/// Contiguous span of one agent's valid steps whose inputs get replaced by
/// the learned mask embedding (pre-training target, prediction window).
struct SpanMask {
  std::size_t agent = 0;
  std::size_t start = 0;  // compact step index within the agent
  std::size_t len = 0;
};

/// A scene packed for the network: rows in time-major slot order
/// (slot(t, n) = t*N + n), zero rows for padding.
struct SceneInput {
  std::size_t N = 0, T = 0, F = 0;
  Tensor x;  // (N*T, F)
  std::vector<std::size_t> valid_len;
  std::vector<std::size_t> entry_step;
  std::vector<std::uint8_t> slot_valid;  // NT
  std::vector<double> key_bias;          // NT, 0 or kMaskedLogit

  std::size_t nt() const { return N * T; }
  std::size_t slot(std::size_t t, std::size_t n) const { return t * N + n; }
};

inline SceneInput make_scene_input(const Scene& scene) {
  SceneInput in;
  in.N = scene.N;
  in.T = scene.T;
  in.F = scene.F;
  in.valid_len = scene.valid_len;
  in.entry_step = scene.entry_step;
  const std::size_t nt = scene.N * scene.T;
  in.x = Tensor::zeros(nt, scene.F);
  in.slot_valid.assign(nt, 0);
  in.key_bias.assign(nt, kMaskedLogit);
  for (std::size_t n = 0; n < scene.N; ++n)
    for (std::size_t t = 0; t < scene.valid_len[n]; ++t) {
      const std::size_t s = in.slot(t, n);
      in.slot_valid[s] = 1;
      in.key_bias[s] = 0.0;
      for (std::size_t f = 0; f < scene.F; ++f) in.x(s, f) = scene.at(n, t, f);
    }
  return in;
}

/// One encoder block: attention, residual + layer norm, feed-forward,
/// residual + layer norm. Dropout sits on the attention and feed-forward
/// outputs, before each residual addition.
struct EncoderLayer {
  Variant variant = Variant::agent_aware;
  AgentAwareAttention attn;
  MultiHeadAttention mha;
  Linear ff1, ff2;
  LayerNorm ln1, ln2;
  Dropout drop1, drop2;

  EncoderLayer() = default;
  EncoderLayer(const ModelConfig& cfg)
      : variant(cfg.variant),
        ff1(cfg.d, cfg.d_ff),
        ff2(cfg.d_ff, cfg.d),
        ln1(cfg.d),
        ln2(cfg.d) {
    if (variant == Variant::agent_aware)
      attn = AgentAwareAttention(cfg.d);
    else
      mha = MultiHeadAttention(cfg.d, cfg.h);
  }

  void init(Rng& rng) {
    if (variant == Variant::agent_aware)
      attn.init(rng);
    else
      mha.init(rng);
    ff1.init(rng);
    ff2.init(rng);
  }

  void collect(std::vector<std::pair<std::string, Param*>>& out, const std::string& prefix) {
    if (variant == Variant::agent_aware) {
      out.emplace_back(prefix + ".attn.wq_self", &attn.wq_self);
      out.emplace_back(prefix + ".attn.wk_self", &attn.wk_self);
      out.emplace_back(prefix + ".attn.wq_other", &attn.wq_other);
      out.emplace_back(prefix + ".attn.wk_other", &attn.wk_other);
    } else {
      out.emplace_back(prefix + ".attn.wq", &mha.wq);
      out.emplace_back(prefix + ".attn.wk", &mha.wk);
      out.emplace_back(prefix + ".attn.wv", &mha.wv);
      out.emplace_back(prefix + ".attn.wmh", &mha.wmh);
    }
    out.emplace_back(prefix + ".ff1.w", &ff1.W);
    out.emplace_back(prefix + ".ff1.b", &ff1.b);
    out.emplace_back(prefix + ".ff2.w", &ff2.W);
    out.emplace_back(prefix + ".ff2.b", &ff2.b);
    out.emplace_back(prefix + ".ln1.gain", &ln1.gain);
    out.emplace_back(prefix + ".ln1.shift", &ln1.shift);
    out.emplace_back(prefix + ".ln2.gain", &ln2.gain);
    out.emplace_back(prefix + ".ln2.shift", &ln2.shift);
  }

  Tensor forward(const Tensor& x, const MaskView& mask, const DropoutCtx& dctx) {
    Tensor a = variant == Variant::agent_aware ? attn.forward(x, x, mask)
                                               : mha.forward(x, x, mask, true);
    a = drop1.forward(a, dctx.p, dctx.train, dctx.rng);
    Tensor n1 = ln1.forward(add(x, a));
    pre_ = ff1.forward(n1);
    Tensor f = ff2.forward(relu(pre_));
    f = drop2.forward(f, dctx.p, dctx.train, dctx.rng);
    Tensor y = ln2.forward(add(n1, f));
    return y;
  }

  Tensor backward(const Tensor& dy) {
    Tensor dr2 = ln2.backward(dy);
    Tensor dn1 = dr2;
    Tensor df = drop2.backward(dr2);
    Tensor dact = ff2.backward(df);
    Tensor dpre = relu_backward(pre_, dact);
    add_inplace(dn1, ff1.backward(dpre));
    Tensor dr1 = ln1.backward(dn1);
    Tensor dx = dr1;
    Tensor da = drop1.backward(dr1);
    Tensor dq = Tensor::zeros(dx.rows(), dx.cols());
    Tensor dkv = Tensor::zeros(dx.rows(), dx.cols());
    if (variant == Variant::agent_aware)
      attn.backward(da, dq, dkv);
    else
      mha.backward(da, dq, dkv);
    add_inplace(dx, dq);
    add_inplace(dx, dkv);
    return dx;
  }

 private:
  Tensor pre_;
};

struct EncoderTrace {
  Tensor s_prime;  // (NT, F): encoded scene, same layout as the input
  Tensor memory;   // (NT, d): last-layer representation, feeds the decoder
};

/// Input linear -> masked-slot embedding substitution -> positional
/// encoding -> n_layers encoder blocks -> output linear back to feature
/// space. Holds forward caches, so one instance serves one training loop;
/// clone the model for concurrent inference.
struct EncoderStack {
  ModelConfig cfg;
  Linear input;          // F -> d
  Linear output;         // d -> F
  Param mask_embedding;  // (1, d), zero-initialized
  PositionalEncoding pe;
  std::vector<EncoderLayer> layers;

  EncoderStack() = default;
  explicit EncoderStack(const ModelConfig& c)
      : cfg(c), input(c.F, c.d), output(c.d, c.F), mask_embedding({1, c.d}) {
    cfg.validate();
    pe = positional_encoding(c.T_max, c.d);
    layers.reserve(c.n_layers);
    for (std::size_t i = 0; i < c.n_layers; ++i) layers.emplace_back(c);
  }

  void init(Rng& rng) {
    input.init(rng);
    for (auto& l : layers) l.init(rng);
    output.init(rng);
    mask_embedding.value.fill(0.0);
  }

  void collect(std::vector<std::pair<std::string, Param*>>& out) {
    out.emplace_back("enc.input.w", &input.W);
    out.emplace_back("enc.input.b", &input.b);
    out.emplace_back("enc.mask_embedding", &mask_embedding);
    for (std::size_t i = 0; i < layers.size(); ++i)
      layers[i].collect(out, "enc.layer" + std::to_string(i));
    out.emplace_back("enc.output.w", &output.W);
    out.emplace_back("enc.output.b", &output.b);
  }

  /// Slots whose input embedding is replaced by the mask embedding.
  static std::vector<std::size_t> span_slots(const SceneInput& in, const SpanMask& span) {
    if (span.agent >= in.N || span.start + span.len > in.valid_len[span.agent])
      throw std::invalid_argument("SpanMask outside the agent's valid range");
    std::vector<std::size_t> slots;
    slots.reserve(span.len);
    for (std::size_t t = span.start; t < span.start + span.len; ++t)
      slots.push_back(in.slot(t, span.agent));
    return slots;
  }

  EncoderTrace forward(const SceneInput& in, const SpanMask* span, const DropoutCtx& dctx) {
    if (in.F != cfg.F)
      throw std::invalid_argument("EncoderStack: input features " + std::to_string(in.F) +
                                  ", model expects " + std::to_string(cfg.F));
    const std::size_t nt = in.nt();
    in_ = &in;
    same_agent_.assign(nt * nt, 0);
    for (std::size_t t = 0; t < in.T; ++t)
      for (std::size_t n = 0; n < in.N; ++n) {
        const std::size_t r = in.slot(t, n);
        for (std::size_t s = 0; s < in.T; ++s) same_agent_[r * nt + in.slot(s, n)] = 1;
      }
    MaskView mask{nt, nt, same_agent_.data(), in.key_bias.data()};

    Tensor h = input.forward(in.x);
    masked_slots_ = span ? span_slots(in, *span) : std::vector<std::size_t>{};
    for (std::size_t s : masked_slots_)
      for (std::size_t j = 0; j < cfg.d; ++j) h(s, j) = mask_embedding.value[j];
    for (std::size_t n = 0; n < in.N; ++n)
      for (std::size_t t = 0; t < in.valid_len[n]; ++t) {
        const std::size_t step = in.entry_step[n] + t;
        if (step >= cfg.T_max)
          throw std::invalid_argument("EncoderStack: scene longer than T_max");
        const std::size_t s = in.slot(t, n);
        for (std::size_t j = 0; j < cfg.d; ++j) h(s, j) += pe.table(step, j);
      }

    for (std::size_t i = 0; i < layers.size(); ++i) {
      h = layers[i].forward(h, mask, dctx);
      if (!h.all_finite())
        throw std::runtime_error("non-finite activation in encoder layer " + std::to_string(i));
    }
    EncoderTrace trace;
    trace.memory = h;
    trace.s_prime = output.forward(h);
    return trace;
  }

  /// Backpropagates through the stack. Either gradient may be empty when
  /// that head is unused. Returns the gradient w.r.t. the raw input rows.
  Tensor backward(const Tensor& d_s_prime, const Tensor& d_memory) {
    Tensor dh;
    if (!d_s_prime.empty())
      dh = output.backward(d_s_prime);
    else
      dh = Tensor::zeros(in_->nt(), cfg.d);
    if (!d_memory.empty()) add_inplace(dh, d_memory);
    for (std::size_t i = layers.size(); i-- > 0;) dh = layers[i].backward(dh);

    // masked rows feed the mask embedding, not the input linear
    for (std::size_t s : masked_slots_) {
      for (std::size_t j = 0; j < cfg.d; ++j) {
        mask_embedding.grad[j] += dh(s, j);
        dh(s, j) = 0.0;
      }
    }
    return input.backward(dh);
  }

 private:
  const SceneInput* in_ = nullptr;
  std::vector<std::uint8_t> same_agent_;
  std::vector<std::size_t> masked_slots_;
};

/// Draws the pre-training span: one contiguous window of span_len steps on
/// a uniformly chosen agent that can hold it. When no agent is long
/// enough the span shrinks to the longest valid length (at least 1).
inline SpanMask draw_pretrain_span(const SceneInput& in, std::size_t span_len, Rng& rng) {
  std::vector<std::size_t> eligible;
  std::size_t longest = 0, longest_agent = 0;
  for (std::size_t n = 0; n < in.N; ++n) {
    if (in.valid_len[n] >= span_len) eligible.push_back(n);
    if (in.valid_len[n] > longest) {
      longest = in.valid_len[n];
      longest_agent = n;
    }
  }
  SpanMask span;
  if (eligible.empty()) {
    span.agent = longest_agent;
    span.len = std::max<std::size_t>(longest, 1);
    span.start = 0;
    return span;
  }
  span.len = span_len;
  span.agent = eligible[rng.below(eligible.size())];
  span.start = static_cast<std::size_t>(rng.below(in.valid_len[span.agent] - span_len + 1));
  return span;
}

}  // namespace mabert
