#pragma once

#include <vector>

#include "mabert/encoder.hpp"

namespace mabert {

/// Task head attached after the encoder: binary per-agent queries are
/// embedded and cross-attend to the encoder representation, followed by a
/// feed-forward block and a linear read-out of O values per agent. Query
/// rows carry no agent identity of their own; the cross-attention masking
/// ties each query to its agent, which keeps outputs independent of agent
/// order.
struct DecoderHead {
  ModelConfig cfg;
  std::size_t O = 1;
  Linear query_linear;  // F -> d
  AgentAwareAttention cross_attn;
  MultiHeadAttention cross_mha;
  LayerNorm ln1, ln2;
  Linear ff1, ff2;
  Linear out_linear;  // d -> O
  Dropout drop1, drop2;

  DecoderHead() = default;
  DecoderHead(const ModelConfig& c, std::size_t out_dim)
      : cfg(c),
        O(out_dim),
        query_linear(c.F, c.d),
        ln1(c.d),
        ln2(c.d),
        ff1(c.d, c.d_ff),
        ff2(c.d_ff, c.d),
        out_linear(c.d, out_dim) {
    if (out_dim < 1) throw std::invalid_argument("DecoderHead: O must be >= 1");
    if (c.variant == Variant::agent_aware)
      cross_attn = AgentAwareAttention(c.d);
    else
      cross_mha = MultiHeadAttention(c.d, c.h);
  }

  void init(Rng& rng) {
    query_linear.init(rng);
    if (cfg.variant == Variant::agent_aware)
      cross_attn.init(rng);
    else
      cross_mha.init(rng);
    ff1.init(rng);
    ff2.init(rng);
    out_linear.init(rng);
  }

  void collect(std::vector<std::pair<std::string, Param*>>& out) {
    out.emplace_back("dec.query.w", &query_linear.W);
    out.emplace_back("dec.query.b", &query_linear.b);
    if (cfg.variant == Variant::agent_aware) {
      out.emplace_back("dec.attn.wq_self", &cross_attn.wq_self);
      out.emplace_back("dec.attn.wk_self", &cross_attn.wk_self);
      out.emplace_back("dec.attn.wq_other", &cross_attn.wq_other);
      out.emplace_back("dec.attn.wk_other", &cross_attn.wk_other);
    } else {
      out.emplace_back("dec.attn.wq", &cross_mha.wq);
      out.emplace_back("dec.attn.wk", &cross_mha.wk);
      out.emplace_back("dec.attn.wv", &cross_mha.wv);
      out.emplace_back("dec.attn.wmh", &cross_mha.wmh);
    }
    out.emplace_back("dec.ff1.w", &ff1.W);
    out.emplace_back("dec.ff1.b", &ff1.b);
    out.emplace_back("dec.ff2.w", &ff2.W);
    out.emplace_back("dec.ff2.b", &ff2.b);
    out.emplace_back("dec.ln1.gain", &ln1.gain);
    out.emplace_back("dec.ln1.shift", &ln1.shift);
    out.emplace_back("dec.ln2.gain", &ln2.gain);
    out.emplace_back("dec.ln2.shift", &ln2.shift);
    out.emplace_back("dec.out.w", &out_linear.W);
    out.emplace_back("dec.out.b", &out_linear.b);
  }

  /// memory: encoder representation (NT, d). queried: per-agent flags.
  /// Returns per-agent outputs (N, O); rows of non-queried agents are
  /// computed from all-zero queries and should be ignored by the caller.
  Tensor forward(const Tensor& memory, const SceneInput& in,
                 const std::vector<std::uint8_t>& queried, const DropoutCtx& dctx) {
    if (queried.size() != in.N)
      throw std::invalid_argument("DecoderHead: queried size mismatch");
    const std::size_t rows = in.N * O;
    const std::size_t nt = in.nt();

    Tensor q0 = Tensor::zeros(rows, cfg.F);
    for (std::size_t n = 0; n < in.N; ++n)
      if (queried[n])
        for (std::size_t o = 0; o < O; ++o)
          for (std::size_t f = 0; f < cfg.F; ++f) q0(n * O + o, f) = 1.0;

    cross_same_.assign(rows * nt, 0);
    for (std::size_t n = 0; n < in.N; ++n)
      for (std::size_t o = 0; o < O; ++o) {
        const std::size_t r = n * O + o;
        for (std::size_t t = 0; t < in.T; ++t) cross_same_[r * nt + in.slot(t, n)] = 1;
      }
    MaskView mask{rows, nt, cross_same_.data(), in.key_bias.data()};

    Tensor q = query_linear.forward(q0);
    Tensor a = cfg.variant == Variant::agent_aware
                   ? cross_attn.forward(q, memory, mask)
                   : cross_mha.forward(q, memory, mask, true);
    a = drop1.forward(a, dctx.p, dctx.train, dctx.rng);
    Tensor n1 = ln1.forward(add(q, a));
    pre_ = ff1.forward(n1);
    Tensor f = ff2.forward(relu(pre_));
    f = drop2.forward(f, dctx.p, dctx.train, dctx.rng);
    Tensor h = ln2.forward(add(n1, f));

    // pool each agent's O query rows to one representation
    pooled_rows_ = rows;
    Tensor pooled = Tensor::zeros(in.N, cfg.d);
    for (std::size_t n = 0; n < in.N; ++n)
      for (std::size_t o = 0; o < O; ++o)
        for (std::size_t j = 0; j < cfg.d; ++j)
          pooled(n, j) += h(n * O + o, j) / static_cast<double>(O);
    n_agents_ = in.N;
    mem_rows_ = nt;
    return out_linear.forward(pooled);
  }

  /// dy: (N, O). Returns the gradient w.r.t. the encoder memory.
  Tensor backward(const Tensor& dy) {
    Tensor dpooled = out_linear.backward(dy);
    Tensor dh = Tensor::zeros(pooled_rows_, cfg.d);
    for (std::size_t n = 0; n < n_agents_; ++n)
      for (std::size_t o = 0; o < O; ++o)
        for (std::size_t j = 0; j < cfg.d; ++j)
          dh(n * O + o, j) = dpooled(n, j) / static_cast<double>(O);

    Tensor dr2 = ln2.backward(dh);
    Tensor dn1 = dr2;
    Tensor df = drop2.backward(dr2);
    Tensor dact = ff2.backward(df);
    Tensor dpre = relu_backward(pre_, dact);
    add_inplace(dn1, ff1.backward(dpre));
    Tensor dr1 = ln1.backward(dn1);
    Tensor dq = dr1;
    Tensor da = drop1.backward(dr1);
    Tensor dq_attn = Tensor::zeros(pooled_rows_, cfg.d);
    Tensor dmem = Tensor::zeros(mem_rows_, cfg.d);
    if (cfg.variant == Variant::agent_aware)
      cross_attn.backward(da, dq_attn, dmem);
    else
      cross_mha.backward(da, dq_attn, dmem);
    add_inplace(dq, dq_attn);
    query_linear.backward(dq);  // query matrix itself is constant
    return dmem;
  }

 private:
  Tensor pre_;
  std::vector<std::uint8_t> cross_same_;
  std::size_t pooled_rows_ = 0, n_agents_ = 0, mem_rows_ = 0;
};

}  // namespace mabert
