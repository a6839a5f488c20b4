#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mabert/nn.hpp"
#include "mabert/tensor.hpp"

namespace mabert {

/// Slot-level mask view shared by both attention flavors. `same_agent` is
/// a rows x cols boolean table (1 where query and key slots belong to the
/// same agent); `key_bias` is an additive per-key vector, 0 for live keys
/// and kMaskedLogit for padded ones. Either pointer may be null: a null
/// same_agent means everything is one agent, a null key_bias means no
/// padding.
struct MaskView {
  std::size_t rows = 0;
  std::size_t cols = 0;
  const std::uint8_t* same_agent = nullptr;
  const double* key_bias = nullptr;

  bool same(std::size_t r, std::size_t c) const {
    return same_agent ? same_agent[r * cols + c] != 0 : true;
  }
};

inline void check_mask(const MaskView& m, std::size_t rows, std::size_t cols,
                       const char* what) {
  if (m.rows != rows || m.cols != cols)
    throw std::invalid_argument(std::string(what) + ": mask is " + std::to_string(m.rows) +
                                "x" + std::to_string(m.cols) + ", expected " +
                                std::to_string(rows) + "x" + std::to_string(cols));
}

/// Attention with separate query/key projections for own-agent and
/// other-agent slot pairs. The logit matrix is assembled entrywise from
/// the self product where query and key share an agent and from the other
/// product elsewhere, scaled by 1/sqrt(d); values are used unprojected.
struct AgentAwareAttention {
  Param wq_self, wk_self, wq_other, wk_other;  // each (d, d)

  AgentAwareAttention() = default;
  explicit AgentAwareAttention(std::size_t d)
      : wq_self({d, d}), wk_self({d, d}), wq_other({d, d}), wk_other({d, d}) {}

  std::size_t dim() const { return wq_self.value.rows(); }

  void init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dim()));
    wq_self.init_uniform(rng, bound);
    wk_self.init_uniform(rng, bound);
    wq_other.init_uniform(rng, bound);
    wk_other.init_uniform(rng, bound);
  }

  Tensor forward(const Tensor& q_in, const Tensor& kv_in, const MaskView& mask) {
    const std::size_t d = dim();
    if (q_in.cols() != d || kv_in.cols() != d)
      throw std::invalid_argument("AgentAwareAttention: input dim mismatch");
    check_mask(mask, q_in.rows(), kv_in.rows(), "AgentAwareAttention");
    q_ = q_in;
    kv_ = kv_in;
    qs_ = matmul(q_in, wq_self.value);
    ks_ = matmul(kv_in, wk_self.value);
    qo_ = matmul(q_in, wq_other.value);
    ko_ = matmul(kv_in, wk_other.value);
    const Tensor s_self = matmul_nt(qs_, ks_);
    const Tensor s_other = matmul_nt(qo_, ko_);

    const std::size_t rows = q_in.rows(), cols = kv_in.rows();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Tensor logits = Tensor::zeros(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
      double* li = logits.row(i);
      const double* si = s_self.row(i);
      const double* oi = s_other.row(i);
      for (std::size_t j = 0; j < cols; ++j) {
        li[j] = (mask.same(i, j) ? si[j] : oi[j]) * scale;
        if (mask.key_bias) li[j] += mask.key_bias[j];
      }
    }
    probs_ = softmax_rows(logits);
    mask_ = mask;
    return matmul(probs_, kv_in);
  }

  /// Accumulates parameter gradients; adds input gradients into dq_in and
  /// dkv_in (which must be zero-initialized or hold prior contributions).
  void backward(const Tensor& dy, Tensor& dq_in, Tensor& dkv_in) {
    const std::size_t d = dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    Tensor dp = matmul_nt(dy, kv_);
    add_inplace(dkv_in, matmul_tn(probs_, dy));

    Tensor dlogits = softmax_rows_backward(probs_, dp);
    const std::size_t rows = dlogits.rows(), cols = dlogits.cols();
    Tensor ds_self = Tensor::zeros(rows, cols);
    Tensor ds_other = Tensor::zeros(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
      const double* dli = dlogits.row(i);
      double* dsi = ds_self.row(i);
      double* doi = ds_other.row(i);
      for (std::size_t j = 0; j < cols; ++j) {
        const double v = dli[j] * scale;
        if (mask_.same(i, j))
          dsi[j] = v;
        else
          doi[j] = v;
      }
    }

    const Tensor dqs = matmul(ds_self, ks_);
    const Tensor dks = matmul_tn(ds_self, qs_);
    const Tensor dqo = matmul(ds_other, ko_);
    const Tensor dko = matmul_tn(ds_other, qo_);

    add_inplace(wq_self.grad, matmul_tn(q_, dqs));
    add_inplace(wk_self.grad, matmul_tn(kv_, dks));
    add_inplace(wq_other.grad, matmul_tn(q_, dqo));
    add_inplace(wk_other.grad, matmul_tn(kv_, dko));

    add_inplace(dq_in, matmul_nt(dqs, wq_self.value));
    add_inplace(dkv_in, matmul_nt(dks, wk_self.value));
    add_inplace(dq_in, matmul_nt(dqo, wq_other.value));
    add_inplace(dkv_in, matmul_nt(dko, wk_other.value));
  }

 private:
  Tensor q_, kv_, qs_, ks_, qo_, ko_, probs_;
  MaskView mask_;
};

/// Standard multi-head attention: per-head projected queries, keys and
/// values, per-head softmax scaled by 1/sqrt(d_h), concatenated and
/// projected back. With restrict_same_agent set, slots may only attend
/// inside their own agent, which is how the single-agent baseline
/// processes a multi-agent scene.
struct MultiHeadAttention {
  std::size_t heads = 1;
  Param wq, wk, wv, wmh;  // each (d, d); head j owns columns [j*dh, (j+1)*dh)

  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t d, std::size_t h)
      : heads(h), wq({d, d}), wk({d, d}), wv({d, d}), wmh({d, d}) {
    if (h == 0 || d % h != 0)
      throw std::invalid_argument("MultiHeadAttention: d must be divisible by h");
  }

  std::size_t dim() const { return wq.value.rows(); }

  /// per-head attention weights from the last forward pass
  const std::vector<Tensor>& head_probs() const { return probs_; }

  void init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dim()));
    wq.init_uniform(rng, bound);
    wk.init_uniform(rng, bound);
    wv.init_uniform(rng, bound);
    wmh.init_uniform(rng, bound);
  }

  Tensor forward(const Tensor& q_in, const Tensor& kv_in, const MaskView& mask,
                 bool restrict_same_agent) {
    const std::size_t d = dim();
    if (q_in.cols() != d || kv_in.cols() != d)
      throw std::invalid_argument("MultiHeadAttention: input dim mismatch");
    check_mask(mask, q_in.rows(), kv_in.rows(), "MultiHeadAttention");
    q_ = q_in;
    kv_ = kv_in;
    restrict_ = restrict_same_agent;
    mask_ = mask;
    qp_ = matmul(q_in, wq.value);
    kp_ = matmul(kv_in, wk.value);
    vp_ = matmul(kv_in, wv.value);

    const std::size_t rows = q_in.rows(), cols = kv_in.rows();
    const std::size_t dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    probs_.assign(heads, Tensor());
    concat_ = Tensor::zeros(rows, d);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      Tensor logits = Tensor::zeros(rows, cols);
      for (std::size_t i = 0; i < rows; ++i) {
        const double* qi = qp_.row(i) + off;
        double* li = logits.row(i);
        for (std::size_t j = 0; j < cols; ++j) {
          const double* kj = kp_.row(j) + off;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          s *= scale;
          if (mask.key_bias) s += mask.key_bias[j];
          if (restrict_ && !mask.same(i, j)) s += kMaskedLogit;
          li[j] = s;
        }
      }
      probs_[h] = softmax_rows(logits);
      for (std::size_t i = 0; i < rows; ++i) {
        const double* pi = probs_[h].row(i);
        double* oi = concat_.row(i) + off;
        for (std::size_t j = 0; j < cols; ++j) {
          const double p = pi[j];
          if (p == 0.0) continue;
          const double* vj = vp_.row(j) + off;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
        }
      }
    }
    return matmul(concat_, wmh.value);
  }

  void backward(const Tensor& dy, Tensor& dq_in, Tensor& dkv_in) {
    const std::size_t d = dim();
    const std::size_t rows = dy.rows(), cols = kv_.rows();
    const std::size_t dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    add_inplace(wmh.grad, matmul_tn(concat_, dy));
    const Tensor dconcat = matmul_nt(dy, wmh.value);

    Tensor dqp = Tensor::zeros(rows, d);
    Tensor dkp = Tensor::zeros(cols, d);
    Tensor dvp = Tensor::zeros(cols, d);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      const Tensor& p = probs_[h];
      Tensor dp = Tensor::zeros(rows, cols);
      for (std::size_t i = 0; i < rows; ++i) {
        const double* doi = dconcat.row(i) + off;
        const double* pi = p.row(i);
        double* dpi = dp.row(i);
        for (std::size_t j = 0; j < cols; ++j) {
          const double* vj = vp_.row(j) + off;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += doi[c] * vj[c];
          dpi[j] = s;
          if (pi[j] != 0.0) {
            double* dvj = dvp.row(j) + off;
            for (std::size_t c = 0; c < dh; ++c) dvj[c] += pi[j] * doi[c];
          }
        }
      }
      const Tensor dlogits = softmax_rows_backward(p, dp);
      for (std::size_t i = 0; i < rows; ++i) {
        const double* dli = dlogits.row(i);
        double* dqi = dqp.row(i) + off;
        for (std::size_t j = 0; j < cols; ++j) {
          const double g = dli[j] * scale;
          if (g == 0.0) continue;
          const double* kj = kp_.row(j) + off;
          double* dkj = dkp.row(j) + off;
          const double* qi = qp_.row(i) + off;
          for (std::size_t c = 0; c < dh; ++c) {
            dqi[c] += g * kj[c];
            dkj[c] += g * qi[c];
          }
        }
      }
    }

    add_inplace(wq.grad, matmul_tn(q_, dqp));
    add_inplace(wk.grad, matmul_tn(kv_, dkp));
    add_inplace(wv.grad, matmul_tn(kv_, dvp));
    add_inplace(dq_in, matmul_nt(dqp, wq.value));
    add_inplace(dkv_in, matmul_nt(dkp, wk.value));
    add_inplace(dkv_in, matmul_nt(dvp, wv.value));
  }

 private:
  Tensor q_, kv_, qp_, kp_, vp_, concat_;
  std::vector<Tensor> probs_;
  MaskView mask_;
  bool restrict_ = false;
};

}  // namespace mabert
