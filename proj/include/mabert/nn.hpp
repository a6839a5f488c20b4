#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mabert/rng.hpp"
#include "mabert/tensor.hpp"

namespace mabert {

constexpr double kMaskedLogit = -1e9;

/// Trainable tensor: value plus an accumulated gradient of the same shape.
struct Param {
  Tensor value;
  Tensor grad;

  Param() = default;
  explicit Param(std::vector<std::size_t> shape)
      : value(shape), grad(std::move(shape)) {}

  void zero_grad() { grad.fill(0.0); }

  void init_uniform(Rng& rng, double bound) {
    for (auto& v : value) v = rng.uniform(-bound, bound);
  }
};

/// y = x W + b with cached input for the backward pass.
struct Linear {
  Param W;  // (in, out)
  Param b;  // (1, out)

  Linear() = default;
  Linear(std::size_t in, std::size_t out) : W({in, out}), b({1, out}) {}

  std::size_t in_dim() const { return W.value.rows(); }
  std::size_t out_dim() const { return W.value.cols(); }

  void init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim()));
    W.init_uniform(rng, bound);
    b.init_uniform(rng, bound);
  }

  Tensor forward(const Tensor& x) {
    if (x.cols() != in_dim())
      throw std::invalid_argument("Linear: input " + x.shape_str() + " vs weight " +
                                  W.value.shape_str());
    x_ = x;
    Tensor y = matmul(x, W.value);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double* yi = y.row(i);
      for (std::size_t j = 0; j < y.cols(); ++j) yi[j] += b.value[j];
    }
    return y;
  }

  Tensor backward(const Tensor& dy) {
    add_inplace(W.grad, matmul_tn(x_, dy));
    for (std::size_t i = 0; i < dy.rows(); ++i)
      for (std::size_t j = 0; j < dy.cols(); ++j) b.grad[j] += dy(i, j);
    return matmul_nt(dy, W.value);
  }

 private:
  Tensor x_;
};

/// Normalizes each row over the feature dimension, then applies a learned
/// affine map. Variance uses eps = 1e-5 inside the square root.
struct LayerNorm {
  static constexpr double kEps = 1e-5;
  Param gain;   // (1, d)
  Param shift;  // (1, d)

  LayerNorm() = default;
  explicit LayerNorm(std::size_t d) : gain({1, d}), shift({1, d}) {
    gain.value.fill(1.0);
  }

  Tensor forward(const Tensor& x) {
    const std::size_t rows = x.rows(), d = x.cols();
    if (d < 2) throw std::invalid_argument("LayerNorm: feature dim must be >= 2");
    xhat_ = Tensor::zeros(rows, d);
    inv_std_.assign(rows, 0.0);
    Tensor y = Tensor::zeros(rows, d);
    for (std::size_t i = 0; i < rows; ++i) {
      const double* xi = x.row(i);
      double mean = 0.0;
      for (std::size_t j = 0; j < d; ++j) mean += xi[j];
      mean /= static_cast<double>(d);
      double var = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double c = xi[j] - mean;
        var += c * c;
      }
      var /= static_cast<double>(d);
      const double inv = 1.0 / std::sqrt(var + kEps);
      inv_std_[i] = inv;
      double* hi = xhat_.row(i);
      double* yi = y.row(i);
      for (std::size_t j = 0; j < d; ++j) {
        hi[j] = (xi[j] - mean) * inv;
        yi[j] = gain.value[j] * hi[j] + shift.value[j];
      }
    }
    return y;
  }

  Tensor backward(const Tensor& dy) {
    const std::size_t rows = dy.rows(), d = dy.cols();
    Tensor dx = Tensor::zeros(rows, d);
    for (std::size_t i = 0; i < rows; ++i) {
      const double* dyi = dy.row(i);
      const double* hi = xhat_.row(i);
      double mean_dh = 0.0, mean_dh_h = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double dh = dyi[j] * gain.value[j];
        mean_dh += dh;
        mean_dh_h += dh * hi[j];
        gain.grad[j] += dyi[j] * hi[j];
        shift.grad[j] += dyi[j];
      }
      mean_dh /= static_cast<double>(d);
      mean_dh_h /= static_cast<double>(d);
      double* dxi = dx.row(i);
      for (std::size_t j = 0; j < d; ++j) {
        const double dh = dyi[j] * gain.value[j];
        dxi[j] = (dh - mean_dh - hi[j] * mean_dh_h) * inv_std_[i];
      }
    }
    return dx;
  }

 private:
  Tensor xhat_;
  std::vector<double> inv_std_;
};

inline Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y) v = v > 0.0 ? v : 0.0;
  return y;
}

inline Tensor relu_backward(const Tensor& pre, const Tensor& dy) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (pre[i] <= 0.0) dx[i] = 0.0;
  return dx;
}

/// Row-wise softmax with an optional additive mask (0 for live entries,
/// kMaskedLogit for excluded ones). A fully masked row yields an all-zero
/// output row by convention.
inline Tensor softmax_rows(const Tensor& logits, const Tensor* additive_mask = nullptr) {
  if (additive_mask && !logits.same_shape(*additive_mask))
    throw std::invalid_argument("softmax_rows: mask shape " + additive_mask->shape_str() +
                                " vs logits " + logits.shape_str());
  const std::size_t rows = logits.rows(), cols = logits.cols();
  Tensor p = Tensor::zeros(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* li = logits.row(i);
    const double* mi = additive_mask ? additive_mask->row(i) : nullptr;
    double mx = -HUGE_VAL;
    for (std::size_t j = 0; j < cols; ++j) {
      const double v = li[j] + (mi ? mi[j] : 0.0);
      if (v > mx) mx = v;
    }
    double* pi = p.row(i);
    if (mx <= kMaskedLogit / 2) continue;  // fully masked row
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double v = li[j] + (mi ? mi[j] : 0.0);
      pi[j] = std::exp(v - mx);
      sum += pi[j];
    }
    for (std::size_t j = 0; j < cols; ++j) pi[j] /= sum;
  }
  return p;
}

/// d(loss)/d(logits) given probs = softmax_rows(logits, mask) and dP.
/// Zero rows (fully masked) propagate zero gradient.
inline Tensor softmax_rows_backward(const Tensor& probs, const Tensor& dp) {
  const std::size_t rows = probs.rows(), cols = probs.cols();
  Tensor dlogits = Tensor::zeros(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* pi = probs.row(i);
    const double* di = dp.row(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < cols; ++j) dot += pi[j] * di[j];
    double* out = dlogits.row(i);
    for (std::size_t j = 0; j < cols; ++j) out[j] = pi[j] * (di[j] - dot);
  }
  return dlogits;
}

/// Inverted dropout: scales kept activations by 1/(1-p) while training,
/// identity otherwise. The keep mask is cached for the backward pass.
struct Dropout {
  Tensor forward(const Tensor& x, double p, bool train, Rng* rng) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("Dropout: p must be in [0,1)");
    active_ = train && p > 0.0;
    if (!active_) return x;
    if (!rng) throw std::invalid_argument("Dropout: rng required in training");
    const double keep = 1.0 - p;
    mask_ = Tensor(x.shape());
    Tensor y = x;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const bool kept = rng->uniform() >= p;
      mask_[i] = kept ? 1.0 / keep : 0.0;
      y[i] *= mask_[i];
    }
    return y;
  }

  Tensor backward(const Tensor& dy) const {
    if (!active_) return dy;
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= mask_[i];
    return dx;
  }

 private:
  Tensor mask_;
  bool active_ = false;
};

struct LossOut {
  double value = 0.0;
  Tensor grad;  // d(loss)/d(pred or logits)
};

/// Mean squared error over valid elements (all elements when valid is
/// null). Throws when no element is valid.
inline LossOut mse_loss(const Tensor& pred, const Tensor& target,
                        const std::vector<std::uint8_t>* valid = nullptr) {
  if (!pred.same_shape(target))
    throw std::invalid_argument("mse_loss: shape mismatch " + pred.shape_str() + " vs " +
                                target.shape_str());
  if (valid && valid->size() != pred.size())
    throw std::invalid_argument("mse_loss: valid mask size mismatch");
  LossOut out;
  out.grad = Tensor(pred.shape());
  std::size_t m = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (valid && !(*valid)[i]) continue;
    const double e = pred[i] - target[i];
    sum += e * e;
    ++m;
  }
  if (m == 0) throw std::runtime_error("mse_loss: no valid elements");
  out.value = sum / static_cast<double>(m);
  const double s = 2.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (!valid || (*valid)[i]) out.grad[i] = s * (pred[i] - target[i]);
  return out;
}

/// Binary cross entropy on logits, numerically stable form.
inline LossOut bce_with_logits(const Tensor& logits, const Tensor& target,
                               const std::vector<std::uint8_t>* valid = nullptr) {
  if (!logits.same_shape(target)) throw std::invalid_argument("bce: shape mismatch");
  LossOut out;
  out.grad = Tensor(logits.shape());
  std::size_t m = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (valid && !(*valid)[i]) continue;
    const double z = logits[i], y = target[i];
    sum += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    ++m;
  }
  if (m == 0) throw std::runtime_error("bce: no valid elements");
  out.value = sum / static_cast<double>(m);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (valid && !(*valid)[i]) continue;
    const double sig = 1.0 / (1.0 + std::exp(-logits[i]));
    out.grad[i] = (sig - target[i]) / static_cast<double>(m);
  }
  return out;
}

/// Categorical cross entropy on logit rows via log-sum-exp.
inline LossOut cce_with_logits(const Tensor& logits, const std::vector<std::size_t>& labels,
                               const std::vector<std::uint8_t>* valid_rows = nullptr) {
  const std::size_t rows = logits.rows(), k = logits.cols();
  if (labels.size() != rows) throw std::invalid_argument("cce: label count mismatch");
  LossOut out;
  out.grad = Tensor::zeros(rows, k);
  std::size_t m = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    if (valid_rows && !(*valid_rows)[i]) continue;
    if (labels[i] >= k) throw std::invalid_argument("cce: label out of range");
    const double* zi = logits.row(i);
    double mx = zi[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, zi[j]);
    double lse = 0.0;
    for (std::size_t j = 0; j < k; ++j) lse += std::exp(zi[j] - mx);
    lse = mx + std::log(lse);
    sum += lse - zi[labels[i]];
    ++m;
  }
  if (m == 0) throw std::runtime_error("cce: no valid rows");
  out.value = sum / static_cast<double>(m);
  for (std::size_t i = 0; i < rows; ++i) {
    if (valid_rows && !(*valid_rows)[i]) continue;
    const double* zi = logits.row(i);
    double mx = zi[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, zi[j]);
    double lse = 0.0;
    for (std::size_t j = 0; j < k; ++j) lse += std::exp(zi[j] - mx);
    double* gi = out.grad.row(i);
    for (std::size_t j = 0; j < k; ++j)
      gi[j] = (std::exp(zi[j] - mx) / lse) / static_cast<double>(m);
    gi[labels[i]] -= 1.0 / static_cast<double>(m);
  }
  return out;
}

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers are laid out to match the
/// parameter list handed to the first step() call; the list must stay
/// identical across steps.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  long long step_count() const { return t_; }

  void step(const std::vector<Param*>& params) {
    if (m_.empty()) {
      for (const Param* p : params) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
      }
    }
    if (m_.size() != params.size())
      throw std::invalid_argument("Adam: parameter list changed between steps");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      Param& p = *params[pi];
      if (!p.grad.all_finite()) throw std::runtime_error("Adam: non-finite gradient");
      Tensor& m = m_[pi];
      Tensor& v = v_[pi];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p.value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

 private:
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  long long t_ = 0;
};

}  // namespace mabert
