#pragma once

#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mabert {

/// Dense row-major tensor of 64-bit reals. Most of the project uses the
/// 2-D case; shape is kept general so scene payloads (agents x time x
/// features) travel through the same type.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), v_(numel(shape_), 0.0) {}

  static Tensor zeros(std::size_t rows, std::size_t cols) {
    return Tensor({rows, cols});
  }

  static Tensor full(std::size_t rows, std::size_t cols, double value) {
    Tensor t({rows, cols});
    for (auto& x : t.v_) x = value;
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t size() const { return v_.size(); }
  bool empty() const { return v_.empty(); }

  std::size_t rows() const {
    require_2d();
    return shape_[0];
  }
  std::size_t cols() const {
    require_2d();
    return shape_[1];
  }

  double& operator()(std::size_t i, std::size_t j) {
    return v_[i * shape_[1] + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    return v_[i * shape_[1] + j];
  }
  double& operator[](std::size_t i) { return v_[i]; }
  double operator[](std::size_t i) const { return v_[i]; }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  double* row(std::size_t i) { return v_.data() + i * shape_[1]; }
  const double* row(std::size_t i) const { return v_.data() + i * shape_[1]; }

  auto begin() { return v_.begin(); }
  auto end() { return v_.end(); }
  auto begin() const { return v_.begin(); }
  auto end() const { return v_.end(); }

  void fill(double value) {
    for (auto& x : v_) x = value;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double x : v_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape_.size(); ++i)
      os << (i ? "," : "") << shape_[i];
    os << ')';
    return os.str();
  }

  static std::size_t numel(const std::vector<std::size_t>& shape) {
    std::size_t n = shape.empty() ? 0 : 1;
    for (std::size_t d : shape) n *= d;
    return n;
  }

 private:
  void require_2d() const {
    if (shape_.size() != 2)
      throw std::logic_error("Tensor: 2-D access on tensor of shape " +
                             shape_str());
  }

  std::vector<std::size_t> shape_;
  std::vector<double> v_;
};

inline void ensure_finite(const Tensor& t, const std::string& what) {
  if (!t.all_finite())
    throw std::runtime_error("non-finite values in " + what);
}

inline void require_shape(const Tensor& t, std::size_t rows, std::size_t cols,
                          const char* what) {
  if (t.ndim() != 2 || t.rows() != rows || t.cols() != cols)
    throw std::invalid_argument(std::string(what) + ": expected (" +
                                std::to_string(rows) + "," +
                                std::to_string(cols) + "), got " +
                                t.shape_str());
}

/// C = A * B, (m x k)(k x n).
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dims " + a.shape_str() + " x " +
                                b.shape_str());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c = Tensor::zeros(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c.row(i);
    const double* ai = a.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b.row(p);
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
  return c;
}

/// C = A * B^T, (m x k)(n x k).
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("matmul_nt: inner dims " + a.shape_str() +
                                " x " + b.shape_str() + "^T");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor c = Tensor::zeros(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a.row(i);
    double* ci = c.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b.row(j);
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] = s;
    }
  }
  return c;
}

/// C = A^T * B, (k x m)^T (k x n).
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows())
    throw std::invalid_argument("matmul_tn: inner dims " + a.shape_str() +
                                "^T x " + b.shape_str());
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  Tensor c = Tensor::zeros(m, n);
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a.row(p);
    const double* bp = b.row(p);
    for (std::size_t i = 0; i < m; ++i) {
      const double av = ap[i];
      double* ci = c.row(i);
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
  return c;
}

inline void add_inplace(Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument("add: shape " + a.shape_str() + " vs " +
                                b.shape_str());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  Tensor c = a;
  add_inplace(c, b);
  return c;
}

inline void scale_inplace(Tensor& a, double s) {
  for (auto& x : a) x *= s;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace mabert
