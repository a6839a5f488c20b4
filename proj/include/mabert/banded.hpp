#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace mabert {

/// Symmetric banded matrix, lower storage: band(k, i) = A(i + k, i) for
/// k = 0..bandwidth. Solved by banded Cholesky in O(n * bandwidth^2).
class SymmetricBanded {
 public:
  SymmetricBanded(std::size_t n, std::size_t bandwidth)
      : n_(n), bw_(bandwidth), band_(bandwidth + 1, std::vector<double>(n, 0.0)) {}

  std::size_t size() const { return n_; }
  std::size_t bandwidth() const { return bw_; }

  double& at(std::size_t row, std::size_t col) {
    if (row < col) std::swap(row, col);
    return band_[row - col][col];
  }
  double at(std::size_t row, std::size_t col) const {
    if (row < col) std::swap(row, col);
    return band_[row - col][col];
  }

  void add(std::size_t row, std::size_t col, double v) { at(row, col) += v; }

  /// In-place lower Cholesky factor, same band structure. Throws when a
  /// pivot collapses, i.e. the system is not positive definite.
  void cholesky() {
    for (std::size_t j = 0; j < n_; ++j) {
      double d = band_[0][j];
      const std::size_t kmax = std::min(bw_, j);
      for (std::size_t k = 1; k <= kmax; ++k) {
        const double l = band_[k][j - k];
        d -= l * l;
      }
      if (!(d > 0.0) || !std::isfinite(d))
        throw std::runtime_error("underdetermined reconstruction: banded system is singular");
      const double ljj = std::sqrt(d);
      band_[0][j] = ljj;
      const std::size_t imax = std::min(j + bw_, n_ - 1);
      for (std::size_t i = j + 1; i <= imax; ++i) {
        double s = band_[i - j][j];
        // overlap of rows i and j inside the band
        const std::size_t klo = (i > bw_) ? i - bw_ : 0;
        for (std::size_t k = klo; k < j; ++k) s -= band_[i - k][k] * band_[j - k][k];
        band_[i - j][j] = s / ljj;
      }
    }
    factored_ = true;
  }

  /// Solves A x = rhs using the Cholesky factor (forward then back
  /// substitution). cholesky() must have been called.
  std::vector<double> solve(const std::vector<double>& rhs) const {
    if (!factored_) throw std::logic_error("SymmetricBanded: solve before cholesky");
    if (rhs.size() != n_) throw std::invalid_argument("SymmetricBanded: rhs size");
    std::vector<double> y(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      double s = rhs[i];
      const std::size_t klo = (i > bw_) ? i - bw_ : 0;
      for (std::size_t k = klo; k < i; ++k) s -= band_[i - k][k] * y[k];
      y[i] = s / band_[0][i];
    }
    std::vector<double> x(n_);
    for (std::size_t ii = n_; ii-- > 0;) {
      double s = y[ii];
      const std::size_t kmax = std::min(bw_, n_ - 1 - ii);
      for (std::size_t k = 1; k <= kmax; ++k) s -= band_[k][ii] * x[ii + k];
      x[ii] = s / band_[0][ii];
    }
    return x;
  }

 private:
  std::size_t n_, bw_;
  std::vector<std::vector<double>> band_;  // band_[k][i] = A(i + k, i)
  bool factored_ = false;
};

}  // namespace mabert
