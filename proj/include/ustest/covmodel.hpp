#pragma once

// Covariance models and centered Gaussian samples.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ustest/errors.hpp"
#include "ustest/rng.hpp"

namespace ustest {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Strictly positive definite p x p covariance matrix.
///
/// Construction mirrors the upper triangle onto the lower one and runs a
/// Cholesky factorization; any pivot <= 0 rejects the matrix.
class CovModel {
 public:
  explicit CovModel(const Matrix& theta) {
    if (theta.rows() != theta.cols()) throw DomainError("covariance matrix must be square");
    if (theta.rows() < 2) throw DomainError("covariance dimension must be at least 2");
    if (!theta.allFinite()) throw DomainError("covariance matrix has non-finite entries");
    theta_ = theta.triangularView<Eigen::Upper>();
    theta_.triangularView<Eigen::StrictlyLower>() = theta_.transpose();
    Eigen::LLT<Matrix> llt(theta_);
    if (llt.info() != Eigen::Success) {
      throw DomainError("covariance matrix is not strictly positive definite");
    }
    chol_ = llt.matrixL();
    min_pivot_ = chol_.diagonal().minCoeff();
    if (!(min_pivot_ > 0.0)) {
      throw DomainError("covariance matrix is not strictly positive definite");
    }
  }

  int p() const { return static_cast<int>(theta_.rows()); }
  const Matrix& theta() const { return theta_; }
  double operator()(int u, int v) const { return theta_(u, v); }
  /// Lower Cholesky factor L with theta = L L^T.
  const Matrix& cholesky() const { return chol_; }
  /// Smallest diagonal entry of the Cholesky factor.
  double min_pivot() const { return min_pivot_; }

 private:
  Matrix theta_;
  Matrix chol_;
  double min_pivot_ = 0.0;
};

/// Theta = diag(uniqueness) + loadings loadings^T.
inline CovModel one_factor_cov(std::span<const double> loadings,
                               std::span<const double> uniqueness_diag) {
  if (loadings.size() != uniqueness_diag.size()) {
    throw DomainError("loadings and uniqueness must have the same length");
  }
  const auto p = static_cast<Eigen::Index>(loadings.size());
  Matrix theta(p, p);
  for (Eigen::Index u = 0; u < p; ++u) {
    if (!(uniqueness_diag[u] > 0.0)) throw DomainError("uniqueness entries must be positive");
    for (Eigen::Index v = 0; v < p; ++v) theta(u, v) = loadings[u] * loadings[v];
    theta(u, u) += uniqueness_diag[u];
  }
  return CovModel(theta);
}

/// One-factor model whose uniqueness is chosen so that every variance is 1.
inline CovModel one_factor_unit_diagonal(std::span<const double> loadings) {
  std::vector<double> psi(loadings.size());
  for (std::size_t i = 0; i < loadings.size(); ++i) psi[i] = 1.0 - loadings[i] * loadings[i];
  return one_factor_cov(loadings, psi);
}

/// Unit diagonal, every off-diagonal entry equal to rho, 0 <= rho < 1.
inline CovModel equicorrelation_cov(int p, double rho) {
  if (p < 2) throw DomainError("equicorrelation needs p >= 2");
  if (!(rho >= 0.0 && rho < 1.0)) throw DomainError("equicorrelation rho must lie in [0, 1)");
  Matrix theta = Matrix::Constant(p, p, rho);
  theta.diagonal().setOnes();
  return CovModel(theta);
}

/// n x p matrix of observations, one row per draw, row-major storage.
class SampleMatrix {
 public:
  SampleMatrix(std::size_t n, int p, std::vector<double> values)
      : n_(n), p_(p), values_(std::move(values)) {
    if (n_ < 1) throw DomainError("sample must contain at least one row");
    if (p_ < 1) throw DomainError("sample dimension must be positive");
    if (values_.size() != n_ * static_cast<std::size_t>(p_)) {
      throw DomainError("sample value count does not match n * p");
    }
    for (double x : values_) {
      if (!std::isfinite(x)) throw DomainError("sample contains a non-finite entry");
    }
  }

  std::size_t n() const { return n_; }
  int p() const { return p_; }
  std::span<const double> row(std::size_t i) const {
    return {values_.data() + i * static_cast<std::size_t>(p_), static_cast<std::size_t>(p_)};
  }
  double operator()(std::size_t i, int u) const {
    return values_[i * static_cast<std::size_t>(p_) + static_cast<std::size_t>(u)];
  }
  const std::vector<double>& values() const { return values_; }

  /// Copy of the first k rows.
  SampleMatrix head(std::size_t k) const {
    if (k < 1 || k > n_) throw DomainError("head size out of range");
    return SampleMatrix(
        k, p_, {values_.begin(), values_.begin() + static_cast<std::ptrdiff_t>(k * p_)});
  }

 private:
  std::size_t n_;
  int p_;
  std::vector<double> values_;
};

/// Fill `out` with one draw of N_p(0, Theta) computed as L z.
inline void draw_gaussian(const CovModel& model, CounterRng& rng, std::span<double> out) {
  const int p = model.p();
  const Matrix& chol = model.cholesky();
  double z[64];
  std::vector<double> heap;
  double* zs = z;
  if (p > 64) {
    heap.resize(static_cast<std::size_t>(p));
    zs = heap.data();
  }
  for (int k = 0; k < p; ++k) zs[k] = rng.normal();
  for (int u = 0; u < p; ++u) {
    double acc = 0.0;
    for (int k = 0; k <= u; ++k) acc += chol(u, k) * zs[k];
    out[static_cast<std::size_t>(u)] = acc;
  }
}

/// n i.i.d. rows from N_p(0, Theta), deterministic in the stream.
inline SampleMatrix sample_gaussian(const CovModel& model, std::size_t n, CounterRng& rng) {
  if (n < 1) throw DomainError("sample size must be at least 1");
  const auto p = static_cast<std::size_t>(model.p());
  std::vector<double> values(n * p);
  for (std::size_t i = 0; i < n; ++i) {
    draw_gaussian(model, rng, std::span<double>(values.data() + i * p, p));
  }
  return SampleMatrix(n, model.p(), std::move(values));
}

inline SampleMatrix sample_gaussian(const CovModel& model, std::size_t n, const StreamId& id) {
  CounterRng rng(id);
  return sample_gaussian(model, n, rng);
}

/// Uncentered sample covariance n^{-1} sum_i X_i X_i^T.
inline Matrix sample_covariance(const SampleMatrix& x) {
  const int p = x.p();
  Matrix s = Matrix::Zero(p, p);
  for (std::size_t i = 0; i < x.n(); ++i) {
    auto row = x.row(i);
    for (int u = 0; u < p; ++u) {
      for (int v = u; v < p; ++v) s(u, v) += row[u] * row[v];
    }
  }
  s /= static_cast<double>(x.n());
  s.triangularView<Eigen::StrictlyLower>() = s.transpose();
  return s;
}

}  // namespace ustest
