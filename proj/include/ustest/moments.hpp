#pragma once

// Exact Gaussian moments that govern the test statistics: the Wishart
// covariance V(Theta), sigma_g^2 (two independent routes), sigma_h^2 and
// the Berry-Esseen ingredients of the complete U-statistic.

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>

#include "ustest/covmodel.hpp"
#include "ustest/errors.hpp"
#include "ustest/isserlis.hpp"
#include "ustest/kernel.hpp"
#include "ustest/polynomial.hpp"
#include "ustest/rng.hpp"

namespace ustest {

/// V(Theta)_{uv,wz} = theta_uw theta_vz + theta_uz theta_vw over upper pairs,
/// i.e. the covariance of the upper triangle of X X^T.
inline Matrix wishart_cov(const Matrix& theta) {
  const int p = static_cast<int>(theta.rows());
  const auto pairs = upper_pairs(p);
  const auto d = static_cast<Eigen::Index>(pairs.size());
  Matrix out(d, d);
  for (Eigen::Index a = 0; a < d; ++a) {
    const int u = pairs[a].u;
    const int v = pairs[a].v;
    for (Eigen::Index b = a; b < d; ++b) {
      const int w = pairs[b].u;
      const int z = pairs[b].v;
      out(a, b) = theta(u, w) * theta(v, z) + theta(u, z) * theta(v, w);
      out(b, a) = out(a, b);
    }
  }
  return out;
}

inline Matrix wishart_cov(const CovModel& model) { return wishart_cov(model.theta()); }

/// grad^T V grad, the limiting variance of sqrt(n) f(Theta_hat).
inline double wald_variance(const PolyConstraint& f, const Matrix& theta) {
  const Vector grad = gradient(f, theta);
  return grad.dot(wishart_cov(theta) * grad);
}

/// Ratio of the largest to the smallest eigenvalue of V(Theta).
inline double wishart_condition_number(const CovModel& model) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(wishart_cov(model), Eigen::EigenvaluesOnly);
  const auto& ev = eig.eigenvalues();
  return ev.maxCoeff() / ev.minCoeff();
}

/// Both routes to sigma_g^2.
struct SigmaGPaths {
  double quadratic_form = 0.0;  ///< grad^T V grad / m^2
  double isserlis = 0.0;        ///< Var[g(X)] from the symbolic g
  double second_moment = 0.0;   ///< E[g(X)^2], scale for the agreement check
};

/// Relative tolerance for the two sigma_g^2 routes.
inline constexpr double kSigmaGRelTol = 1e-10;

/// Compute sigma_g^2 both ways. `perturbation` rescales the first
/// data-bearing coefficient of g by (1 + perturbation); it exists so the
/// consistency check itself can be exercised.
inline SigmaGPaths sigma_g_squared_paths(const PolyConstraint& f, const CovModel& theta,
                                         double perturbation = 0.0) {
  const int m = f.degree();
  SigmaGPaths out;
  out.quadratic_form = wald_variance(f, theta.theta()) / (static_cast<double>(m) * m);
  MixedKernel g = build_g(f, theta);
  if (perturbation != 0.0) {
    auto terms = g.terms();
    for (auto& term : terms) {
      if (!term.data.empty()) {
        term.coeff *= 1.0 + perturbation;
        break;
      }
    }
    g = MixedKernel(1, std::move(terms), theta.theta());
  }
  const double mean = kernel_mean(g, theta);
  out.second_moment = kernel_second_moment(g, theta);
  out.isserlis = out.second_moment - mean * mean;
  return out;
}

inline bool sigma_g_paths_agree(const SigmaGPaths& paths) {
  const double scale = std::max({std::abs(paths.quadratic_form), std::abs(paths.isserlis)});
  const double floor = 1e-13 * std::abs(paths.second_moment);
  return std::abs(paths.quadratic_form - paths.isserlis) <= kSigmaGRelTol * scale + floor;
}

/// sigma_g^2 = Var[g(X)] = grad^T V grad / m^2. With `verify`, the Isserlis
/// route is computed as well and a disagreement throws ConsistencyError.
inline double sigma_g_squared(const PolyConstraint& f, const CovModel& theta, bool verify = true) {
  if (!verify) {
    const int m = f.degree();
    return wald_variance(f, theta.theta()) / (static_cast<double>(m) * m);
  }
  const SigmaGPaths paths = sigma_g_squared_paths(f, theta);
  if (!sigma_g_paths_agree(paths)) {
    throw ConsistencyError("sigma_g^2 routes disagree: quadratic form " +
                           std::to_string(paths.quadratic_form) + " vs Isserlis " +
                           std::to_string(paths.isserlis));
  }
  return paths.quadratic_form;
}

/// sigma_h^2 = Var[h(X_1, ..., X_m)], exact. Throws if not strictly positive.
inline double sigma_h_squared(const PolyConstraint& f, const CovModel& theta) {
  const double value = kernel_variance(build_h(f), theta);
  if (!(value > 0.0)) {
    throw ConsistencyError("sigma_h^2 is not strictly positive for a non-constant constraint");
  }
  return value;
}

/// Exact kernel variances used by the standardized statistics.
struct KernelMoments {
  int degree = 0;
  double f_value = 0.0;   ///< f(Theta)
  double sigma_g2 = 0.0;  ///< Var[g]
  double sigma_h2 = 0.0;  ///< Var[h]
};

inline KernelMoments kernel_moments(const PolyConstraint& f, const CovModel& theta) {
  return KernelMoments{f.degree(), evaluate(f, theta.theta()), sigma_g_squared(f, theta),
                       sigma_h_squared(f, theta)};
}

/// Monte Carlo estimate with its standard error.
struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// E|g(X) - f(Theta)|^3 by Monte Carlo.
inline Estimate abs_third_moment_g(const PolyConstraint& f, const CovModel& theta,
                                   std::size_t draws, std::uint64_t seed) {
  const MixedKernel g = build_g(f, theta).merged();
  const double center = evaluate(f, theta.theta());
  auto rng = make_stream(seed, StreamTag::monte_carlo);
  std::vector<double> x(static_cast<std::size_t>(theta.p()));
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    draw_gaussian(theta, rng, x);
    const double* arg = x.data();
    const double value = std::pow(std::abs(g(std::span<const double* const>(&arg, 1)) - center), 3);
    sum += value;
    sum_sq += value * value;
  }
  const double mean = sum / static_cast<double>(draws);
  const double var = (sum_sq - sum * mean) / static_cast<double>(draws - 1);
  return {mean, std::sqrt(std::max(var, 0.0) / static_cast<double>(draws))};
}

/// Ingredients of the Berry-Esseen bound for sqrt(n) U_n / (m sigma_g).
struct BerryEsseenDiagnostics {
  int m = 0;
  std::size_t n = 0;
  double sigma_g = 0.0;
  double sigma_h = 0.0;
  double ratio = 0.0;  ///< sigma_h / sigma_g, +inf when sigma_g = 0
  bool ratio_infinite = false;
  /// (1 + sqrt 2)(m - 1) sigma_h / (sqrt(m (n - m + 1)) sigma_g), exact.
  double term_ratio = 0.0;
  /// 6.1 E|g|^3 / (sqrt(n) sigma_g^3); E|g|^3 is a Monte Carlo estimate.
  double term_third_moment = 0.0;
  double term_third_moment_se = 0.0;
  Estimate abs_third_moment_g;
};

inline BerryEsseenDiagnostics be_diagnostics(const PolyConstraint& f, const CovModel& theta,
                                             std::size_t n, std::size_t mc_draws = 100000,
                                             std::uint64_t seed = 1) {
  const int m = f.degree();
  if (n < static_cast<std::size_t>(m)) throw DomainError("n must be at least the kernel degree");
  BerryEsseenDiagnostics d;
  d.m = m;
  d.n = n;
  d.sigma_g = std::sqrt(std::max(sigma_g_squared(f, theta), 0.0));
  d.sigma_h = std::sqrt(sigma_h_squared(f, theta));
  constexpr double inf = std::numeric_limits<double>::infinity();
  if (d.sigma_g == 0.0) {
    d.ratio_infinite = true;
    d.ratio = inf;
    d.term_ratio = (m > 1) ? inf : 0.0;
    d.term_third_moment = inf;
    d.term_third_moment_se = 0.0;
    return d;
  }
  d.ratio = d.sigma_h / d.sigma_g;
  const double nd = static_cast<double>(n);
  d.term_ratio = (1.0 + std::numbers::sqrt2) * (m - 1) * d.sigma_h /
                 (std::sqrt(m * (nd - m + 1.0)) * d.sigma_g);
  if (mc_draws >= 2) {
    d.abs_third_moment_g = abs_third_moment_g(f, theta, mc_draws, seed);
    const double scale = 6.1 / (std::sqrt(nd) * std::pow(d.sigma_g, 3));
    d.term_third_moment = scale * d.abs_third_moment_g.value;
    d.term_third_moment_se = scale * d.abs_third_moment_g.std_error;
  }
  return d;
}

}  // namespace ustest
