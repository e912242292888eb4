#pragma once

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "ustest/errors.hpp"

namespace ustest {

/// Standard normal CDF.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Upper tail 1 - Phi(z).
inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

/// Phi^{-1}(q) for q in (0, 1).
inline double normal_quantile(double q) {
  if (!(q > 0.0 && q < 1.0)) throw DomainError("normal quantile needs a level in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), q);
}

inline double two_sided_pvalue(double z) { return std::min(1.0, 2.0 * normal_sf(std::abs(z))); }

/// Kolmogorov-Smirnov distance sup_x |F_R(x) - Phi(x)|.
inline double ks_normality(std::span<const double> values) {
  if (values.size() < 100) throw DomainError("KS normality check needs at least 100 values");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const auto count = static_cast<double>(sorted.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double cdf = normal_cdf(sorted[i]);
    worst = std::max({worst, static_cast<double>(i + 1) / count - cdf,
                      cdf - static_cast<double>(i) / count});
  }
  return worst;
}

/// Kolmogorov-Smirnov distance to Uniform(0, 1).
inline double ks_uniformity(std::span<const double> values) {
  if (values.empty()) throw DomainError("KS uniformity check needs at least one value");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const auto count = static_cast<double>(sorted.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double cdf = std::clamp(sorted[i], 0.0, 1.0);
    worst = std::max({worst, static_cast<double>(i + 1) / count - cdf,
                      cdf - static_cast<double>(i) / count});
  }
  return worst;
}

}  // namespace ustest
