#pragma once

// Complete, incomplete and block U-statistics, Hoeffding-projection
// U-statistics, and the test statistics built from them.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ustest/covmodel.hpp"
#include "ustest/errors.hpp"
#include "ustest/kernel.hpp"
#include "ustest/moments.hpp"
#include "ustest/normal.hpp"
#include "ustest/polynomial.hpp"
#include "ustest/rng.hpp"

namespace ustest {

/// C(n, k); throws when the value does not fit in 64 bits.
inline std::uint64_t binomial(std::uint64_t n, std::uint64_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  unsigned __int128 acc = 1;
  for (std::uint64_t i = 1; i <= k; ++i) {
    acc = acc * (n - k + i) / i;
    if (acc > std::numeric_limits<std::uint64_t>::max()) throw DomainError("binomial overflow");
  }
  return static_cast<std::uint64_t>(acc);
}

/// Visit every increasing k-tuple of [0, n) in lexicographic order.
template <typename Fn>
void for_each_tuple(std::size_t n, int k, Fn&& visit) {
  if (k < 0 || static_cast<std::size_t>(k) > n) return;
  std::vector<std::size_t> idx(static_cast<std::size_t>(k));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  while (true) {
    visit(std::span<const std::size_t>(idx));
    int j = k - 1;
    while (j >= 0 && idx[static_cast<std::size_t>(j)] == n - static_cast<std::size_t>(k - j)) --j;
    if (j < 0) return;
    ++idx[static_cast<std::size_t>(j)];
    for (int t = j + 1; t < k; ++t) {
      idx[static_cast<std::size_t>(t)] = idx[static_cast<std::size_t>(t - 1)] + 1;
    }
  }
}

namespace detail {

/// Row pointers for the observations named by `idx`.
class RowGather {
 public:
  explicit RowGather(const SampleMatrix& x, std::size_t arity) : x_(x), rows_(arity) {}

  std::span<const double* const> operator()(std::span<const std::size_t> idx) {
    for (std::size_t j = 0; j < idx.size(); ++j) rows_[j] = x_.row(idx[j]).data();
    return rows_;
  }

 private:
  const SampleMatrix& x_;
  std::vector<const double*> rows_;
};

inline void require_sample(const SampleMatrix& x, int m) {
  if (x.n() < static_cast<std::size_t>(m)) {
    throw DomainError("sample size n = " + std::to_string(x.n()) +
                      " is smaller than the kernel degree m = " + std::to_string(m));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Budget

/// Bernoulli sampling design over the C(n, m) index tuples.
struct BudgetPlan {
  std::size_t n = 0;
  int m = 0;
  std::uint64_t budget = 0;  ///< N, the expected number of kernel evaluations
  std::uint64_t tuples = 0;  ///< C(n, m)
  double p_sample = 0.0;     ///< N / C(n, m)
  StreamId stream;           ///< source of the Bernoulli flips
};

inline BudgetPlan make_budget_plan(std::size_t n, int m, std::uint64_t budget, StreamId stream) {
  if (m < 1) throw DomainError("kernel degree must be positive");
  if (n < static_cast<std::size_t>(m)) throw DomainError("sample size smaller than kernel degree");
  const std::uint64_t tuples = binomial(n, static_cast<std::uint64_t>(m));
  if (budget < 1 || budget > tuples) {
    throw DomainError("budget N = " + std::to_string(budget) + " must lie in [1, C(n, m) = " +
                      std::to_string(tuples) + "]");
  }
  const double p = budget == tuples ? 1.0 : static_cast<double>(budget) / static_cast<double>(tuples);
  return BudgetPlan{n, m, budget, tuples, p, stream};
}

/// Parse an absolute budget ("200") or a multiple of n ("x2").
inline std::uint64_t parse_budget(const std::string& text, std::size_t n) {
  try {
    std::size_t used = 0;
    if (!text.empty() && (text[0] == 'x' || text[0] == 'X')) {
      const double k = std::stod(text.substr(1), &used);
      if (used + 1 != text.size() || !(k > 0.0)) throw DomainError("");
      return static_cast<std::uint64_t>(std::llround(k * static_cast<double>(n)));
    }
    const long long value = std::stoll(text, &used);
    if (used != text.size() || value < 1) throw DomainError("");
    return static_cast<std::uint64_t>(value);
  } catch (const std::exception&) {
    throw DomainError("budget must be a positive integer or xK (multiple of n): '" + text + "'");
  }
}

// ---------------------------------------------------------------------------
// U-statistics

/// U_n: average of h over all C(n, m) increasing tuples.
inline double complete_ustat(const SymmetricKernel& h, const SampleMatrix& x) {
  const int m = h.degree();
  detail::require_sample(x, m);
  detail::RowGather gather(x, static_cast<std::size_t>(m));
  double sum = 0.0;
  std::uint64_t count = 0;
  for_each_tuple(x.n(), m, [&](std::span<const std::size_t> idx) {
    sum += h(gather(idx));
    ++count;
  });
  return sum / static_cast<double>(count);
}

inline double complete_ustat(const PolyConstraint& f, const SampleMatrix& x) {
  return complete_ustat(SymmetricKernel(f), x);
}

/// Result of one incomplete U-statistic draw.
struct IncompleteResult {
  double value = 0.0;             ///< U'_{n,N}
  std::uint64_t nhat = 0;         ///< number of selected tuples
  std::vector<double> evaluations;  ///< kernel values of the selected tuples, in tuple order
};

/// U'_{n,N}: one Bernoulli(p) flip per tuple in lexicographic order; the
/// kernel is evaluated only on selected tuples. Throws DegenerateSampleError
/// when nothing is selected.
inline IncompleteResult incomplete_ustat(const SymmetricKernel& h, const SampleMatrix& x,
                                         const BudgetPlan& plan) {
  const int m = h.degree();
  detail::require_sample(x, m);
  if (plan.n != x.n() || plan.m != m) throw DomainError("budget plan does not match (n, m)");
  CounterRng rng(plan.stream);
  detail::RowGather gather(x, static_cast<std::size_t>(m));
  IncompleteResult out;
  out.evaluations.reserve(static_cast<std::size_t>(plan.budget + 4 * std::sqrt(plan.budget) + 8));
  double sum = 0.0;
  for_each_tuple(x.n(), m, [&](std::span<const std::size_t> idx) {
    if (!rng.bernoulli(plan.p_sample)) return;
    const double value = h(gather(idx));
    out.evaluations.push_back(value);
    sum += value;
  });
  out.nhat = out.evaluations.size();
  if (out.nhat == 0) throw DegenerateSampleError("Bernoulli design selected no tuple (N-hat = 0)");
  out.value = sum / static_cast<double>(out.nhat);
  return out;
}

/// The Bernoulli flips incomplete_ustat uses, one per tuple in lexicographic order.
inline std::vector<std::uint8_t> draw_bernoulli_design(const BudgetPlan& plan) {
  CounterRng rng(plan.stream);
  std::vector<std::uint8_t> flips(plan.tuples);
  for (auto& z : flips) z = rng.bernoulli(plan.p_sample) ? 1 : 0;
  return flips;
}

/// S_{floor(n/m)}: mean of h over disjoint consecutive batches of m rows.
inline double block_estimator(const SymmetricKernel& h, const SampleMatrix& x) {
  const int m = h.degree();
  detail::require_sample(x, m);
  const std::size_t batches = x.n() / static_cast<std::size_t>(m);
  std::vector<const double*> rows(static_cast<std::size_t>(m));
  double sum = 0.0;
  for (std::size_t b = 0; b < batches; ++b) {
    for (int j = 0; j < m; ++j) rows[static_cast<std::size_t>(j)] = x.row(b * m + j).data();
    sum += h(rows);
  }
  return sum / static_cast<double>(batches);
}

/// U_n^{(r)}: average of a kernel of arity r over all increasing r-tuples.
inline double projection_ustat(const MixedKernel& projection, const SampleMatrix& x) {
  const int r = projection.arity();
  if (r < 1) throw DomainError("projection order must be at least 1");
  detail::require_sample(x, r);
  detail::RowGather gather(x, static_cast<std::size_t>(r));
  double sum = 0.0;
  std::uint64_t count = 0;
  for_each_tuple(x.n(), r, [&](std::span<const std::size_t> idx) {
    sum += projection(gather(idx));
    ++count;
  });
  return sum / static_cast<double>(count);
}

inline double projection_ustat(const PolyConstraint& f, const CovModel& theta, const SampleMatrix& x,
                               int r) {
  if (r < 1 || r > f.degree()) throw DomainError("projection order must lie in [1, m]");
  detail::require_sample(x, f.degree());
  return projection_ustat(hoeffding_projection(f, theta, r).merged(), x);
}

/// W_n = U_n + sqrt(1 - p) B_n and the pieces it is built from.
struct WnBnDecomposition {
  double w = 0.0;
  double b = 0.0;
  double u = 0.0;           ///< complete U_n
  double u_prime = 0.0;     ///< incomplete U'_{n,N} from the same flips
  std::uint64_t nhat = 0;
};

/// Relative tolerance for U' = (N / N-hat) W_n.
inline constexpr double kWnIdentityRelTol = 1e-12;

/// Decompose the incomplete statistic for a given set of flips.
/// Requires p < 1; checks U' = (N / N-hat) W_n.
inline WnBnDecomposition wn_bn_decompose(const SymmetricKernel& h, const SampleMatrix& x,
                                         const BudgetPlan& plan, std::span<const std::uint8_t> flips) {
  const int m = h.degree();
  detail::require_sample(x, m);
  if (flips.size() != plan.tuples) throw DomainError("one flip per tuple is required");
  if (!(plan.p_sample < 1.0)) throw DomainError("B_n is undefined when every tuple is selected");
  const double p = plan.p_sample;
  const double root = std::sqrt(1.0 - p);
  const auto budget = static_cast<double>(plan.budget);
  detail::RowGather gather(x, static_cast<std::size_t>(m));
  double sum_all = 0.0;
  double sum_selected = 0.0;
  double sum_b = 0.0;
  double sum_abs_selected = 0.0;
  std::uint64_t nhat = 0;
  std::size_t t = 0;
  for_each_tuple(x.n(), m, [&](std::span<const std::size_t> idx) {
    const double value = h(gather(idx));
    const double z = flips[t++];
    sum_all += value;
    sum_b += (z - p) / root * value;
    if (z != 0.0) {
      sum_selected += value;
      sum_abs_selected += std::abs(value);
      ++nhat;
    }
  });
  if (nhat == 0) throw DegenerateSampleError("Bernoulli design selected no tuple (N-hat = 0)");
  WnBnDecomposition out;
  out.u = sum_all / static_cast<double>(plan.tuples);
  out.b = sum_b / budget;
  out.w = out.u + root * out.b;
  out.u_prime = sum_selected / static_cast<double>(nhat);
  out.nhat = nhat;
  const double rebuilt = budget / static_cast<double>(nhat) * out.w;
  // Relative to the mean |h| of the selected tuples, so that a U' that
  // cancels to nearly zero is not held to an unattainable precision.
  const double scale = std::max({std::abs(out.u_prime), sum_abs_selected / static_cast<double>(nhat)});
  if (std::abs(rebuilt - out.u_prime) > kWnIdentityRelTol * scale) {
    throw ConsistencyError("U' = (N / N-hat) W_n failed to hold");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Test statistics

/// Value, normalization and two-sided p-value of one test.
struct TestOutcome {
  double statistic = 0.0;   ///< unnormalized: f(Theta_hat) or U'_{n,N} or S
  double normalizer = 0.0;  ///< the scale the statistic is divided by (already including sqrt(n))
  double zscore = 0.0;
  double pvalue = 1.0;      ///< 2 (1 - Phi(|z|))
  std::optional<std::uint64_t> nhat;
  std::optional<double> sigma_g2;
  std::optional<double> sigma_h2;
  std::optional<double> sigma2;
};

namespace detail {

inline TestOutcome finish(double statistic, double normalizer, double zscore) {
  TestOutcome out;
  out.statistic = statistic;
  out.normalizer = normalizer;
  out.zscore = zscore;
  out.pvalue = two_sided_pvalue(zscore);
  return out;
}

}  // namespace detail

/// T_f = sqrt(n) f(Theta_hat) / sqrt(grad^T V grad) with the true Theta in the normalizer.
/// `wald_var` is grad f(Theta)^T V(Theta) grad f(Theta).
inline TestOutcome wald_standardized(const PolyConstraint& f, double wald_var, const SampleMatrix& x) {
  if (!(wald_var > 0.0)) {
    throw SingularHypothesisError("grad f(Theta) is zero: the Wald normalizer vanishes");
  }
  const double stat = evaluate(f, sample_covariance(x));
  const double scale = std::sqrt(wald_var);
  return detail::finish(stat, scale, std::sqrt(static_cast<double>(x.n())) * stat / scale);
}

inline TestOutcome wald_standardized(const PolyConstraint& f, const CovModel& theta,
                                     const SampleMatrix& x) {
  return wald_standardized(f, wald_variance(f, theta.theta()), x);
}

/// T-hat_f: same numerator, normalizer evaluated at Theta_hat. A non-positive
/// plug-in variance throws DegenerateStudentizerError.
inline TestOutcome wald_studentized(const PolyConstraint& f, const SampleMatrix& x) {
  const Matrix theta_hat = sample_covariance(x);
  const double stat = evaluate(f, theta_hat);
  const double var = wald_variance(f, theta_hat);
  if (!(var > 0.0) || !std::isfinite(var)) {
    throw DegenerateStudentizerError("plug-in Wald variance is not positive");
  }
  const double scale = std::sqrt(var);
  return detail::finish(stat, scale, std::sqrt(static_cast<double>(x.n())) * stat / scale);
}

/// sigma^2 = m^2 sigma_g^2 + (n / N) sigma_h^2.
inline double icu_limiting_variance(const KernelMoments& km, std::size_t n, std::uint64_t budget) {
  const double m = km.degree;
  return m * m * km.sigma_g2 + static_cast<double>(n) / static_cast<double>(budget) * km.sigma_h2;
}

/// sqrt(n) U'_{n,N} / sigma from an already drawn incomplete statistic.
inline TestOutcome icu_standardized(const IncompleteResult& draw, const KernelMoments& km,
                                    std::size_t n, std::uint64_t budget) {
  const double sigma2 = icu_limiting_variance(km, n, budget);
  const double sigma = std::sqrt(sigma2);
  TestOutcome out = detail::finish(draw.value, sigma, std::sqrt(static_cast<double>(n)) * draw.value / sigma);
  out.nhat = draw.nhat;
  out.sigma_g2 = km.sigma_g2;
  out.sigma_h2 = km.sigma_h2;
  out.sigma2 = sigma2;
  return out;
}

inline TestOutcome icu_standardized(const PolyConstraint& f, const CovModel& theta,
                                    const SampleMatrix& x, const BudgetPlan& plan) {
  const KernelMoments km = kernel_moments(f, theta);
  return icu_standardized(incomplete_ustat(SymmetricKernel(f), x, plan), km, x.n(), plan.budget);
}

/// Largest number of groups per half that dc_sigma_g2 can form.
inline std::size_t dc_max_groups(std::size_t n, int m) {
  const auto width = static_cast<std::size_t>(2 * (m - 1));
  return width == 0 || n < 1 ? 0 : (n - 1) / width;
}

/// Divide-and-conquer estimate of sigma_g^2, not truncated.
///
/// A random permutation of [n] is drawn. For each i, the observations that
/// follow i cyclically in it are cut into consecutive (m - 1)-tuples; tuples
/// at even positions go to B_1(i), odd positions to B_2(i), `groups` tuples
/// each (0 means as many as fit). With g_k(i) the mean of h(X_i, X_B) over
/// B in B_k(i), the estimate is mean(g_1 g_2) - mean(g_1) mean(g_2). Given
/// X_i the two halves are independent with mean g(X_i), so the product has
/// no Var[h | X_i] bias. groups = 1 uses one tuple per half. For m = 1
/// both halves are h(X_i) itself.
inline double dc_sigma_g2(const SymmetricKernel& h, const SampleMatrix& x, const StreamId& stream,
                          std::size_t groups = 0) {
  const int m = h.degree();
  const std::size_t n = x.n();
  const auto tail = static_cast<std::size_t>(m - 1);
  if (m == 1) {
    // g = h: both halves reduce to h(X_i)
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* arg = x.row(i).data();
      const double v = h(std::span<const double* const>(&arg, 1));
      sum += v;
      sum_sq += v * v;
    }
    const auto nd = static_cast<double>(n);
    return sum_sq / nd - (sum / nd) * (sum / nd);
  }
  const std::size_t most = dc_max_groups(n, m);
  if (most < 1) throw DomainError("divide-and-conquer studentizer needs n >= 2m - 1");
  if (groups == 0 || groups > most) groups = most;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  CounterRng rng(stream);
  rng.shuffle(std::span<std::size_t>(perm));
  std::vector<std::size_t> position(n);
  for (std::size_t k = 0; k < n; ++k) position[perm[k]] = k;

  std::vector<const double*> args(static_cast<std::size_t>(m));
  double sum1 = 0.0, sum2 = 0.0, sum12 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    args[0] = x.row(i).data();
    double g[2] = {0.0, 0.0};
    for (std::size_t b = 0; b < 2 * groups; ++b) {
      for (std::size_t j = 0; j < tail; ++j) {
        const std::size_t at = (position[i] + 1 + b * tail + j) % n;
        args[1 + j] = x.row(perm[at]).data();
      }
      g[b % 2] += h(args);
    }
    g[0] /= static_cast<double>(groups);
    g[1] /= static_cast<double>(groups);
    sum1 += g[0];
    sum2 += g[1];
    sum12 += g[0] * g[1];
  }
  const auto nd = static_cast<double>(n);
  return sum12 / nd - (sum1 / nd) * (sum2 / nd);
}

/// Sample variance (denominator N-hat - 1) of the selected kernel values.
inline double selected_variance(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return ss / static_cast<double>(values.size() - 1);
}

/// sqrt(n) U'_{n,N} / sigma-hat from an already drawn incomplete statistic,
/// sigma-hat^2 = m^2 max(sigma-hat_g^2, 0) + (n / N) sigma-hat_h^2.
inline TestOutcome icu_studentized(const IncompleteResult& draw, const SymmetricKernel& h,
                                   const SampleMatrix& x, std::uint64_t budget,
                                   const StreamId& studentizer_stream, std::size_t groups = 0) {
  const int m = h.degree();
  if (x.n() < static_cast<std::size_t>(3 * m - 2)) {
    throw DomainError("studentized incomplete statistic needs n >= 3m - 2");
  }
  const double sg2 = dc_sigma_g2(h, x, studentizer_stream, groups);
  const double sh2 = selected_variance(draw.evaluations);
  const double sigma2 = static_cast<double>(m) * m * std::max(sg2, 0.0) +
                        static_cast<double>(x.n()) / static_cast<double>(budget) * sh2;
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) {
    throw DegenerateStudentizerError("data-driven variance estimate is not positive");
  }
  const double sigma = std::sqrt(sigma2);
  TestOutcome out =
      detail::finish(draw.value, sigma, std::sqrt(static_cast<double>(x.n())) * draw.value / sigma);
  out.nhat = draw.nhat;
  out.sigma_g2 = sg2;
  out.sigma_h2 = sh2;
  out.sigma2 = sigma2;
  return out;
}

inline TestOutcome icu_studentized(const PolyConstraint& f, const SampleMatrix& x,
                                   const BudgetPlan& plan, const StreamId& studentizer_stream,
                                   std::size_t groups = 0) {
  const SymmetricKernel h(f);
  return icu_studentized(incomplete_ustat(h, x, plan), h, x, plan.budget, studentizer_stream, groups);
}

/// sqrt(floor(n/m)) S / sigma_h.
inline TestOutcome block_standardized(const SymmetricKernel& h, const SampleMatrix& x, double sigma_h2) {
  if (!(sigma_h2 > 0.0)) throw DomainError("sigma_h^2 must be positive");
  const double s = block_estimator(h, x);
  const double batches = std::floor(static_cast<double>(x.n()) / h.degree());
  const double sigma = std::sqrt(sigma_h2);
  TestOutcome out = detail::finish(s, sigma, std::sqrt(batches) * s / sigma);
  out.sigma_h2 = sigma_h2;
  return out;
}

}  // namespace ustest
