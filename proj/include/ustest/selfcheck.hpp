#pragma once

// Exact-identity suite run by `ustest selfcheck`. Every item compares two
// independent computations that must agree up to rounding.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ustest/covmodel.hpp"
#include "ustest/errors.hpp"
#include "ustest/estimators.hpp"
#include "ustest/isserlis.hpp"
#include "ustest/kernel.hpp"
#include "ustest/moments.hpp"
#include "ustest/polynomial.hpp"
#include "ustest/rng.hpp"

namespace ustest {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

struct SelfcheckOptions {
  std::uint64_t seed = 1;
  /// Relative change applied to one coefficient of g in the sigma_g^2
  /// dual-path item; nonzero values must make that item fail.
  double perturb_kernel = 0.0;
};

/// A + A^T / p + 0.3 I with standard normal A: well conditioned, dense.
inline CovModel random_covariance(int p, CounterRng& rng) {
  Matrix a(p, p);
  for (int u = 0; u < p; ++u) {
    for (int v = 0; v < p; ++v) a(u, v) = rng.normal();
  }
  return CovModel(a * a.transpose() / p + 0.3 * Matrix::Identity(p, p));
}

/// Up to four monomials with uniform(-1, 1) coefficients; the first one has
/// exactly `degree` factors.
inline PolyConstraint random_constraint(int p, int degree, CounterRng& rng) {
  std::vector<Monomial> monos;
  const int count = 1 + static_cast<int>(rng.below(4));
  for (int k = 0; k < count; ++k) {
    Monomial mono;
    mono.coeff = 2.0 * rng.uniform() - 1.0;
    const int r = k == 0 ? degree : 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(degree)));
    for (int j = 0; j < r; ++j) {
      mono.pairs.emplace_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(p))),
                              static_cast<int>(rng.below(static_cast<std::uint64_t>(p))));
    }
    monos.push_back(mono);
  }
  return PolyConstraint(p, 2.0 * rng.uniform() - 1.0, monos);
}

namespace detail {

inline double rel_gap(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

inline std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

inline CheckResult timed(const std::string& name, const std::function<CheckResult()>& body) {
  const auto start = std::chrono::steady_clock::now();
  CheckResult out;
  try {
    out = body();
  } catch (const std::exception& e) {
    out.pass = false;
    out.detail = e.what();
  }
  out.name = name;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace detail

inline std::vector<CheckResult> run_selfcheck(const SelfcheckOptions& opt = {}) {
  std::vector<CheckResult> results;

  results.push_back(detail::timed("isserlis_base_cases", [&] {
    CounterRng rng(StreamId{opt.seed, StreamTag::user, 1, 0});
    const CovModel model = random_covariance(4, rng);
    const Matrix& t = model.theta();
    IsserlisMoments mom(model);
    double worst = 0.0;
    worst = std::max(worst, std::abs(mom({0, 1}) - t(0, 1)));
    worst = std::max(worst, std::abs(mom({0, 1, 2})));
    worst = std::max(worst, std::abs(mom({0, 0, 0, 0}) - 3.0 * t(0, 0) * t(0, 0)));
    worst = std::max(worst, std::abs(mom({0, 1, 2, 3}) - (t(0, 1) * t(2, 3) + t(0, 2) * t(1, 3) +
                                                         t(0, 3) * t(1, 2))));
    const int key[6] = {0, 1, 1, 2, 3, 3};
    worst = std::max(worst, std::abs(mom(key) - isserlis_moment_enumerated(t, key)));
    const bool counts = count_pairings(4) == 3 && count_pairings(6) == 15 && count_pairings(8) == 105;
    return CheckResult{{}, counts && worst <= 1e-12, "max error " + detail::sci(worst)};
  }));

  results.push_back(detail::timed("sigma_g2_dual_path", [&] {
    CounterRng rng(StreamId{opt.seed, StreamTag::user, 2, 0});
    double worst = 0.0;
    bool ok = true;
    for (int trial = 0; trial < 20; ++trial) {
      const int p = 2 + static_cast<int>(rng.below(4));
      const int m = 1 + static_cast<int>(rng.below(3));
      const CovModel model = random_covariance(p, rng);
      const PolyConstraint f = random_constraint(p, m, rng);
      const SigmaGPaths paths = sigma_g_squared_paths(f, model, opt.perturb_kernel);
      ok = ok && sigma_g_paths_agree(paths);
      worst = std::max(worst, std::abs(paths.quadratic_form - paths.isserlis) /
                                  std::max(std::abs(paths.quadratic_form), 1e-300));
    }
    return CheckResult{{}, ok, "max relative gap " + detail::sci(worst)};
  }));

  results.push_back(detail::timed("hoeffding_canonical", [&] {
    CounterRng rng(StreamId{opt.seed, StreamTag::user, 3, 0});
    double worst = 0.0;
    for (int m = 1; m <= 3; ++m) {
      const CovModel model = random_covariance(3, rng);
      const PolyConstraint f = random_constraint(3, m, rng);
      for (int r = 1; r <= m; ++r) {
        worst = std::max(worst, canonical_residual(hoeffding_projection(f, model, r), model));
      }
    }
    return CheckResult{{}, worst <= kCanonicalTolerance, "max residual " + detail::sci(worst)};
  }));

  results.push_back(detail::timed("hoeffding_reconstruction", [&] {
    CounterRng rng(StreamId{opt.seed, StreamTag::user, 4, 0});
    double worst = 0.0;
    for (int m = 2; m <= 3; ++m) {
      const CovModel model = random_covariance(3, rng);
      const PolyConstraint f = random_constraint(3, m, rng);
      const SampleMatrix x = sample_gaussian(model, 12, StreamId{opt.seed, StreamTag::data, 4, static_cast<std::uint32_t>(m)});
      double total = evaluate(f, model.theta());
      for (int r = 1; r <= m; ++r) {
        total += static_cast<double>(binomial(static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(r))) *
                 projection_ustat(f, model, x, r);
      }
      worst = std::max(worst, detail::rel_gap(total, complete_ustat(f, x)));
    }
    return CheckResult{{}, worst <= 1e-10, "max relative gap " + detail::sci(worst)};
  }));

  results.push_back(detail::timed("incomplete_full_budget", [&] {
    const CovModel model = equicorrelation_cov(4, 0.2);
    const SymmetricKernel h(tetrad(4, 0, 1, 2, 3));
    const SampleMatrix x = sample_gaussian(model, 30, StreamId{opt.seed, StreamTag::data, 5, 0});
    const BudgetPlan full = make_budget_plan(30, 2, binomial(30, 2), StreamId{opt.seed, StreamTag::sampling, 5, 0});
    const IncompleteResult r = incomplete_ustat(h, x, full);
    const double u = complete_ustat(h, x);
    return CheckResult{{}, r.value == u && r.nhat == full.tuples, "U' - U_n = " + detail::sci(r.value - u)};
  }));

  results.push_back(detail::timed("incomplete_wn_identity", [&] {
    const CovModel model = equicorrelation_cov(4, 0.2);
    const SymmetricKernel h(tetrad(4, 0, 1, 2, 3));
    std::size_t checked = 0;
    for (std::uint64_t r = 0; r < 100; ++r) {
      const SampleMatrix x = sample_gaussian(model, 20, StreamId{opt.seed, StreamTag::data, 600 + r, 0});
      const BudgetPlan plan = make_budget_plan(20, 2, 40, StreamId{opt.seed, StreamTag::sampling, 600 + r, 0});
      try {
        wn_bn_decompose(h, x, plan, draw_bernoulli_design(plan));
        ++checked;
      } catch (const DegenerateSampleError&) {
      }
    }
    return CheckResult{{}, checked > 90, std::to_string(checked) + " draws"};
  }));

  return results;
}

}  // namespace ustest
