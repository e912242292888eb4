#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "support.hpp"
#include "ustest/estimators.hpp"
#include "ustest/normal.hpp"

using namespace ustest;
using namespace testing;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

const std::vector<double> kLoadings(4, 0.2);

CovModel figure_model() { return one_factor_unit_diagonal(kLoadings); }

PolyConstraint figure_tetrad() { return tetrad(4, 0, 1, 2, 3); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size() / 2;
  return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

}  // namespace

TEST_CASE("binomial and tuple enumeration", "[estimators]") {
  CHECK(binomial(100, 2) == 4950);
  CHECK(binomial(12, 3) == 220);
  CHECK(binomial(5, 0) == 1);
  CHECK(binomial(3, 5) == 0);
  CHECK_THROWS_AS(binomial(200, 100), DomainError);
  std::vector<std::vector<std::size_t>> seen;
  for_each_tuple(5, 3, [&](std::span<const std::size_t> idx) { seen.emplace_back(idx.begin(), idx.end()); });
  CHECK(seen.size() == 10);
  CHECK(std::is_sorted(seen.begin(), seen.end()));
  CHECK(seen.front() == std::vector<std::size_t>{0, 1, 2});
  CHECK(seen.back() == std::vector<std::size_t>{2, 3, 4});
}

TEST_CASE("budget plans", "[estimators]") {
  const BudgetPlan plan = make_budget_plan(100, 2, 200, StreamId{1, StreamTag::sampling, 0, 0});
  CHECK(plan.tuples == 4950);
  CHECK_THAT(plan.p_sample, WithinRel(200.0 / 4950.0, 1e-15));
  CHECK(make_budget_plan(100, 2, 4950, {}).p_sample == 1.0);
  CHECK_THROWS_AS(make_budget_plan(100, 2, 0, {}), DomainError);
  CHECK_THROWS_AS(make_budget_plan(100, 2, 4951, {}), DomainError);
  CHECK(parse_budget("200", 100) == 200);
  CHECK(parse_budget("x2", 100) == 200);
  CHECK(parse_budget("x0.5", 100) == 50);
  CHECK_THROWS_AS(parse_budget("2x", 100), DomainError);
  CHECK_THROWS_AS(parse_budget("-3", 100), DomainError);
  CHECK_THROWS_AS(parse_budget("", 100), DomainError);
}

TEST_CASE("complete U-statistic", "[estimators]") {
  const PolyConstraint f(2, 0.0, {Monomial{1.0, {PairIndex(0, 0), PairIndex(1, 1)}}});
  // h(x, y) = (x_1^2 y_2^2 + y_1^2 x_2^2) / 2
  const SampleMatrix x(3, 2, {1.0, 2.0, 3.0, -1.0, 0.5, 1.0});
  auto h = [](double a1, double a2, double b1, double b2) { return 0.5 * (a1 * a1 * b2 * b2 + b1 * b1 * a2 * a2); };
  const double expect = (h(1, 2, 3, -1) + h(1, 2, 0.5, 1) + h(3, -1, 0.5, 1)) / 3.0;
  CHECK_THAT(complete_ustat(f, x), WithinRel(expect, 1e-15));
  CHECK_THROWS_AS(complete_ustat(tetrad(4, 0, 1, 2, 3), SampleMatrix(1, 4, {1, 2, 3, 4})), DomainError);

  // theta_12 + 3 on data with x_2 = 0: every kernel value is 3
  const PolyConstraint shifted(2, 3.0, {Monomial{1.0, {PairIndex(0, 1)}}});
  CHECK(complete_ustat(shifted, SampleMatrix(4, 2, {1.0, 0.0, 2.0, 0.0, -1.0, 0.0, 5.0, 0.0})) == 3.0);

  SECTION("unbiased at the one-factor null") {
    const CovModel model = figure_model();
    const SymmetricKernel k(figure_tetrad());
    const int reps = 2000;
    double sum = 0.0, sum_sq = 0.0;
    for (int r = 0; r < reps; ++r) {
      const double u = complete_ustat(k, sample_gaussian(model, 100, StreamId{5, StreamTag::data, static_cast<std::uint64_t>(r), 0}));
      sum += u;
      sum_sq += u * u;
    }
    const double mean = sum / reps;
    const double se = std::sqrt((sum_sq / reps - mean * mean) / reps);
    CHECK(std::abs(mean) <= 4.0 * se);
  }
}

TEST_CASE("incomplete U-statistic", "[estimators]") {
  const CovModel model = figure_model();
  const PolyConstraint t = figure_tetrad();
  const SymmetricKernel h(t);
  const SampleMatrix x = sample_gaussian(model, 40, StreamId{7, StreamTag::data, 0, 0});

  SECTION("p = 1 reproduces U_n exactly") {
    const BudgetPlan full = make_budget_plan(40, 2, binomial(40, 2), StreamId{7, StreamTag::sampling, 0, 0});
    const IncompleteResult r = incomplete_ustat(h, x, full);
    CHECK(r.value == complete_ustat(h, x));
    CHECK(r.nhat == full.tuples);
  }
  SECTION("deterministic and evaluated only on selected tuples") {
    const BudgetPlan plan = make_budget_plan(40, 2, 80, StreamId{7, StreamTag::sampling, 3, 0});
    const IncompleteResult a = incomplete_ustat(h, x, plan);
    const IncompleteResult b = incomplete_ustat(h, x, plan);
    CHECK(a.value == b.value);
    CHECK(a.evaluations == b.evaluations);
    CHECK(a.evaluations.size() == a.nhat);
    const auto flips = draw_bernoulli_design(plan);
    CHECK(static_cast<std::uint64_t>(std::count(flips.begin(), flips.end(), 1)) == a.nhat);
  }
  SECTION("E[N-hat] = N") {
    const SampleMatrix big = sample_gaussian(model, 100, StreamId{7, StreamTag::data, 1, 0});
    const int reps = 400;
    double sum = 0.0;
    for (int r = 0; r < reps; ++r) {
      sum += static_cast<double>(
          incomplete_ustat(h, big, make_budget_plan(100, 2, 200, StreamId{8, StreamTag::sampling, static_cast<std::uint64_t>(r), 0})).nhat);
    }
    const double p = 200.0 / 4950.0;
    const double se = std::sqrt(4950.0 * p * (1 - p) / reps);
    CHECK(std::abs(sum / reps - 200.0) <= 4.0 * se);
  }
  SECTION("N-hat = 0 is reported") {
    // p = 1 / C(40, 2): the first stream that selects nothing
    bool thrown = false;
    for (std::uint64_t s = 0; s < 50 && !thrown; ++s) {
      try {
        incomplete_ustat(h, x, make_budget_plan(40, 2, 1, StreamId{9, StreamTag::sampling, s, 0}));
      } catch (const DegenerateSampleError&) {
        thrown = true;
      }
    }
    CHECK(thrown);
  }
}

TEST_CASE("W_n / B_n decomposition", "[estimators]") {
  const CovModel model = equicorrelation_cov(4, 0.2);
  const PolyConstraint t = tetrad(4, 0, 1, 2, 3);
  const SymmetricKernel h(t);
  SECTION("identity on random draws, recomputed independently") {
    for (int r = 0; r < 200; ++r) {
      const SampleMatrix x = sample_gaussian(model, 30, StreamId{11, StreamTag::data, static_cast<std::uint64_t>(r), 0});
      const BudgetPlan plan = make_budget_plan(30, 2, 60, StreamId{11, StreamTag::sampling, static_cast<std::uint64_t>(r), 0});
      const auto flips = draw_bernoulli_design(plan);
      const WnBnDecomposition d = wn_bn_decompose(h, x, plan, flips);
      const IncompleteResult inc = incomplete_ustat(h, x, plan);
      CHECK(d.u_prime == inc.value);
      CHECK(d.nhat == inc.nhat);
      CHECK(d.u == complete_ustat(h, x));
      // B_n from scratch
      double b = 0.0;
      std::size_t k = 0;
      for_each_tuple(30, 2, [&](std::span<const std::size_t> idx) {
        const double* args[] = {x.row(idx[0]).data(), x.row(idx[1]).data()};
        b += (flips[k++] - plan.p_sample) / std::sqrt(1.0 - plan.p_sample) * h(args);
      });
      b /= 60.0;
      CHECK_THAT(d.b, WithinAbs(b, 1e-13));
      double scale = std::abs(inc.value);
      for (double v : inc.evaluations) scale = std::max(scale, std::abs(v));
      CHECK(std::abs(60.0 / static_cast<double>(d.nhat) * d.w - inc.value) <= 1e-12 * scale);
    }
  }
  SECTION("all flips one") {
    const SampleMatrix x = sample_gaussian(model, 20, StreamId{12, StreamTag::data, 0, 0});
    const BudgetPlan plan = make_budget_plan(20, 2, 50, {});
    const std::vector<std::uint8_t> ones(plan.tuples, 1);
    const WnBnDecomposition d = wn_bn_decompose(h, x, plan, ones);
    const double expect = std::sqrt(1.0 - plan.p_sample) * (190.0 / 50.0) * d.u;
    CHECK_THAT(d.b, WithinAbs(expect, 1e-12 * std::max(1.0, std::abs(expect))));
  }
  SECTION("p = 1 is rejected") {
    const SampleMatrix x = sample_gaussian(model, 10, StreamId{12, StreamTag::data, 1, 0});
    const BudgetPlan plan = make_budget_plan(10, 2, 45, {});
    CHECK_THROWS_AS(wn_bn_decompose(h, x, plan, draw_bernoulli_design(plan)), DomainError);
  }
  SECTION("E[B_n | data] = 0") {
    const SampleMatrix x = sample_gaussian(model, 30, StreamId{13, StreamTag::data, 0, 0});
    const int reps = 10000;
    double sum = 0.0, sum_sq = 0.0;
    for (int r = 0; r < reps; ++r) {
      const BudgetPlan plan = make_budget_plan(30, 2, 60, StreamId{13, StreamTag::sampling, static_cast<std::uint64_t>(r), 0});
      const double b = wn_bn_decompose(h, x, plan, draw_bernoulli_design(plan)).b;
      sum += b;
      sum_sq += b * b;
    }
    const double mean = sum / reps;
    const double se = std::sqrt((sum_sq / reps - mean * mean) / reps);
    CHECK(std::abs(mean) <= 4.0 * se);
  }
}

TEST_CASE("block estimator", "[estimators]") {
  const PolyConstraint lin(2, 0.0, {Monomial{1.0, {PairIndex(0, 1)}}});
  const PolyConstraint prod(2, 0.0, {Monomial{1.0, {PairIndex(0, 0), PairIndex(1, 1)}}});
  const SampleMatrix x(5, 2, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
  const SymmetricKernel h(prod);
  const double* a[] = {x.row(0).data(), x.row(1).data()};
  const double* b[] = {x.row(2).data(), x.row(3).data()};
  CHECK(block_estimator(h, x) == 0.5 * (h(a) + h(b)));
  CHECK(block_estimator(h, x.head(2)) == h(a));
  CHECK(block_estimator(SymmetricKernel(lin), x) == (2 + 12 + 30 + 56 + 90) / 5.0);

  SECTION("standardized block statistic is normal at the identity") {
    const CovModel id(Matrix::Identity(4, 4));
    const PolyConstraint t = tetrad(4, 0, 1, 2, 3);
    const SymmetricKernel k(t);
    const double sh2 = sigma_h_squared(t, id);
    std::vector<double> z;
    for (int r = 0; r < 2000; ++r) {
      z.push_back(block_standardized(k, sample_gaussian(id, 100, StreamId{14, StreamTag::data, static_cast<std::uint64_t>(r), 0}), sh2).zscore);
    }
    CHECK(ks_normality(z) <= 0.05);
  }
}

TEST_CASE("projection U-statistics", "[estimators]") {
  const CovModel model = equicorrelation_cov(4, 0.3);
  const PolyConstraint t = tetrad(4, 0, 1, 2, 3);
  const SampleMatrix x = sample_gaussian(model, 12, StreamId{15, StreamTag::data, 0, 0});
  double gmean = 0.0;
  for (std::size_t i = 0; i < 12; ++i) gmean += eval_g(t, model, x.row(i));
  CHECK_THAT(projection_ustat(t, model, x, 1), WithinAbs(gmean / 12.0, 1e-14));

  auto rng = make_stream(16, StreamTag::user);
  for (int m = 2; m <= 3; ++m) {
    for (int trial = 0; trial < 5; ++trial) {
      const CovModel mod = random_model(3, rng);
      const PolyConstraint f = random_poly(3, m, rng);
      const SampleMatrix y = sample_gaussian(mod, 12, StreamId{16, StreamTag::data, static_cast<std::uint64_t>(trial), 0});
      double total = evaluate(f, mod.theta());
      for (int r = 1; r <= m; ++r) total += static_cast<double>(binomial(m, r)) * projection_ustat(f, mod, y, r);
      const double u = complete_ustat(f, y);
      CHECK(std::abs(total - u) <= 1e-10 * std::max(1.0, std::abs(u)));
    }
  }

  SECTION("second projection is orthogonal to g") {
    const MixedKernel pi2 = hoeffding_projection(t, model, 2).merged();
    const int reps = 20000;
    double sum = 0.0, sum_sq = 0.0;
    for (int r = 0; r < reps; ++r) {
      const SampleMatrix y = sample_gaussian(model, 6, StreamId{17, StreamTag::data, static_cast<std::uint64_t>(r), 0});
      const double v = projection_ustat(pi2, y) * eval_g(t, model, y.row(0));
      sum += v;
      sum_sq += v * v;
    }
    const double mean = sum / reps;
    const double se = std::sqrt((sum_sq / reps - mean * mean) / reps);
    CHECK(std::abs(mean) <= 4.0 * se);
  }
}

TEST_CASE("Wald statistics", "[estimators]") {
  const CovModel model = figure_model();
  const PolyConstraint t = figure_tetrad();
  // X^T X / p = Theta exactly (up to rounding) for X = sqrt(p) L^T
  const Matrix lt = std::sqrt(4.0) * model.cholesky().transpose();
  std::vector<double> vals;
  for (int i = 0; i < 4; ++i) {
    for (int u = 0; u < 4; ++u) vals.push_back(lt(i, u));
  }
  const SampleMatrix exact(4, 4, vals);
  const TestOutcome a = wald_standardized(t, model, exact);
  CHECK_THAT(a.zscore, WithinAbs(0.0, 1e-12));
  CHECK_THAT(a.pvalue, WithinAbs(1.0, 1e-12));
  const TestOutcome b = wald_studentized(t, exact);
  CHECK_THAT(b.normalizer, WithinRel(a.normalizer, 1e-12));
  CHECK_THAT(a.normalizer * a.normalizer, WithinRel(4.0 * sigma_g_squared(t, model), 1e-10));

  const CovModel id(Matrix::Identity(4, 4));
  const SampleMatrix x = sample_gaussian(id, 100, StreamId{18, StreamTag::data, 0, 0});
  CHECK_THROWS_AS(wald_standardized(t, id, x), SingularHypothesisError);

  SECTION("studentized Wald statistic is finite at the identity") {
    for (int r = 0; r < 10000; ++r) {
      const SampleMatrix y = sample_gaussian(id, 100, StreamId{19, StreamTag::data, static_cast<std::uint64_t>(r), 0});
      const TestOutcome o = wald_studentized(t, y);
      REQUIRE(std::isfinite(o.zscore));
    }
  }
  SECTION("leading term: sqrt(n)|f(Theta_hat) - U_n| shrinks with n") {
    const SymmetricKernel h(t);
    std::vector<double> med;
    for (std::size_t n : {100, 400}) {
      std::vector<double> gap;
      for (int r = 0; r < 200; ++r) {
        const SampleMatrix y = sample_gaussian(model, n, StreamId{20, StreamTag::data, static_cast<std::uint64_t>(r), static_cast<std::uint32_t>(n)});
        gap.push_back(std::sqrt(static_cast<double>(n)) *
                      std::abs(evaluate(t, sample_covariance(y)) - complete_ustat(h, y)));
      }
      med.push_back(median(gap));
    }
    CHECK(med[1] < med[0] / 1.5);
  }
}

TEST_CASE("incomplete statistics", "[estimators]") {
  const PolyConstraint t = tetrad(4, 0, 1, 2, 3);
  const SymmetricKernel h(t);
  SECTION("standardized at the identity uses only sigma_h") {
    const CovModel id(Matrix::Identity(4, 4));
    const KernelMoments km = kernel_moments(t, id);
    CHECK(km.sigma_g2 == 0.0);
    CHECK_THAT(icu_limiting_variance(km, 100, 200), WithinAbs(0.5 * km.sigma_h2, 1e-15));
    const SampleMatrix x = sample_gaussian(id, 100, StreamId{21, StreamTag::data, 0, 0});
    const TestOutcome o = icu_standardized(t, id, x, make_budget_plan(100, 2, 200, StreamId{21, StreamTag::sampling, 0, 0}));
    CHECK(*o.sigma2 == 0.5 * km.sigma_h2);
    CHECK_THAT(o.zscore, WithinRel(10.0 * o.statistic / std::sqrt(*o.sigma2), 1e-14));
  }
  SECTION("p = 1 budget") {
    const CovModel model = figure_model();
    const KernelMoments km = kernel_moments(t, model);
    CHECK_THAT(icu_limiting_variance(km, 100, 4950),
               WithinRel(4.0 * km.sigma_g2 + 100.0 / 4950.0 * km.sigma_h2, 1e-15));
    const SampleMatrix x = sample_gaussian(model, 100, StreamId{22, StreamTag::data, 0, 0});
    const TestOutcome o = icu_standardized(t, model, x, make_budget_plan(100, 2, 4950, {}));
    CHECK(o.statistic == complete_ustat(h, x));
  }
  SECTION("studentized: degenerate data") {
    const SampleMatrix zeros(10, 4, std::vector<double>(40, 0.0));
    CHECK_THROWS_AS(icu_studentized(t, zeros, make_budget_plan(10, 2, 45, {}), StreamId{}), DegenerateStudentizerError);
    const SampleMatrix few(3, 4, std::vector<double>(12, 1.0));
    CHECK_THROWS_AS(icu_studentized(t, few, make_budget_plan(3, 2, 3, {}), StreamId{}), DomainError);
  }
  SECTION("studentized: determinism") {
    const CovModel model = figure_model();
    const SampleMatrix x = sample_gaussian(model, 100, StreamId{23, StreamTag::data, 0, 0});
    const BudgetPlan plan = make_budget_plan(100, 2, 200, StreamId{23, StreamTag::sampling, 0, 0});
    const StreamId sid{23, StreamTag::studentizer, 0, 0};
    const TestOutcome a = icu_studentized(t, x, plan, sid);
    const TestOutcome b = icu_studentized(t, x, plan, sid);
    CHECK(a.zscore == b.zscore);
    CHECK(a.sigma2 == b.sigma2);
    CHECK(a.nhat == b.nhat);
    CHECK(*a.sigma2 == 4.0 * std::max(*a.sigma_g2, 0.0) + 0.5 * *a.sigma_h2);
  }
  SECTION("divide-and-conquer sigma_g^2 is unbiased") {
    const CovModel model = equicorrelation_cov(4, 0.2);
    const double target = sigma_g_squared(t, model);
    const int reps = 5000;
    double sum = 0.0, sum_sq = 0.0;
    for (int r = 0; r < reps; ++r) {
      const auto id = static_cast<std::uint64_t>(r);
      const SampleMatrix x = sample_gaussian(model, 200, StreamId{24, StreamTag::data, id, 0});
      const double v = dc_sigma_g2(h, x, StreamId{24, StreamTag::studentizer, id, 0});
      sum += v;
      sum_sq += v * v;
    }
    const double mean = sum / reps;
    const double se = std::sqrt((sum_sq / reps - mean * mean) / reps);
    CHECK(std::abs(mean - target) <= 4.0 * se);
  }
}
