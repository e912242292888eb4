#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "ustest/covmodel.hpp"
#include "ustest/polynomial.hpp"

using namespace ustest;
using Catch::Matchers::WithinAbs;

TEST_CASE("one-factor covariance", "[covmodel]") {
  SECTION("loadings 0.2 with uniqueness 0.96 give unit diagonal, 0.04 off it") {
    const std::vector<double> l(4, 0.2), psi(4, 0.96);
    const CovModel m = one_factor_cov(l, psi);
    for (int u = 0; u < 4; ++u) {
      for (int v = 0; v < 4; ++v) CHECK_THAT(m(u, v), WithinAbs(u == v ? 1.0 : 0.04, 1e-15));
    }
    CHECK(m.min_pivot() > 0.0);
  }
  SECTION("zero loadings give the identity") {
    const std::vector<double> l(3, 0.0), psi(3, 1.0);
    CHECK(one_factor_cov(l, psi).theta() == Matrix::Identity(3, 3));
  }
  SECTION("unit loadings on a unit diagonal") {
    const std::vector<double> l{1.0, 1.0}, psi{1.0, 1.0};
    Matrix expect(2, 2);
    expect << 2, 1, 1, 2;
    CHECK(one_factor_cov(l, psi).theta() == expect);
  }
  SECTION("non-positive uniqueness is rejected") {
    const std::vector<double> l{0.5, 0.5}, psi{1.0, 0.0};
    CHECK_THROWS_AS(one_factor_cov(l, psi), DomainError);
  }
  SECTION("unit-diagonal helper") {
    const std::vector<double> l(4, 0.2);
    CHECK_THAT(one_factor_unit_diagonal(l)(0, 0), WithinAbs(1.0, 1e-15));
  }
}

TEST_CASE("equicorrelation covariance", "[covmodel]") {
  const CovModel m = equicorrelation_cov(4, 0.2);
  for (int u = 0; u < 4; ++u) {
    for (int v = 0; v < 4; ++v) CHECK(m(u, v) == (u == v ? 1.0 : 0.2));
  }
  CHECK(equicorrelation_cov(4, 0.0).theta() == Matrix::Identity(4, 4));
  const CovModel near = equicorrelation_cov(2, 0.99);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(near.theta());
  CHECK_THAT(eig.eigenvalues()(0), WithinAbs(0.01, 1e-12));
  CHECK_THAT(eig.eigenvalues()(1), WithinAbs(1.99, 1e-12));
  CHECK_THROWS_AS(equicorrelation_cov(4, 1.0), DomainError);
  CHECK_THROWS_AS(equicorrelation_cov(4, -0.1), DomainError);
  CHECK_THROWS_AS(equicorrelation_cov(1, 0.1), DomainError);
}

TEST_CASE("explicit covariance validation", "[covmodel]") {
  Matrix bad(2, 2);
  bad << 1, 2, 2, 1;
  CHECK_THROWS_AS(CovModel(bad), DomainError);
  Matrix upper(2, 2);
  upper << 1, 0.5, -7, 1;  // lower triangle is ignored
  CHECK(CovModel(upper)(1, 0) == 0.5);
  Matrix singular = Matrix::Ones(3, 3);
  CHECK_THROWS_AS(CovModel(singular), DomainError);
}

TEST_CASE("gaussian sampling", "[covmodel]") {
  const CovModel id(Matrix::Identity(4, 4));
  SECTION("sample variances near 1 at n = 1e5") {
    const std::size_t n = 100000;
    const SampleMatrix x = sample_gaussian(id, n, StreamId{42, StreamTag::data, 0, 0});
    for (int u = 0; u < 4; ++u) {
      double ss = 0.0;
      for (std::size_t i = 0; i < n; ++i) ss += x(i, u) * x(i, u);
      CHECK(std::abs(ss / n - 1.0) <= 4.0 * std::sqrt(2.0 / n));
    }
    const Matrix s = sample_covariance(x);
    CHECK((s - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() <= 5.0 * std::sqrt(3.0 / n));
  }
  SECTION("bit-identical under a fixed stream") {
    const StreamId sid{9, StreamTag::data, 17, 0};
    const CovModel m = equicorrelation_cov(3, 0.3);
    CHECK(sample_gaussian(m, 50, sid).values() == sample_gaussian(m, 50, sid).values());
  }
  SECTION("single row") {
    const SampleMatrix x = sample_gaussian(id, 1, StreamId{1, StreamTag::data, 0, 0});
    CHECK(x.n() == 1);
    for (double v : x.values()) CHECK(std::isfinite(v));
  }
  SECTION("correlated draws reproduce Theta") {
    const CovModel m = equicorrelation_cov(3, 0.5);
    const std::size_t n = 200000;
    const Matrix s = sample_covariance(sample_gaussian(m, n, StreamId{3, StreamTag::data, 0, 0}));
    // Entry variance is (theta_uv^2 + theta_uu theta_vv) / n <= 2 / n here.
    CHECK((s - m.theta()).cwiseAbs().maxCoeff() <= 5.0 * std::sqrt(2.0 / n));
  }
}

TEST_CASE("sample covariance arithmetic", "[covmodel]") {
  Matrix expect(2, 2);
  expect << 1, 2, 2, 4;
  CHECK(sample_covariance(SampleMatrix(1, 2, {1.0, 2.0})) == expect);
  expect << 1, 0, 0, 0;
  CHECK(sample_covariance(SampleMatrix(2, 2, {1.0, 0.0, -1.0, 0.0})) == expect);
  CHECK_THROWS_AS(SampleMatrix(1, 2, {1.0, std::nan("")}), DomainError);
  CHECK_THROWS_AS(SampleMatrix(0, 2, {}), DomainError);
}

TEST_CASE("one-factor models satisfy every tetrad", "[covmodel]") {
  auto rng = make_stream(2024, StreamTag::user);
  const PolyConstraint t = tetrad(4, 0, 1, 2, 3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> l(4), psi(4);
    for (int u = 0; u < 4; ++u) {
      l[u] = 2.0 * rng.uniform() - 1.0;
      psi[u] = 0.1 + rng.uniform();
    }
    CHECK(std::abs(evaluate(t, one_factor_cov(l, psi).theta())) <= 1e-12);
  }
}
