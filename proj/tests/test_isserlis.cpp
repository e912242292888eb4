#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <thread>
#include <vector>

#include "ustest/isserlis.hpp"
#include "ustest/moments.hpp"

using namespace ustest;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

CovModel random_model(int p, CounterRng& rng) {
  Matrix a(p, p);
  for (int u = 0; u < p; ++u) {
    for (int v = 0; v < p; ++v) a(u, v) = rng.normal();
  }
  return CovModel(a * a.transpose() / p + 0.2 * Matrix::Identity(p, p));
}

}  // namespace

TEST_CASE("pairing counts", "[isserlis]") {
  CHECK(count_pairings(2) == 1);
  CHECK(count_pairings(4) == 3);
  CHECK(count_pairings(6) == 15);
  CHECK(count_pairings(8) == 105);
  CHECK(count_pairings(12) == 10395);
  CHECK(count_pairings(5) == 0);
}

TEST_CASE("base cases at the identity", "[isserlis]") {
  const CovModel id(Matrix::Identity(4, 4));
  IsserlisMoments mom(id);
  CHECK(mom({0, 0, 1, 1}) == 1.0);
  CHECK(mom({2, 2, 2, 2}) == 3.0);
  CHECK(mom({0, 1, 0, 1}) == 1.0);
  CHECK(mom({0, 0, 0, 0, 0, 0}) == 15.0);
  CHECK(mom({0, 1}) == 0.0);
  CHECK(mom({0, 0, 1}) == 0.0);
  CHECK(mom({}) == 1.0);
  CHECK_THROWS_AS(mom({0, 4}), DomainError);
}

TEST_CASE("memoized recursion equals plain enumeration", "[isserlis]") {
  auto rng = make_stream(101, StreamTag::user);
  for (int trial = 0; trial < 40; ++trial) {
    const int p = 2 + static_cast<int>(rng.below(4));
    const CovModel model = random_model(p, rng);
    IsserlisMoments mom(model);
    const int k = 2 * (1 + static_cast<int>(rng.below(5)));
    std::vector<int> key(static_cast<std::size_t>(k));
    for (auto& i : key) i = static_cast<int>(rng.below(p));
    const double exact = isserlis_moment_enumerated(model.theta(), key);
    CHECK_THAT(mom(key), WithinRel(exact, 1e-12) || WithinAbs(exact, 1e-13));
    // base case and permutation invariance
    CHECK(mom({key[0], key[1]}) == model(key[0], key[1]));
    std::vector<int> shuffled = key;
    rng.shuffle(std::span<int>(shuffled));
    CHECK(mom(shuffled) == mom(key));
    key.push_back(0);
    CHECK(mom(key) == 0.0);
  }
}

TEST_CASE("wishart covariance", "[isserlis]") {
  SECTION("identity") {
    const Matrix v = wishart_cov(CovModel(Matrix::Identity(3, 3)));
    const auto pairs = upper_pairs(3);
    for (std::size_t a = 0; a < pairs.size(); ++a) {
      for (std::size_t b = 0; b < pairs.size(); ++b) {
        const double expect = a != b ? 0.0 : (pairs[a].u == pairs[a].v ? 2.0 : 1.0);
        CHECK(v(a, b) == expect);
      }
    }
  }
  SECTION("equals the Isserlis covariance of the upper triangle of X X^T") {
    auto rng = make_stream(102, StreamTag::user);
    for (int trial = 0; trial < 10; ++trial) {
      const int p = 2 + static_cast<int>(rng.below(4));
      const CovModel model = random_model(p, rng);
      const Matrix v = wishart_cov(model);
      const auto pairs = upper_pairs(p);
      IsserlisMoments mom(model);
      for (std::size_t a = 0; a < pairs.size(); ++a) {
        for (std::size_t b = 0; b < pairs.size(); ++b) {
          const auto [u, w] = std::pair{pairs[a].u, pairs[a].v};
          const auto [y, z] = std::pair{pairs[b].u, pairs[b].v};
          const double cov = mom({u, w, y, z}) - model(u, w) * model(y, z);
          CHECK_THAT(v(a, b), WithinAbs(cov, 1e-12));
        }
      }
      Eigen::LLT<Matrix> llt(v);
      CHECK(llt.info() == Eigen::Success);
    }
  }
}

TEST_CASE("concurrent use of separate caches", "[isserlis]") {
  const CovModel model = equicorrelation_cov(4, 0.3);
  const std::vector<int> key{0, 1, 2, 3, 0, 1, 2, 3};
  const double expect = isserlis_moment(model, key);
  std::vector<double> got(4);
  std::vector<std::thread> pool;
  for (int t = 0; t < 4; ++t) {
    pool.emplace_back([&, t] {
      IsserlisMoments mom(model);
      double v = 0.0;
      for (int r = 0; r < 50; ++r) v = mom(key);
      got[t] = v;
    });
  }
  for (auto& th : pool) th.join();
  for (double v : got) CHECK(v == expect);
}
