#pragma once

// Random constraints and covariance matrices shared by the unit tests.

#include <vector>

#include "ustest/covmodel.hpp"
#include "ustest/kernel.hpp"
#include "ustest/polynomial.hpp"
#include "ustest/rng.hpp"

namespace testing {

using namespace ustest;

inline CovModel random_model(int p, CounterRng& rng) {
  Matrix a(p, p);
  for (int u = 0; u < p; ++u) {
    for (int v = 0; v < p; ++v) a(u, v) = rng.normal();
  }
  return CovModel(a * a.transpose() / p + 0.3 * Matrix::Identity(p, p));
}

/// Random polynomial of degree exactly `degree` with up to four monomials.
inline PolyConstraint random_poly(int p, int degree, CounterRng& rng) {
  std::vector<Monomial> monos;
  const int count = 1 + static_cast<int>(rng.below(4));
  for (int k = 0; k < count; ++k) {
    Monomial mono;
    mono.coeff = 2.0 * rng.uniform() - 1.0;
    const int r = k == 0 ? degree : 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(degree)));
    for (int j = 0; j < r; ++j) {
      mono.pairs.emplace_back(static_cast<int>(rng.below(p)), static_cast<int>(rng.below(p)));
    }
    monos.push_back(mono);
  }
  return PolyConstraint(p, 2.0 * rng.uniform() - 1.0, monos);
}

/// Shift a0 so that f(Theta) = 0.
inline PolyConstraint centered(const PolyConstraint& f, const Matrix& theta) {
  return PolyConstraint(f.p(), f.a0() - evaluate(f, theta), f.monomials());
}

/// Largest coefficient of a - b after merging.
inline double kernel_distance(const MixedKernel& a, const MixedKernel& b, const Matrix& theta) {
  auto terms = a.terms();
  for (auto term : b.terms()) {
    term.coeff = -term.coeff;
    terms.push_back(std::move(term));
  }
  return MixedKernel(a.arity(), std::move(terms), theta).max_abs_coeff();
}

inline std::vector<std::vector<double>> random_points(int count, int p, CounterRng& rng) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(count), std::vector<double>(p));
  for (auto& x : out) {
    for (auto& v : x) v = rng.normal();
  }
  return out;
}

inline std::vector<const double*> pointers(const std::vector<std::vector<double>>& pts) {
  std::vector<const double*> out;
  for (const auto& x : pts) out.push_back(x.data());
  return out;
}

}  // namespace testing
