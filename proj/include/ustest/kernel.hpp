#pragma once

// U-statistic kernels for a polynomial constraint.
//
// Two representations live here:
//
//  * SymmetricKernel: a compiled evaluator of the symmetrized kernel h,
//    averaging the unbiased product kernel over all m! argument orders at
//    call time. Estimators use this one.
//
//  * MixedKernel: a symbolic sum of monomials whose factors are either
//    products x_u x_v of one argument slot ("data factors") or entries
//    theta_uv ("constant factors"). Partial expectations and Hoeffding
//    projections need to integrate out individual slots exactly, which the
//    symbolic form supports through Isserlis moments.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "ustest/covmodel.hpp"
#include "ustest/errors.hpp"
#include "ustest/isserlis.hpp"
#include "ustest/polynomial.hpp"

namespace ustest {

/// Largest degree for which m! argument orders are averaged.
inline constexpr int kMaxKernelDegree = 6;

namespace detail {

inline void check_degree(int m) {
  if (m > kMaxKernelDegree) {
    throw DomainError("kernel degree " + std::to_string(m) + " exceeds the supported maximum of " +
                      std::to_string(kMaxKernelDegree));
  }
}

inline std::vector<std::vector<int>> all_permutations(int m) {
  std::vector<int> perm(static_cast<std::size_t>(m));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::vector<int>> out;
  do {
    out.push_back(perm);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Compiled symmetric kernel

/// Evaluator for the symmetrized kernel h of a constraint f.
class SymmetricKernel {
 public:
  explicit SymmetricKernel(const PolyConstraint& f) : degree_(f.degree()), p_(f.p()), a0_(f.a0()) {
    detail::check_degree(degree_);
    std::map<PairIndex, int> slot_of;
    for (const auto& mono : f.monomials()) {
      Term term{mono.coeff, {}};
      for (const auto& pr : mono.pairs) {
        auto [it, inserted] = slot_of.emplace(pr, static_cast<int>(pairs_.size()));
        if (inserted) pairs_.push_back(pr);
        term.pair_ids.push_back(it->second);
      }
      terms_.push_back(std::move(term));
    }
    perms_ = detail::all_permutations(degree_);
    inv_perm_count_ = 1.0 / static_cast<double>(perms_.size());
  }

  int degree() const { return degree_; }

  /// Unsymmetrized product kernel: monomial factor j is read from argument j.
  double breve(std::span<const double* const> args) const {
    check_arity(args.size());
    double total = a0_;
    for (const auto& term : terms_) {
      double prod = term.coeff;
      for (std::size_t j = 0; j < term.pair_ids.size(); ++j) {
        const auto& pr = pairs_[static_cast<std::size_t>(term.pair_ids[j])];
        prod *= args[j][pr.u] * args[j][pr.v];
      }
      total += prod;
    }
    return total;
  }

  /// h(x_1, ..., x_m): breve averaged over every argument order. The
  /// arguments are first put in lexicographic order so that permuted inputs
  /// give bit-identical results.
  double operator()(std::span<const double* const> input) const {
    check_arity(input.size());
    std::array<const double*, kMaxKernelDegree> sorted{};
    std::copy(input.begin(), input.end(), sorted.begin());
    const auto p = static_cast<std::size_t>(p_);
    std::sort(sorted.begin(), sorted.begin() + degree_, [p](const double* a, const double* b) {
      return std::lexicographical_compare(a, a + p, b, b + p);
    });
    const std::span<const double* const> args(sorted.data(), static_cast<std::size_t>(degree_));
    const std::size_t npairs = pairs_.size();
    double local[kMaxKernelDegree * 32];
    std::vector<double> heap;
    double* table = local;
    if (npairs * static_cast<std::size_t>(degree_) > std::size(local)) {
      heap.resize(npairs * static_cast<std::size_t>(degree_));
      table = heap.data();
    }
    for (int a = 0; a < degree_; ++a) {
      const double* x = args[static_cast<std::size_t>(a)];
      for (std::size_t q = 0; q < npairs; ++q) {
        table[static_cast<std::size_t>(a) * npairs + q] = x[pairs_[q].u] * x[pairs_[q].v];
      }
    }
    double sum = 0.0;
    for (const auto& perm : perms_) {
      for (const auto& term : terms_) {
        double prod = term.coeff;
        for (std::size_t j = 0; j < term.pair_ids.size(); ++j) {
          prod *= table[static_cast<std::size_t>(perm[j]) * npairs +
                        static_cast<std::size_t>(term.pair_ids[j])];
        }
        sum += prod;
      }
    }
    return a0_ + sum * inv_perm_count_;
  }

 private:
  struct Term {
    double coeff;
    std::vector<int> pair_ids;
  };

  void check_arity(std::size_t n) const {
    if (n != static_cast<std::size_t>(degree_)) throw DomainError("kernel called with wrong arity");
  }

  int degree_;
  int p_;
  double a0_;
  std::vector<PairIndex> pairs_;
  std::vector<Term> terms_;
  std::vector<std::vector<int>> perms_;
  double inv_perm_count_ = 1.0;
};

/// Convenience wrapper: h(x_1, ..., x_m) for a constraint.
inline double eval_h(const PolyConstraint& f, std::span<const double* const> args) {
  return SymmetricKernel(f)(args);
}

// ---------------------------------------------------------------------------
// Symbolic kernels

/// theta_hat_{uv}(x_slot) = x_slot[u] * x_slot[v].
struct SlotFactor {
  int slot = 0;
  PairIndex pair;

  auto operator<=>(const SlotFactor&) const = default;
};

struct KernelTerm {
  double coeff = 0.0;
  std::vector<SlotFactor> data;
  std::vector<PairIndex> constants;
};

class MixedKernel {
 public:
  MixedKernel(int arity, std::vector<KernelTerm> terms, std::optional<Matrix> theta = std::nullopt)
      : arity_(arity), terms_(std::move(terms)), theta_(std::move(theta)) {
    if (arity_ < 0) throw DomainError("kernel arity must be non-negative");
    for (const auto& term : terms_) {
      for (const auto& factor : term.data) {
        if (factor.slot < 0 || factor.slot >= arity_) {
          throw DomainError("kernel factor bound to a slot outside the arity");
        }
      }
      if (!term.constants.empty() && !theta_) {
        throw DomainError("kernel has constant factors but no covariance bound");
      }
    }
  }

  int arity() const { return arity_; }
  const std::vector<KernelTerm>& terms() const { return terms_; }
  const std::optional<Matrix>& theta() const { return theta_; }
  bool canonical() const { return canonical_; }
  void set_canonical(bool flag) { canonical_ = flag; }

  double operator()(std::span<const double* const> args) const {
    if (args.size() != static_cast<std::size_t>(arity_)) {
      throw DomainError("kernel called with wrong arity");
    }
    double total = 0.0;
    for (const auto& term : terms_) {
      double prod = term.coeff;
      for (const auto& pr : term.constants) prod *= (*theta_)(pr.u, pr.v);
      for (const auto& f : term.data) {
        const double* x = args[static_cast<std::size_t>(f.slot)];
        prod *= x[f.pair.u] * x[f.pair.v];
      }
      total += prod;
    }
    return total;
  }

  /// Constant factors folded into coefficients, data factors sorted and
  /// terms with identical data factors summed. Exact zeros are dropped.
  MixedKernel merged() const {
    std::map<std::vector<SlotFactor>, double> acc;
    for (const auto& term : terms_) {
      double coeff = term.coeff;
      for (const auto& pr : term.constants) coeff *= (*theta_)(pr.u, pr.v);
      auto data = term.data;
      std::sort(data.begin(), data.end());
      acc[data] += coeff;
    }
    std::vector<KernelTerm> out;
    for (auto& [data, coeff] : acc) {
      if (coeff != 0.0) out.push_back(KernelTerm{coeff, data, {}});
    }
    MixedKernel result(arity_, std::move(out), theta_);
    result.canonical_ = canonical_;
    return result;
  }

  /// Replace the factors in `slot` by their Gaussian expectation; later
  /// slots shift down by one.
  MixedKernel integrate_slot(int slot, IsserlisMoments& moments) const {
    if (slot < 0 || slot >= arity_) throw DomainError("cannot integrate a slot outside the arity");
    std::vector<KernelTerm> out;
    out.reserve(terms_.size());
    std::vector<int> key;
    for (const auto& term : terms_) {
      key.clear();
      KernelTerm next{term.coeff, {}, term.constants};
      for (const auto& f : term.data) {
        if (f.slot == slot) {
          key.push_back(f.pair.u);
          key.push_back(f.pair.v);
        } else {
          next.data.push_back({f.slot > slot ? f.slot - 1 : f.slot, f.pair});
        }
      }
      if (!key.empty()) next.coeff *= moments(key);
      if (next.coeff != 0.0) out.push_back(std::move(next));
    }
    return MixedKernel(arity_ - 1, std::move(out), moments.theta());
  }

  /// Rebind slot j to slot `targets[j]` of a kernel with `new_arity` slots.
  MixedKernel remap_slots(std::span<const int> targets, int new_arity) const {
    if (targets.size() != static_cast<std::size_t>(arity_)) {
      throw DomainError("slot map size must equal the arity");
    }
    auto terms = terms_;
    for (auto& term : terms) {
      for (auto& f : term.data) f.slot = targets[static_cast<std::size_t>(f.slot)];
    }
    return MixedKernel(new_arity, std::move(terms), theta_);
  }

  double max_abs_coeff() const {
    double best = 0.0;
    for (const auto& term : merged().terms_) best = std::max(best, std::abs(term.coeff));
    return best;
  }

 private:
  int arity_;
  std::vector<KernelTerm> terms_;
  std::optional<Matrix> theta_;
  bool canonical_ = false;
};

/// Unbiased product kernel: monomial factor i bound to slot i; arity m.
inline MixedKernel build_breve_h(const PolyConstraint& f) {
  std::vector<KernelTerm> terms;
  terms.push_back(KernelTerm{f.a0(), {}, {}});
  for (const auto& mono : f.monomials()) {
    KernelTerm term{mono.coeff, {}, {}};
    for (std::size_t j = 0; j < mono.pairs.size(); ++j) {
      term.data.push_back({static_cast<int>(j), mono.pairs[j]});
    }
    terms.push_back(std::move(term));
  }
  return MixedKernel(f.degree(), std::move(terms));
}

/// Symbolic symmetrized kernel h (average of breve_h over m! slot orders), merged.
inline MixedKernel build_h(const PolyConstraint& f) {
  const int m = f.degree();
  detail::check_degree(m);
  const auto perms = detail::all_permutations(m);
  const double w = 1.0 / static_cast<double>(perms.size());
  std::vector<KernelTerm> terms;
  terms.push_back(KernelTerm{f.a0(), {}, {}});
  for (const auto& perm : perms) {
    for (const auto& mono : f.monomials()) {
      KernelTerm term{mono.coeff * w, {}, {}};
      for (std::size_t j = 0; j < mono.pairs.size(); ++j) term.data.push_back({perm[j], mono.pairs[j]});
      terms.push_back(std::move(term));
    }
  }
  return MixedKernel(m, std::move(terms)).merged();
}

/// Projection kernel g(x) = E[h(x, X_2, ..., X_m)] written out directly:
/// every monomial of degree r contributes, for each of its r factors, that
/// factor evaluated at x times the theta-entries of the others, weighted
/// 1/m; when r < m the remaining (m - r)/m weight is the full product of
/// theta-entries. Arity 1, constant factors kept symbolic.
inline MixedKernel build_g(const PolyConstraint& f, const CovModel& theta) {
  if (theta.p() != f.p()) throw DomainError("covariance dimension does not match the constraint");
  const int m = f.degree();
  const double inv_m = 1.0 / m;
  std::vector<KernelTerm> terms;
  terms.push_back(KernelTerm{f.a0(), {}, {}});
  for (const auto& mono : f.monomials()) {
    const auto r = mono.pairs.size();
    for (std::size_t j = 0; j < r; ++j) {
      KernelTerm term{mono.coeff * inv_m, {{0, mono.pairs[j]}}, {}};
      for (std::size_t i = 0; i < r; ++i) {
        if (i != j) term.constants.push_back(mono.pairs[i]);
      }
      terms.push_back(std::move(term));
    }
    if (static_cast<int>(r) < m) {
      terms.push_back(KernelTerm{mono.coeff * (m - static_cast<int>(r)) * inv_m, {}, mono.pairs});
    }
  }
  return MixedKernel(1, std::move(terms), theta.theta());
}

/// g(x) for one observation.
inline double eval_g(const PolyConstraint& f, const CovModel& theta, std::span<const double> x) {
  const double* arg = x.data();
  return build_g(f, theta)(std::span<const double* const>(&arg, 1));
}

/// Integrate out slots keep, ..., r-1 of K; the result has arity `keep`.
inline MixedKernel partial_expectation(const MixedKernel& kernel, const CovModel& theta, int keep) {
  if (keep < 0 || keep > kernel.arity()) throw DomainError("keep must lie in [0, arity]");
  if (kernel.theta() && kernel.theta()->rows() != theta.p()) {
    throw DomainError("covariance dimension does not match the kernel");
  }
  IsserlisMoments moments(theta);
  MixedKernel out = kernel;
  if (!out.theta()) out = MixedKernel(out.arity(), out.terms(), theta.theta());
  for (int slot = kernel.arity() - 1; slot >= keep; --slot) out = out.integrate_slot(slot, moments);
  return out.merged();
}

/// Largest |coefficient| left after integrating out each slot in turn.
/// Zero (up to rounding) for a canonical kernel.
inline double canonical_residual(const MixedKernel& kernel, const CovModel& theta) {
  IsserlisMoments moments(theta);
  MixedKernel bound = kernel.theta() ? kernel : MixedKernel(kernel.arity(), kernel.terms(), theta.theta());
  double worst = 0.0;
  for (int slot = 0; slot < kernel.arity(); ++slot) {
    worst = std::max(worst, bound.integrate_slot(slot, moments).max_abs_coeff());
  }
  return worst;
}

/// Coefficient tolerance for the canonical flag.
inline constexpr double kCanonicalTolerance = 1e-12;

/// Hoeffding projection pi_r(h): sum over subsets S of the first r slots of
/// (-1)^(r - |S|) times h with every slot outside S integrated out, the
/// kept arguments bound to the slots in S. pi_0 is the constant f(Theta).
inline MixedKernel hoeffding_projection(const PolyConstraint& f, const CovModel& theta, int r) {
  const int m = f.degree();
  if (r < 0 || r > m) throw DomainError("projection order must lie in [0, m]");
  const MixedKernel h = build_h(f);
  std::vector<MixedKernel> reduced;
  reduced.reserve(static_cast<std::size_t>(r) + 1);
  for (int s = 0; s <= r; ++s) reduced.push_back(partial_expectation(h, theta, s));

  std::vector<KernelTerm> terms;
  for (unsigned mask = 0; mask < (1u << r); ++mask) {
    const int size = std::popcount(mask);
    std::vector<int> targets;
    for (int j = 0; j < r; ++j) {
      if (mask & (1u << j)) targets.push_back(j);
    }
    const double sign = ((r - size) % 2 == 0) ? 1.0 : -1.0;
    const MixedKernel piece = reduced[static_cast<std::size_t>(size)].remap_slots(targets, r);
    for (auto term : piece.terms()) {
      term.coeff *= sign;
      terms.push_back(std::move(term));
    }
  }
  MixedKernel out = MixedKernel(r, std::move(terms), theta.theta()).merged();
  const double residual = canonical_residual(out, theta);
  if (r >= 1 && residual > kCanonicalTolerance) {
    throw ConsistencyError("Hoeffding projection of order " + std::to_string(r) +
                           " is not canonical (residual " + std::to_string(residual) + ")");
  }
  out.set_canonical(r >= 1);
  return out;
}

/// E[K(X_1, ..., X_r)] for i.i.d. X_i ~ N(0, Theta).
inline double kernel_mean(const MixedKernel& kernel, const CovModel& theta) {
  IsserlisMoments moments(theta);
  double total = 0.0;
  std::vector<std::vector<int>> keys(static_cast<std::size_t>(kernel.arity()));
  for (const auto& term : kernel.terms()) {
    double value = term.coeff;
    for (const auto& pr : term.constants) value *= theta(pr.u, pr.v);
    for (auto& key : keys) key.clear();
    for (const auto& f : term.data) {
      keys[static_cast<std::size_t>(f.slot)].push_back(f.pair.u);
      keys[static_cast<std::size_t>(f.slot)].push_back(f.pair.v);
    }
    for (const auto& key : keys) {
      if (value == 0.0) break;
      if (!key.empty()) value *= moments(key);
    }
    total += value;
  }
  return total;
}

/// E[K(X_1, ..., X_r)^2], exact. Slots are independent, so each product of
/// two terms factorizes into one Isserlis moment per slot.
inline double kernel_second_moment(const MixedKernel& kernel, const CovModel& theta) {
  const MixedKernel k = kernel.theta() ? kernel.merged()
                                       : MixedKernel(kernel.arity(), kernel.terms(), theta.theta()).merged();
  IsserlisMoments moments(theta);
  const auto& terms = k.terms();
  const auto arity = static_cast<std::size_t>(k.arity());
  std::vector<std::vector<int>> keys(arity);
  double total = 0.0;
  for (std::size_t a = 0; a < terms.size(); ++a) {
    for (std::size_t b = a; b < terms.size(); ++b) {
      for (auto& key : keys) key.clear();
      for (const auto* term : {&terms[a], &terms[b]}) {
        for (const auto& f : term->data) {
          keys[static_cast<std::size_t>(f.slot)].push_back(f.pair.u);
          keys[static_cast<std::size_t>(f.slot)].push_back(f.pair.v);
        }
      }
      double value = terms[a].coeff * terms[b].coeff * (a == b ? 1.0 : 2.0);
      for (const auto& key : keys) {
        if (value == 0.0) break;
        if (!key.empty()) value *= moments(key);
      }
      total += value;
    }
  }
  return total;
}

/// Var[K(X_1, ..., X_r)].
inline double kernel_variance(const MixedKernel& kernel, const CovModel& theta) {
  const double mean = kernel_mean(kernel, theta);
  return kernel_second_moment(kernel, theta) - mean * mean;
}

}  // namespace ustest
