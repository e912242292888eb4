#pragma once

// Polynomial constraints f(Theta) in the upper-diagonal covariance entries.
//
// Indices are 0-based in the C++ API and 1-based in the text format.
//
// Text format (whitespace-insensitive):
//
//   constraint := a0 { ';' term }
//   term       := [ coeff [ '*' ] ] pair { pair }
//   pair       := '(' index ',' index ')'
//
// e.g. "0 ; 1*(1,4)(2,3) ; -1*(1,3)(2,4)" is the tetrad
// theta_14 theta_23 - theta_13 theta_24. The shorthand "tetrad(u,v,w,z)"
// is also accepted. A missing coefficient means 1.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <compare>
#include <cstdio>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ustest/covmodel.hpp"
#include "ustest/errors.hpp"

namespace ustest {

/// Unordered pair of coordinates, canonicalized so that u <= v.
struct PairIndex {
  int u = 0;
  int v = 0;

  PairIndex() = default;
  PairIndex(int a, int b) : u(std::min(a, b)), v(std::max(a, b)) {}

  auto operator<=>(const PairIndex&) const = default;
};

/// Number of upper-diagonal coordinates, p(p+1)/2.
inline constexpr int upper_dim(int p) { return p * (p + 1) / 2; }

/// Position of (u, v) in the row-major enumeration of the upper triangle.
inline constexpr int upper_index(PairIndex pr, int p) {
  return pr.u * p - pr.u * (pr.u - 1) / 2 + (pr.v - pr.u);
}

/// All upper-diagonal pairs in upper_index order.
inline std::vector<PairIndex> upper_pairs(int p) {
  std::vector<PairIndex> out;
  out.reserve(static_cast<std::size_t>(upper_dim(p)));
  for (int u = 0; u < p; ++u) {
    for (int v = u; v < p; ++v) out.emplace_back(u, v);
  }
  return out;
}

/// coefficient * prod of theta over a sorted multiset of pairs.
struct Monomial {
  double coeff = 0.0;
  std::vector<PairIndex> pairs;
};

class PolyConstraint {
 public:
  /// Sorts each multiset, merges monomials with equal multisets and drops
  /// exact zeros. Throws if no non-constant monomial survives.
  PolyConstraint(int p, double a0, std::vector<Monomial> monomials) : p_(p), a0_(a0) {
    if (p < 1) throw DomainError("constraint dimension must be positive");
    std::map<std::vector<PairIndex>, double> merged;
    for (auto& mono : monomials) {
      if (mono.pairs.empty()) {
        a0_ += mono.coeff;
        continue;
      }
      for (const auto& pr : mono.pairs) {
        if (pr.u < 0 || pr.v >= p) throw DomainError("constraint index outside [p]");
      }
      std::sort(mono.pairs.begin(), mono.pairs.end());
      merged[mono.pairs] += mono.coeff;
    }
    for (auto& [pairs, coeff] : merged) {
      if (coeff == 0.0) continue;
      degree_ = std::max(degree_, static_cast<int>(pairs.size()));
      monomials_.push_back(Monomial{coeff, pairs});
    }
    if (monomials_.empty()) throw DomainError("constraint polynomial must be non-constant");
  }

  int p() const { return p_; }
  double a0() const { return a0_; }
  /// Degree m: the largest multiset size.
  int degree() const { return degree_; }
  const std::vector<Monomial>& monomials() const { return monomials_; }

  friend PolyConstraint operator+(const PolyConstraint& a, const PolyConstraint& b) {
    if (a.p_ != b.p_) throw DomainError("cannot add constraints of different dimension");
    auto monos = a.monomials_;
    monos.insert(monos.end(), b.monomials_.begin(), b.monomials_.end());
    return PolyConstraint(a.p_, a.a0_ + b.a0_, std::move(monos));
  }

  friend PolyConstraint operator*(double s, const PolyConstraint& a) {
    auto monos = a.monomials_;
    for (auto& mono : monos) mono.coeff *= s;
    return PolyConstraint(a.p_, s * a.a0_, std::move(monos));
  }

 private:
  int p_;
  double a0_;
  int degree_ = 0;
  std::vector<Monomial> monomials_;
};

/// theta_uz theta_vw - theta_uw theta_vz for pairwise distinct u, v, w, z.
inline PolyConstraint tetrad(int p, int u, int v, int w, int z) {
  const int idx[4] = {u, v, w, z};
  for (int i = 0; i < 4; ++i) {
    if (idx[i] < 0 || idx[i] >= p) throw DomainError("tetrad index outside [p]");
    for (int j = 0; j < i; ++j) {
      if (idx[i] == idx[j]) throw DomainError("tetrad indices must be pairwise distinct");
    }
  }
  return PolyConstraint(p, 0.0,
                        {Monomial{1.0, {PairIndex(u, z), PairIndex(v, w)}},
                         Monomial{-1.0, {PairIndex(u, w), PairIndex(v, z)}}});
}

namespace detail {

inline void check_dim(const PolyConstraint& f, const Matrix& theta) {
  if (theta.rows() != f.p() || theta.cols() != f.p()) {
    throw DomainError("matrix dimension does not match the constraint");
  }
}

}  // namespace detail

/// f(theta). The matrix need not be positive definite.
inline double evaluate(const PolyConstraint& f, const Matrix& theta) {
  detail::check_dim(f, theta);
  double total = f.a0();
  for (const auto& mono : f.monomials()) {
    double prod = mono.coeff;
    for (const auto& pr : mono.pairs) prod *= theta(pr.u, pr.v);
    total += prod;
  }
  return total;
}

/// Gradient over the upper-diagonal coordinates (length p(p+1)/2).
///
/// A pair of multiplicity e in a monomial contributes
/// e * coeff * theta_uv^(e-1) * (product of the remaining factors).
inline Vector gradient(const PolyConstraint& f, const Matrix& theta) {
  detail::check_dim(f, theta);
  Vector grad = Vector::Zero(upper_dim(f.p()));
  for (const auto& mono : f.monomials()) {
    const auto& pairs = mono.pairs;
    for (std::size_t i = 0; i < pairs.size();) {
      std::size_t j = i;
      while (j < pairs.size() && pairs[j] == pairs[i]) ++j;
      const auto mult = static_cast<int>(j - i);
      double term = mono.coeff * mult * std::pow(theta(pairs[i].u, pairs[i].v), mult - 1);
      for (std::size_t k = 0; k < pairs.size(); ++k) {
        if (k < i || k >= j) term *= theta(pairs[k].u, pairs[k].v);
      }
      grad(upper_index(pairs[i], f.p())) += term;
      i = j;
    }
  }
  return grad;
}

namespace detail {

class ConstraintParser {
 public:
  ConstraintParser(std::string_view text, int p) : text_(text), p_(p) {}

  PolyConstraint parse() {
    skip_ws();
    if (text_.substr(pos_).starts_with("tetrad")) return parse_tetrad();
    const double a0 = parse_number();
    std::vector<Monomial> monos;
    skip_ws();
    while (pos_ < text_.size()) {
      expect(';');
      monos.push_back(parse_term());
      skip_ws();
    }
    return PolyConstraint(p_, a0, std::move(monos));
  }

 private:
  PolyConstraint parse_tetrad() {
    pos_ += 6;
    expect('(');
    int idx[4];
    for (int i = 0; i < 4; ++i) {
      if (i > 0) expect(',');
      idx[i] = parse_index();
    }
    expect(')');
    skip_ws();
    if (pos_ != text_.size()) fail("trailing characters after tetrad(...)");
    return tetrad(p_, idx[0], idx[1], idx[2], idx[3]);
  }

  Monomial parse_term() {
    skip_ws();
    Monomial mono;
    mono.coeff = 1.0;
    if (peek() != '(') {
      mono.coeff = parse_number();
      skip_ws();
      if (peek() == '*') ++pos_;
    }
    skip_ws();
    while (peek() == '(') {
      ++pos_;
      const int a = parse_index();
      expect(',');
      const int b = parse_index();
      expect(')');
      mono.pairs.emplace_back(a, b);
      skip_ws();
    }
    if (mono.pairs.empty()) fail("term has no (u,v) factor");
    return mono;
  }

  int parse_index() {
    skip_ws();
    int value = 0;
    auto [ptr, ec] = std::from_chars(text_.data() + pos_, text_.data() + text_.size(), value);
    if (ec != std::errc()) fail("expected an index");
    pos_ = static_cast<std::size_t>(ptr - text_.data());
    if (value < 1 || value > p_) fail("index " + std::to_string(value) + " outside [1, p]");
    return value - 1;
  }

  double parse_number() {
    skip_ws();
    std::size_t end = pos_;
    while (end < text_.size() &&
           (std::isdigit(static_cast<unsigned char>(text_[end])) || text_[end] == '.' ||
            text_[end] == 'e' || text_[end] == 'E' || text_[end] == '+' || text_[end] == '-')) {
      ++end;
    }
    const std::string token(text_.substr(pos_, end - pos_));
    if (token.empty()) fail("expected a number");
    std::size_t used = 0;
    double value = 0.0;
    try {
      value = std::stod(token, &used);
    } catch (const std::exception&) {
      fail("malformed number '" + token + "'");
    }
    if (used != token.size()) fail("malformed number '" + token + "'");
    pos_ = end;
    return value;
  }

  void expect(char c) {
    skip_ws();
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw DomainError("constraint parse error at column " + std::to_string(pos_ + 1) + ": " +
                      what);
  }

  std::string_view text_;
  int p_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Parse the text format described at the top of this header.
inline PolyConstraint parse_constraint(std::string_view text, int p) {
  return detail::ConstraintParser(text, p).parse();
}

/// Inverse of parse_constraint (coefficients printed with 17 significant digits).
inline std::string format_constraint(const PolyConstraint& f) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", f.a0());
  std::string out = buf;
  for (const auto& mono : f.monomials()) {
    std::snprintf(buf, sizeof buf, " ; %.17g*", mono.coeff);
    out += buf;
    for (const auto& pr : mono.pairs) {
      out += "(" + std::to_string(pr.u + 1) + "," + std::to_string(pr.v + 1) + ")";
    }
  }
  return out;
}

}  // namespace ustest
