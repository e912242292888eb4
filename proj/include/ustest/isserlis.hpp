#pragma once

// Gaussian mixed moments E[X_{i1} ... X_{ik}] for X ~ N_p(0, Theta).

#include <algorithm>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ustest/covmodel.hpp"
#include "ustest/errors.hpp"

namespace ustest {

using Pairing = std::vector<std::pair<int, int>>;

/// Visit every partition of {0, ..., k-1} into disjoint pairs.
///
/// The first unmatched position is paired with each later unmatched
/// position in turn; there are (k-1)!! partitions for even k, none for odd k.
inline void for_each_pairing(int k, const std::function<void(const Pairing&)>& visit) {
  if (k % 2 != 0) return;
  std::vector<bool> used(static_cast<std::size_t>(k), false);
  Pairing current;
  std::function<void()> recurse = [&] {
    int first = 0;
    while (first < k && used[first]) ++first;
    if (first == k) {
      visit(current);
      return;
    }
    used[first] = true;
    for (int j = first + 1; j < k; ++j) {
      if (used[j]) continue;
      used[j] = true;
      current.emplace_back(first, j);
      recurse();
      current.pop_back();
      used[j] = false;
    }
    used[first] = false;
  };
  recurse();
}

/// Number of pair partitions of k positions, by enumeration.
inline long count_pairings(int k) {
  long count = 0;
  for_each_pairing(k, [&](const Pairing&) { ++count; });
  return count;
}

/// Isserlis expansion summed over every pairing, without memoization.
inline double isserlis_moment_enumerated(const Matrix& theta, std::span<const int> key) {
  const int k = static_cast<int>(key.size());
  if (k % 2 != 0) return 0.0;
  double total = 0.0;
  for_each_pairing(k, [&](const Pairing& pairing) {
    double prod = 1.0;
    for (auto [a, b] : pairing) prod *= theta(key[a], key[b]);
    total += prod;
  });
  return total;
}

/// Memoized Isserlis moments for one covariance matrix.
///
/// Keys are coordinate multisets; the cache is keyed on the sorted multiset.
/// The recursion pairs the smallest coordinate with each remaining distinct
/// coordinate, weighted by its multiplicity, which sums the same pair
/// partitions as the plain enumeration. Not thread-safe: use one instance
/// per thread.
class IsserlisMoments {
 public:
  explicit IsserlisMoments(const Matrix& theta) : theta_(theta) {
    // Cache keys pack one coordinate per byte.
    if (theta_.rows() > 255) throw DomainError("moment cache supports p <= 255");
  }
  explicit IsserlisMoments(const CovModel& model) : IsserlisMoments(model.theta()) {}

  const Matrix& theta() const { return theta_; }

  double operator()(std::span<const int> key) {
    for (int idx : key) {
      if (idx < 0 || idx >= theta_.rows()) throw DomainError("moment index outside [p]");
    }
    if (key.size() % 2 != 0) return 0.0;
    std::vector<int> sorted(key.begin(), key.end());
    std::sort(sorted.begin(), sorted.end());
    return sorted_moment(sorted);
  }

  double operator()(std::initializer_list<int> key) {
    return (*this)(std::span<const int>(key.begin(), key.size()));
  }

  std::size_t cache_size() const { return cache_.size(); }

 private:
  double sorted_moment(const std::vector<int>& key) {
    if (key.empty()) return 1.0;
    if (key.size() == 2) return theta_(key[0], key[1]);
    std::string memo(key.begin(), key.end());
    if (auto it = cache_.find(memo); it != cache_.end()) return it->second;

    const int first = key[0];
    double total = 0.0;
    std::vector<int> rest;
    rest.reserve(key.size() - 2);
    for (std::size_t j = 1; j < key.size();) {
      std::size_t end = j;
      while (end < key.size() && key[end] == key[j]) ++end;
      const auto mult = static_cast<double>(end - j);
      const double cov = theta_(first, key[j]);
      if (cov != 0.0) {
        rest.clear();
        for (std::size_t t = 1; t < key.size(); ++t) {
          if (t != j) rest.push_back(key[t]);
        }
        total += mult * cov * sorted_moment(rest);
      }
      j = end;
    }
    cache_.emplace(std::move(memo), total);
    return total;
  }

  Matrix theta_;
  std::unordered_map<std::string, double> cache_;
};

/// One-shot Isserlis moment.
inline double isserlis_moment(const CovModel& model, std::span<const int> key) {
  IsserlisMoments moments(model);
  return moments(key);
}

}  // namespace ustest
