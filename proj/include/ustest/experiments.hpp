#pragma once

// Monte Carlo harness: empirical test sizes, CLT checks and diagnostics.
//
// Each replicate draws its data from stream (seed, data, r) and its
// Bernoulli design from (seed, sampling, r, attempt); the results are stored
// by replicate index and aggregated after all workers join, so the output
// does not depend on the number of threads or their schedule.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "ustest/covmodel.hpp"
#include "ustest/errors.hpp"
#include "ustest/estimators.hpp"
#include "ustest/kernel.hpp"
#include "ustest/moments.hpp"
#include "ustest/normal.hpp"
#include "ustest/polynomial.hpp"
#include "ustest/rng.hpp"
#include "ustest/version.hpp"

namespace ustest {

enum class Statistic {
  wald_standardized,   ///< T_f
  wald_studentized,    ///< T-hat_f
  icu_standardized,    ///< sqrt(n) U' / sigma
  icu_studentized,     ///< sqrt(n) U' / sigma-hat
  block,               ///< sqrt(floor(n/m)) S / sigma_h
  complete_standardized,  ///< sqrt(n) U_n / (m sigma_g)
  oracle,              ///< exact N(0,1) draws; calibrates the harness itself
};

inline std::string_view statistic_name(Statistic s) {
  switch (s) {
    case Statistic::wald_standardized: return "T_f";
    case Statistic::wald_studentized: return "T_hat_f";
    case Statistic::icu_standardized: return "icu_std";
    case Statistic::icu_studentized: return "icu_stud";
    case Statistic::block: return "block";
    case Statistic::complete_standardized: return "ustat_std";
    case Statistic::oracle: return "oracle";
  }
  return "?";
}

inline Statistic parse_statistic(std::string_view name) {
  for (auto s : {Statistic::wald_standardized, Statistic::wald_studentized,
                 Statistic::icu_standardized, Statistic::icu_studentized, Statistic::block,
                 Statistic::complete_standardized, Statistic::oracle}) {
    if (statistic_name(s) == name) return s;
  }
  throw ConfigError("unknown statistic '" + std::string(name) + "'");
}

enum class Sidedness { two, right };

inline std::vector<double> default_alpha_grid() {
  std::vector<double> grid;
  for (int k = 1; k <= 20; ++k) grid.push_back(k / 100.0);
  for (int k = 25; k <= 50; k += 5) grid.push_back(k / 100.0);
  return grid;
}

struct SizeExperimentConfig {
  SizeExperimentConfig(CovModel theta, PolyConstraint f, std::vector<Statistic> stats = {})
      : model(std::move(theta)), constraint(std::move(f)), statistics(std::move(stats)) {}

  CovModel model;
  PolyConstraint constraint;
  std::size_t n = 100;
  std::uint64_t budget = 200;
  std::vector<Statistic> statistics;
  std::size_t replicates = 1000;
  std::vector<double> alphas = default_alpha_grid();
  std::uint64_t seed = 1;
  Sidedness sided = Sidedness::two;
  unsigned threads = 1;      ///< 0 means hardware concurrency
  unsigned max_redraws = 64;  ///< N-hat = 0 redraws allowed per replicate
  std::size_t dc_groups = 0;  ///< studentizer groups per half, 0 = as many as fit
};

struct SizePoint {
  double alpha = 0.0;
  double empirical = 0.0;
  double se = 0.0;  ///< sqrt(alpha (1 - alpha) / R)
  std::size_t rejections = 0;
};

struct StatisticCurve {
  Statistic statistic = Statistic::oracle;
  std::vector<SizePoint> points;
  std::size_t used = 0;       ///< replicates with a defined statistic
  std::size_t undefined = 0;  ///< non-positive data-driven normalizer
  std::size_t redraws = 0;    ///< N-hat = 0 redraws
  std::vector<double> zscores;  ///< by replicate; NaN where undefined

  std::size_t degenerate_count() const { return undefined + redraws; }

  double max_abs_deviation() const {
    double worst = 0.0;
    for (const auto& pt : points) worst = std::max(worst, std::abs(pt.empirical - pt.alpha));
    return worst;
  }
};

struct SizeCurve {
  std::size_t n = 0;
  std::size_t replicates = 0;
  std::vector<StatisticCurve> curves;

  const StatisticCurve& at(Statistic s) const {
    for (const auto& c : curves) {
      if (c.statistic == s) return c;
    }
    throw DomainError("statistic not part of this experiment");
  }
};

namespace detail {

inline void validate(const SizeExperimentConfig& cfg) {
  if (cfg.replicates < 1) throw ConfigError("replicates must be at least 1");
  if (cfg.statistics.empty()) throw ConfigError("no statistic requested");
  if (cfg.alphas.empty()) throw ConfigError("nominal level grid is empty");
  for (std::size_t i = 0; i < cfg.alphas.size(); ++i) {
    if (!(cfg.alphas[i] > 0.0 && cfg.alphas[i] < 1.0)) throw ConfigError("nominal levels must lie in (0, 1)");
    if (i > 0 && !(cfg.alphas[i] > cfg.alphas[i - 1])) throw ConfigError("nominal levels must be increasing");
  }
  if (cfg.model.p() != cfg.constraint.p()) throw ConfigError("model and constraint dimensions differ");
  const int m = cfg.constraint.degree();
  if (cfg.n < static_cast<std::size_t>(m)) throw ConfigError("n must be at least the kernel degree");
}

inline bool rejects(double z, double critical, Sidedness sided) {
  return sided == Sidedness::two ? std::abs(z) > critical : z > critical;
}

}  // namespace detail

/// Quantities computed once per experiment from the true Theta.
struct ExperimentMoments {
  double wald_var = 0.0;
  KernelMoments kernel;
};

/// Run R null replicates and tabulate rejection frequencies for every
/// requested statistic at every nominal level.
inline SizeCurve run_size_experiment(const SizeExperimentConfig& cfg) {
  detail::validate(cfg);
  const int m = cfg.constraint.degree();
  const auto& stats = cfg.statistics;
  auto wants = [&](Statistic s) { return std::find(stats.begin(), stats.end(), s) != stats.end(); };

  ExperimentMoments em;
  em.wald_var = wald_variance(cfg.constraint, cfg.model.theta());
  if ((wants(Statistic::wald_standardized) || wants(Statistic::complete_standardized)) &&
      !(em.wald_var > 0.0)) {
    throw ConfigError("statistic normalized by sigma_g requested at a singular hypothesis (sigma_g = 0)");
  }
  const bool need_moments = wants(Statistic::icu_standardized) || wants(Statistic::block) ||
                            wants(Statistic::complete_standardized);
  if (need_moments) em.kernel = kernel_moments(cfg.constraint, cfg.model);
  const bool incomplete = wants(Statistic::icu_standardized) || wants(Statistic::icu_studentized);
  std::uint64_t tuples = 0;
  if (incomplete) {
    tuples = binomial(cfg.n, static_cast<std::uint64_t>(m));
    if (cfg.budget < 1 || cfg.budget > tuples) {
      throw ConfigError("budget N must lie in [1, C(n, m) = " + std::to_string(tuples) + "]");
    }
  }
  if (wants(Statistic::icu_studentized) && cfg.n < static_cast<std::size_t>(3 * m - 2)) {
    throw ConfigError("icu_stud needs n >= 3m - 2");
  }

  const SymmetricKernel h(cfg.constraint);
  const std::size_t R = cfg.replicates;
  const std::size_t S = stats.size();
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> z(R * S, nan);
  std::vector<std::uint32_t> redraws(R, 0);

  auto run_replicate = [&](std::size_t r) {
    const SampleMatrix x = sample_gaussian(cfg.model, cfg.n, StreamId{cfg.seed, StreamTag::data, r, 0});
    std::optional<IncompleteResult> draw;
    if (incomplete) {
      for (std::uint32_t attempt = 0;; ++attempt) {
        if (attempt > cfg.max_redraws) {
          throw DegenerateSampleError("N-hat = 0 persisted beyond the redraw budget in replicate " +
                                      std::to_string(r));
        }
        const BudgetPlan plan = make_budget_plan(cfg.n, m, cfg.budget,
                                                 StreamId{cfg.seed, StreamTag::sampling, r, attempt});
        try {
          draw = incomplete_ustat(h, x, plan);
          break;
        } catch (const DegenerateSampleError&) {
          ++redraws[r];
        }
      }
    }
    for (std::size_t s = 0; s < S; ++s) {
      double& out = z[r * S + s];
      try {
        switch (stats[s]) {
          case Statistic::wald_standardized:
            out = wald_standardized(cfg.constraint, em.wald_var, x).zscore;
            break;
          case Statistic::wald_studentized:
            out = wald_studentized(cfg.constraint, x).zscore;
            break;
          case Statistic::icu_standardized:
            out = icu_standardized(*draw, em.kernel, cfg.n, cfg.budget).zscore;
            break;
          case Statistic::icu_studentized:
            out = icu_studentized(*draw, h, x, cfg.budget,
                                  StreamId{cfg.seed, StreamTag::studentizer, r, 0}, cfg.dc_groups)
                      .zscore;
            break;
          case Statistic::block:
            out = block_standardized(h, x, em.kernel.sigma_h2).zscore;
            break;
          case Statistic::complete_standardized:
            out = std::sqrt(static_cast<double>(cfg.n)) * complete_ustat(h, x) /
                  (m * std::sqrt(em.kernel.sigma_g2));
            break;
          case Statistic::oracle: {
            auto rng = make_stream(cfg.seed, StreamTag::oracle, r);
            out = rng.normal();
            break;
          }
        }
      } catch (const DegenerateStudentizerError&) {
        out = nan;
      }
    }
  };

  unsigned threads = cfg.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : cfg.threads;
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, R));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    while (true) {
      const std::size_t r = next.fetch_add(1);
      if (r >= R) return;
      try {
        run_replicate(r);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(R);
        return;
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  SizeCurve result;
  result.n = cfg.n;
  result.replicates = R;
  std::vector<double> critical;
  for (double a : cfg.alphas) {
    critical.push_back(normal_quantile(cfg.sided == Sidedness::two ? 1.0 - a / 2.0 : 1.0 - a));
  }
  for (std::size_t s = 0; s < S; ++s) {
    StatisticCurve curve;
    curve.statistic = stats[s];
    curve.zscores.resize(R);
    std::vector<std::size_t> rejections(cfg.alphas.size(), 0);
    for (std::size_t r = 0; r < R; ++r) {
      const double value = z[r * S + s];
      curve.zscores[r] = value;
      if (std::isnan(value)) {
        ++curve.undefined;
        continue;
      }
      ++curve.used;
      for (std::size_t k = 0; k < critical.size(); ++k) {
        if (detail::rejects(value, critical[k], cfg.sided)) ++rejections[k];
      }
    }
    if (stats[s] == Statistic::icu_standardized || stats[s] == Statistic::icu_studentized) {
      for (auto c : redraws) curve.redraws += c;
    }
    const double used = static_cast<double>(curve.used);
    for (std::size_t k = 0; k < cfg.alphas.size(); ++k) {
      const double a = cfg.alphas[k];
      SizePoint pt;
      pt.alpha = a;
      pt.rejections = rejections[k];
      pt.empirical = curve.used == 0 ? 0.0 : static_cast<double>(rejections[k]) / used;
      pt.se = curve.used == 0 ? 0.0 : std::sqrt(a * (1.0 - a) / used);
      curve.points.push_back(pt);
    }
    result.curves.push_back(std::move(curve));
  }
  return result;
}

/// Computable ingredients of the normal-approximation bounds. No bound is
/// verified here: the constants in front of them are unknown.
struct DiagnosticReport {
  BerryEsseenDiagnostics be;
  double sigma_g2 = 0.0;
  double sigma_h2 = 0.0;
  double sigma2 = 0.0;      ///< m^2 sigma_g^2 + (n / N) sigma_h^2
  double p_sample = 0.0;    ///< N / C(n, m)
  double log_factor = 0.0;  ///< (log(2 n^m + 1))^{3m} / sqrt(n)
  double v_condition = 0.0;
  std::uint64_t budget = 0;
};

inline DiagnosticReport run_diagnostics(const PolyConstraint& f, const CovModel& theta, std::size_t n,
                                        std::uint64_t budget, std::size_t mc_draws = 100000,
                                        std::uint64_t seed = 1) {
  const int m = f.degree();
  DiagnosticReport rep;
  rep.be = be_diagnostics(f, theta, n, mc_draws, seed);
  rep.sigma_g2 = rep.be.sigma_g * rep.be.sigma_g;
  rep.sigma_h2 = rep.be.sigma_h * rep.be.sigma_h;
  rep.budget = budget;
  const std::uint64_t tuples = binomial(n, static_cast<std::uint64_t>(m));
  if (budget < 1 || budget > tuples) throw DomainError("budget N must lie in [1, C(n, m)]");
  rep.p_sample = static_cast<double>(budget) / static_cast<double>(tuples);
  rep.sigma2 = icu_limiting_variance(KernelMoments{m, 0.0, rep.sigma_g2, rep.sigma_h2}, n, budget);
  const double nd = static_cast<double>(n);
  rep.log_factor = std::pow(std::log(2.0 * std::pow(nd, m) + 1.0), 3.0 * m) / std::sqrt(nd);
  rep.v_condition = wishart_condition_number(theta);
  return rep;
}

/// Size curves at several sample sizes, for locating where a statistic
/// starts to track the nominal level. `budget_for` maps n to N.
inline std::vector<SizeCurve> run_n_sweep(SizeExperimentConfig cfg, std::span<const std::size_t> ns,
                                          const std::function<std::uint64_t(std::size_t)>& budget_for) {
  std::vector<SizeCurve> out;
  for (std::size_t n : ns) {
    cfg.n = n;
    cfg.budget = budget_for(n);
    out.push_back(run_size_experiment(cfg));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Output

inline std::string format_double(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

/// statistic,alpha,empirical_size,se,replicates,degenerate_count; one row
/// per (statistic, nominal level). `replicates` counts the replicates with
/// a defined statistic.
inline std::string size_curve_csv(const SizeCurve& curve) {
  std::string out = "statistic,alpha,empirical_size,se,replicates,degenerate_count\n";
  for (const auto& c : curve.curves) {
    for (const auto& pt : c.points) {
      out += std::string(statistic_name(c.statistic)) + "," + format_double(pt.alpha) + "," +
             format_double(pt.empirical) + "," + format_double(pt.se) + "," + std::to_string(c.used) +
             "," + std::to_string(c.degenerate_count()) + "\n";
    }
  }
  return out;
}

/// Write through a temporary file in the same directory and rename it into
/// place, so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  std::error_code ec;
  fs::create_directories(dir, ec);
  const fs::path tmp = dir / ("." + path.filename().string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw ConfigError("cannot write '" + tmp.string() + "'");
    os << content;
    os.flush();
    if (!os) throw ConfigError("cannot write '" + tmp.string() + "'");
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw ConfigError("cannot move output into place at '" + path.string() + "'");
  }
}

}  // namespace ustest
