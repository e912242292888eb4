#pragma once

// Command-line front end. Exit codes: 0 success, 1 self-check or internal
// consistency failure, 2 input or configuration error, 3 runtime degeneracy.

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ustest/config.hpp"
#include "ustest/covmodel.hpp"
#include "ustest/errors.hpp"
#include "ustest/estimators.hpp"
#include "ustest/experiments.hpp"
#include "ustest/moments.hpp"
#include "ustest/polynomial.hpp"
#include "ustest/selfcheck.hpp"
#include "ustest/version.hpp"

namespace ustest {

enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,
  kExitInput = 2,
  kExitDegenerate = 3,
};

namespace cli {

/// Flags shared by every subcommand that needs a model and a constraint.
struct ModelFlags {
  std::string config;
  std::optional<std::string> type;
  std::optional<int> p;
  std::optional<std::string> loadings;
  std::optional<std::string> uniqueness;
  std::optional<double> rho;
  std::optional<std::string> matrix;
  std::optional<std::string> constraint;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "Config file")->check(CLI::ExistingFile);
    app->add_option("--model", type, "one_factor | equicorrelation | identity | explicit");
    app->add_option("--p", p, "Dimension");
    app->add_option("--loadings", loadings, "Comma-separated one-factor loadings");
    app->add_option("--uniqueness", uniqueness, "unit_diagonal or comma-separated uniquenesses");
    app->add_option("--rho", rho, "Equicorrelation");
    app->add_option("--matrix", matrix, "Explicit covariance, rows separated by ';'");
    app->add_option("--constraint", constraint, "Constraint polynomial, e.g. 'tetrad(1,2,3,4)'");
  }

  /// Config file (if any) with the model and constraint flags applied on top.
  RunConfig resolve() const {
    RunConfig rc = config.empty() ? RunConfig{} : apply_config(ConfigFile::load(config));
    const bool any_model_flag = type || p || loadings || uniqueness || rho || matrix;
    if (any_model_flag) {
      ModelSpec spec = rc.model.value_or(ModelSpec{});
      if (type) spec.type = *type;
      if (p) spec.p = *p;
      if (loadings) spec.loadings = detail::parse_reals(*loadings);
      if (uniqueness) {
        if (*uniqueness == "unit_diagonal") {
          spec.uniqueness.reset();
        } else {
          spec.uniqueness = detail::parse_reals(*uniqueness);
        }
      }
      if (rho) spec.rho = *rho;
      if (matrix) spec.matrix = *matrix;
      rc.model = spec;
    }
    if (constraint) rc.constraint = *constraint;
    if (!rc.model) throw ConfigError("no covariance model given (use --config or --model)");
    if (!rc.constraint) throw ConfigError("no constraint given (use --config or --constraint)");
    return rc;
  }
};

inline PolyConstraint build_constraint(const RunConfig& rc) {
  try {
    return parse_constraint(*rc.constraint, rc.model->p);
  } catch (const DomainError& e) {
    throw ConfigError(std::string("constraint: ") + e.what());
  }
}

inline std::string join(const std::vector<std::string>& parts, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

/// "results/run.csv" -> "results/run_n200.csv".
inline std::string sweep_path(const std::string& out, std::size_t n) {
  const std::filesystem::path path(out);
  const std::string stem = path.stem().string() + "_n" + std::to_string(n);
  return (path.parent_path() / (stem + path.extension().string())).string();
}

/// key=value lines describing everything that determines a size CSV.
inline std::string meta_sidecar(const RunConfig& rc, const PolyConstraint& f, std::size_t n,
                                std::uint64_t budget) {
  std::vector<std::string> stats;
  for (auto s : rc.statistics) stats.emplace_back(statistic_name(s));
  std::vector<std::string> alphas;
  for (double a : rc.alphas) alphas.push_back(format_double(a));
  std::ostringstream os;
  os << "version=" << kVersion << "\n";
  for (const auto& [key, value] : rc.model->echo()) os << key << "=" << value << "\n";
  os << "constraint.f=" << *rc.constraint << "\n";
  os << "constraint.expanded=" << format_constraint(f) << "\n";
  os << "experiment.n=" << n << "\n";
  os << "experiment.budget=" << rc.budget << "\n";
  os << "experiment.budget_resolved=" << budget << "\n";
  os << "experiment.statistics=" << join(stats, ",") << "\n";
  os << "experiment.replicates=" << rc.replicates << "\n";
  os << "experiment.alphas=" << (rc.default_alphas ? "default" : join(alphas, ",")) << "\n";
  os << "experiment.sided=" << sidedness_name(rc.sided) << "\n";
  os << "experiment.dc_groups=" << rc.dc_groups << "\n";
  os << "experiment.max_redraws=" << rc.max_redraws << "\n";
  os << "run.seed=" << rc.seed << "\n";
  return os.str();
}

/// Data CSV: a header line of column names, then one row of p numbers per
/// observation. Missing or non-numeric cells are rejected.
inline SampleMatrix read_data_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read data file '" + path + "'");
  std::string line;
  if (!std::getline(is, line)) throw ConfigError(path + ": empty file, expected a header row");
  const std::size_t p = detail::split(line, ',').size();
  std::vector<double> values;
  std::size_t n = 0;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (ConfigFile::trim(line).empty()) continue;
    const auto cells = detail::split(line, ',');
    if (cells.size() != p) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(p) +
                        " cells, found " + std::to_string(cells.size()));
    }
    for (std::size_t k = 0; k < p; ++k) {
      double v = 0.0;
      try {
        if (cells[k].empty()) throw ConfigError("missing value");
        v = detail::parse_real(cells[k]);
      } catch (const ConfigError&) {
        throw ConfigError(path + ":" + std::to_string(line_no) + ": column " + std::to_string(k + 1) +
                          ": missing or non-numeric value '" + cells[k] + "'");
      }
      if (!std::isfinite(v)) {
        throw ConfigError(path + ":" + std::to_string(line_no) + ": column " + std::to_string(k + 1) +
                          ": non-finite value");
      }
      values.push_back(v);
    }
    ++n;
  }
  if (n == 0) throw ConfigError(path + ": no data rows");
  return SampleMatrix(n, static_cast<int>(p), std::move(values));
}

// ---------------------------------------------------------------------------
// Subcommands

struct SimulateFlags {
  ModelFlags model;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<unsigned> threads;
  std::optional<std::size_t> replicates;
  std::optional<std::string> budget;
  std::optional<std::string> sided;
  std::optional<std::size_t> n;
  std::optional<std::string> statistics;
};

inline int cmd_simulate_size(const SimulateFlags& fl, std::ostream& out) {
  RunConfig rc = fl.model.resolve();
  if (fl.seed) rc.seed = *fl.seed;
  if (fl.out) rc.out = *fl.out;
  if (fl.threads) rc.threads = *fl.threads;
  if (fl.replicates) rc.replicates = *fl.replicates;
  if (fl.n) rc.n = *fl.n;
  if (fl.budget) rc.budget = *fl.budget;
  if (fl.sided) rc.sided = parse_sidedness(*fl.sided);
  if (fl.statistics) {
    rc.statistics.clear();
    for (const auto& name : detail::split(*fl.statistics, ',')) rc.statistics.push_back(parse_statistic(name));
  }
  if (rc.replicates < 1) throw ConfigError("replicates must be at least 1");

  SizeExperimentConfig cfg(rc.model->build(), build_constraint(rc), rc.statistics);
  cfg.replicates = rc.replicates;
  cfg.alphas = rc.alphas;
  cfg.seed = rc.seed;
  cfg.sided = rc.sided;
  cfg.threads = rc.threads;
  cfg.max_redraws = rc.max_redraws;
  cfg.dc_groups = rc.dc_groups;

  const bool sweep = !rc.n_sweep.empty();
  const std::vector<std::size_t> ns = sweep ? rc.n_sweep : std::vector<std::size_t>{rc.n};
  for (std::size_t n : ns) {
    cfg.n = n;
    try {
      cfg.budget = parse_budget(rc.budget, n);
    } catch (const DomainError& e) {
      throw ConfigError(e.what());
    }
    const SizeCurve curve = run_size_experiment(cfg);
    const std::string path = sweep ? sweep_path(rc.out, n) : rc.out;
    write_file_atomic(path, size_curve_csv(curve));
    write_file_atomic(path + ".meta", meta_sidecar(rc, cfg.constraint, n, cfg.budget));
    out << "wrote " << path << " (n=" << n << ", N=" << cfg.budget << ", R=" << cfg.replicates << ")\n";
    for (const auto& c : curve.curves) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f", c.max_abs_deviation());
      out << "  " << statistic_name(c.statistic) << ": max |size - alpha| = " << buf
          << ", degenerate = " << c.degenerate_count() << "\n";
    }
  }
  return kExitOk;
}

struct MomentsFlags {
  ModelFlags model;
  std::size_t n = 100;
  std::size_t mc_draws = 100000;
  std::uint64_t seed = 1;
};

inline int cmd_moments(const MomentsFlags& fl, std::ostream& out) {
  const RunConfig rc = fl.model.resolve();
  const CovModel model = rc.model->build();
  const PolyConstraint f = build_constraint(rc);
  const BerryEsseenDiagnostics be = be_diagnostics(f, model, fl.n, fl.mc_draws, fl.seed);
  out << "sigma_g2,sigma_h2,ratio,v_condition,n,be_term_ratio,be_term_third_moment,be_term_third_moment_se\n";
  out << format_double(be.sigma_g * be.sigma_g) << "," << format_double(be.sigma_h * be.sigma_h) << ","
      << format_double(be.ratio) << "," << format_double(wishart_condition_number(model)) << "," << fl.n << ","
      << format_double(be.term_ratio) << "," << format_double(be.term_third_moment) << ","
      << format_double(be.term_third_moment_se) << "\n";
  return kExitOk;
}

struct DiagnoseFlags {
  ModelFlags model;
  std::optional<std::size_t> n;
  std::optional<std::string> budget;
  std::size_t mc_draws = 100000;
  std::optional<std::uint64_t> seed;
};

inline int cmd_diagnose(const DiagnoseFlags& fl, std::ostream& out) {
  RunConfig rc = fl.model.resolve();
  if (fl.n) rc.n = *fl.n;
  if (fl.budget) rc.budget = *fl.budget;
  if (fl.seed) rc.seed = *fl.seed;
  const CovModel model = rc.model->build();
  const PolyConstraint f = build_constraint(rc);
  std::uint64_t budget = 0;
  try {
    budget = parse_budget(rc.budget, rc.n);
    const DiagnosticReport d = run_diagnostics(f, model, rc.n, budget, fl.mc_draws, rc.seed);
    out << "n,budget,p_sample,sigma_g2,sigma_h2,sigma2,ratio,be_term_ratio,be_term_third_moment,"
           "be_term_third_moment_se,log_factor,v_condition\n";
    out << rc.n << "," << budget << "," << format_double(d.p_sample) << "," << format_double(d.sigma_g2) << ","
        << format_double(d.sigma_h2) << "," << format_double(d.sigma2) << "," << format_double(d.be.ratio) << ","
        << format_double(d.be.term_ratio) << "," << format_double(d.be.term_third_moment) << ","
        << format_double(d.be.term_third_moment_se) << "," << format_double(d.log_factor) << ","
        << format_double(d.v_condition) << "\n";
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  return kExitOk;
}

struct TestFlags {
  std::string data;
  std::string constraint;
  std::string statistic = "icu_stud";
  std::string budget = "x2";
  std::uint64_t seed = 1;
  std::size_t dc_groups = 0;
  unsigned max_redraws = 64;
};

inline int cmd_test(const TestFlags& fl, std::ostream& out) {
  const SampleMatrix x = read_data_csv(fl.data);
  PolyConstraint f = [&] {
    try {
      return parse_constraint(fl.constraint, x.p());
    } catch (const DomainError& e) {
      throw ConfigError(std::string("constraint: ") + e.what());
    }
  }();
  const int m = f.degree();
  if (x.n() < static_cast<std::size_t>(m)) {
    throw ConfigError("data has n = " + std::to_string(x.n()) + " rows, fewer than the kernel degree " +
                      std::to_string(m));
  }
  for (int u = 0; u < x.p(); ++u) {
    bool constant = true;
    for (std::size_t i = 1; i < x.n() && constant; ++i) constant = x(i, u) == x(0, u);
    if (constant) {
      throw DegenerateStudentizerError("column " + std::to_string(u + 1) +
                                       " is constant: no variance to studentize with");
    }
  }
  const Statistic stat = parse_statistic(fl.statistic);
  TestOutcome result;
  if (stat == Statistic::wald_studentized) {
    result = wald_studentized(f, x);
  } else if (stat == Statistic::icu_studentized) {
    if (x.n() < static_cast<std::size_t>(3 * m - 2)) {
      throw ConfigError("icu_stud needs n >= 3m - 2 = " + std::to_string(3 * m - 2));
    }
    std::uint64_t budget = 0;
    try {
      budget = parse_budget(fl.budget, x.n());
      make_budget_plan(x.n(), m, budget, StreamId{});
    } catch (const DomainError& e) {
      throw ConfigError(e.what());
    }
    const SymmetricKernel h(f);
    std::optional<IncompleteResult> draw;
    for (std::uint32_t attempt = 0; !draw; ++attempt) {
      if (attempt > fl.max_redraws) throw DegenerateSampleError("N-hat = 0 persisted beyond the redraw budget");
      try {
        draw = incomplete_ustat(h, x, make_budget_plan(x.n(), m, budget, StreamId{fl.seed, StreamTag::sampling, 0, attempt}));
      } catch (const DegenerateSampleError&) {
      }
    }
    result = icu_studentized(*draw, h, x, budget, StreamId{fl.seed, StreamTag::studentizer, 0, 0}, fl.dc_groups);
  } else {
    throw ConfigError("test supports the studentized statistics only (icu_stud, T_hat_f)");
  }
  out << "statistic=" << statistic_name(stat) << "\n";
  out << "n=" << x.n() << "\n";
  out << "value=" << format_double(result.statistic) << "\n";
  out << "zscore=" << format_double(result.zscore) << "\n";
  out << "pvalue=" << format_double(result.pvalue) << "\n";
  out << "nhat=" << (result.nhat ? std::to_string(*result.nhat) : std::string("NA")) << "\n";
  return kExitOk;
}

struct SelfcheckFlags {
  std::uint64_t seed = 1;
  double perturb_kernel = 0.0;
};

inline int cmd_selfcheck(const SelfcheckFlags& fl, std::ostream& out) {
  const auto results = run_selfcheck(SelfcheckOptions{fl.seed, fl.perturb_kernel});
  bool all = true;
  for (const auto& r : results) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2fs", r.seconds);
    out << (r.pass ? "PASS " : "FAIL ") << r.name << " (" << r.detail << ", " << buf << ")\n";
    all = all && r.pass;
  }
  return all ? kExitOk : kExitCheckFailed;
}

}  // namespace cli

/// Parse argv, dispatch, and map exceptions to exit codes.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Tests of polynomial covariance constraints with incomplete U-statistics", "ustest"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  cli::SimulateFlags sim;
  auto* sim_cmd = app.add_subcommand("simulate-size", "Monte Carlo size curves under the null");
  sim.model.attach(sim_cmd);
  sim_cmd->add_option("--seed", sim.seed, "Master seed");
  sim_cmd->add_option("--out", sim.out, "Output CSV (a .meta sidecar is written next to it)");
  sim_cmd->add_option("--threads", sim.threads, "Worker threads, 0 = all cores");
  sim_cmd->add_option("--replicates", sim.replicates, "Monte Carlo replicates R");
  sim_cmd->add_option("--budget", sim.budget, "Computational budget: N or xK (K times n)");
  sim_cmd->add_option("--sided", sim.sided, "two | right");
  sim_cmd->add_option("--n", sim.n, "Sample size");
  sim_cmd->add_option("--statistics", sim.statistics, "Comma-separated statistic names");

  cli::MomentsFlags mom;
  auto* mom_cmd = app.add_subcommand("moments", "Exact sigma_g^2, sigma_h^2 and bound ingredients");
  mom.model.attach(mom_cmd);
  mom_cmd->add_option("--n", mom.n, "Sample size for the bound terms");
  mom_cmd->add_option("--mc-draws", mom.mc_draws, "Monte Carlo draws for E|g|^3 (0 skips it)");
  mom_cmd->add_option("--seed", mom.seed, "Seed of the E|g|^3 estimate");

  cli::DiagnoseFlags diag;
  auto* diag_cmd = app.add_subcommand("diagnose", "Computable ingredients of the normal-approximation bounds");
  diag.model.attach(diag_cmd);
  diag_cmd->add_option("--n", diag.n, "Sample size");
  diag_cmd->add_option("--budget", diag.budget, "Computational budget: N or xK");
  diag_cmd->add_option("--mc-draws", diag.mc_draws, "Monte Carlo draws for E|g|^3 (0 skips it)");
  diag_cmd->add_option("--seed", diag.seed, "Seed of the E|g|^3 estimate");

  cli::TestFlags tst;
  auto* tst_cmd = app.add_subcommand("test", "Test a constraint on a data CSV");
  tst_cmd->add_option("--data", tst.data, "CSV with a header row and one observation per row")
      ->required()
      ->check(CLI::ExistingFile);
  tst_cmd->add_option("--constraint", tst.constraint, "Constraint polynomial")->required();
  tst_cmd->add_option("--statistic", tst.statistic, "icu_stud | T_hat_f");
  tst_cmd->add_option("--budget", tst.budget, "Computational budget: N or xK");
  tst_cmd->add_option("--seed", tst.seed, "Seed of the Bernoulli design and the studentizer");
  tst_cmd->add_option("--dc-groups", tst.dc_groups, "Studentizer groups per half, 0 = as many as fit");

  cli::SelfcheckFlags chk;
  auto* chk_cmd = app.add_subcommand("selfcheck", "Run the exact-identity suite");
  chk_cmd->add_option("--seed", chk.seed, "Seed of the random instances");
  chk_cmd->add_option("--perturb-kernel", chk.perturb_kernel)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (*sim_cmd) return cli::cmd_simulate_size(sim, out);
    if (*mom_cmd) return cli::cmd_moments(mom, out);
    if (*diag_cmd) return cli::cmd_diagnose(diag, out);
    if (*tst_cmd) return cli::cmd_test(tst, out);
    if (*chk_cmd) return cli::cmd_selfcheck(chk, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const SingularHypothesisError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const DegenerateSampleError& e) {
    err << "degenerate: " << e.what() << "\n";
    return kExitDegenerate;
  } catch (const DegenerateStudentizerError& e) {
    err << "degenerate: " << e.what() << "\n";
    return kExitDegenerate;
  } catch (const ConsistencyError& e) {
    err << "consistency check failed: " << e.what() << "\n";
    return kExitCheckFailed;
  }
  return kExitInput;
}

}  // namespace ustest
