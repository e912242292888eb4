#pragma once

// Run configuration: a flat key = value file with [sections].
//
//   # comment (whole line, or after whitespace)
//   [model]
//   type       = one_factor | equicorrelation | identity | explicit
//   p          = 4
//   loadings   = 0.2, 0.2, 0.2, 0.2          (one_factor)
//   uniqueness = unit_diagonal | 0.96, ...   (one_factor, default unit_diagonal)
//   rho        = 0.2                         (equicorrelation)
//   matrix     = 1 0.5 ; 0.5 1               (explicit, rows split by ';')
//
//   [constraint]
//   f = tetrad(1,2,3,4)                      (text format of polynomial.hpp)
//
//   [experiment]
//   n           = 100
//   budget      = x2                         (absolute N or xK = K * n)
//   statistics  = T_f, T_hat_f, icu_std, icu_stud, block
//   replicates  = 1000
//   alphas      = default | 0.01, 0.05, ...
//   sided       = two | right
//   dc_groups   = 0
//   max_redraws = 64
//   n_sweep     = 100, 200, 400              (optional)
//
//   [run]
//   seed    = 20261016
//   threads = 0
//   out     = results/figure1.csv
//
// Unknown sections or keys, duplicates and malformed values are errors that
// name the offending line.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ustest/covmodel.hpp"
#include "ustest/errors.hpp"
#include "ustest/estimators.hpp"
#include "ustest/experiments.hpp"
#include "ustest/polynomial.hpp"

namespace ustest {

/// One value with the line it came from.
struct ConfigValue {
  std::string text;
  int line = 0;
};

/// Parsed sections; keys are "section.key".
class ConfigFile {
 public:
  static ConfigFile parse(std::string_view text, std::string origin = "config") {
    ConfigFile cfg;
    cfg.origin_ = std::move(origin);
    std::string section;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const std::size_t end = std::min(text.find('\n', pos), text.size());
      std::string line(text.substr(pos, end - pos));
      pos = end + 1;
      ++line_no;
      line = strip_comment(line);
      line = trim(line);
      if (line.empty()) {
        if (end == text.size()) break;
        continue;
      }
      if (line.front() == '[') {
        if (line.back() != ']') cfg.fail(line_no, "unterminated section header");
        section = trim(line.substr(1, line.size() - 2));
        if (!known_section(section)) cfg.fail(line_no, "unknown section [" + section + "]");
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) cfg.fail(line_no, "expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (section.empty()) cfg.fail(line_no, "key '" + key + "' outside any section");
      const std::string full = section + "." + key;
      if (!known_key(full)) cfg.fail(line_no, "unknown key '" + key + "' in [" + section + "]");
      if (cfg.values_.count(full)) cfg.fail(line_no, "duplicate key '" + key + "'");
      if (value.empty()) cfg.fail(line_no, "empty value for '" + key + "'");
      cfg.values_[full] = ConfigValue{value, line_no};
      if (end == text.size()) break;
    }
    return cfg;
  }

  static ConfigFile load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file '" + path + "'");
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse(buf.str(), path);
  }

  const ConfigValue* find(const std::string& key) const {
    auto it = values_.find(key);
    return it == values_.end() ? nullptr : &it->second;
  }

  const std::map<std::string, ConfigValue>& values() const { return values_; }
  const std::string& origin() const { return origin_; }

  [[noreturn]] void fail(int line, const std::string& what) const {
    throw ConfigError(origin_ + ":" + std::to_string(line) + ": " + what);
  }

  static std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
  }

 private:
  static std::string strip_comment(const std::string& line) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '#' && (i == 0 || std::isspace(static_cast<unsigned char>(line[i - 1])))) {
        return line.substr(0, i);
      }
    }
    return line;
  }

  static bool known_section(const std::string& s) {
    return s == "model" || s == "constraint" || s == "experiment" || s == "run";
  }

  static bool known_key(const std::string& k) {
    static const char* const keys[] = {
        "model.type",          "model.p",           "model.loadings",        "model.uniqueness",
        "model.rho",           "model.matrix",      "constraint.f",          "experiment.n",
        "experiment.budget",   "experiment.statistics", "experiment.replicates", "experiment.alphas",
        "experiment.sided",    "experiment.dc_groups",  "experiment.max_redraws", "experiment.n_sweep",
        "run.seed",            "run.threads",       "run.out",
    };
    return std::find(std::begin(keys), std::end(keys), k) != std::end(keys);
  }

  std::string origin_;
  std::map<std::string, ConfigValue> values_;
};

namespace detail {

inline std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t end = text.find(sep, pos);
    out.push_back(ConfigFile::trim(text.substr(pos, end == std::string_view::npos ? end : end - pos)));
    if (end == std::string_view::npos) break;
    pos = end + 1;
  }
  return out;
}

inline double parse_real(const std::string& s) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("malformed number '" + s + "'");
  return value;
}

inline std::uint64_t parse_count(const std::string& s) {
  std::uint64_t value = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("malformed non-negative integer '" + s + "'");
  }
  return value;
}

inline std::vector<double> parse_reals(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split(s, ',')) out.push_back(parse_real(item));
  return out;
}

}  // namespace detail

/// Model description as written in a config or on the command line.
struct ModelSpec {
  std::string type = "one_factor";
  int p = 4;
  std::vector<double> loadings;
  std::optional<std::vector<double>> uniqueness;  ///< empty means unit diagonal
  double rho = 0.0;
  std::string matrix;

  CovModel build() const {
    if (p < 2) throw ConfigError("model dimension p must be at least 2");
    if (type == "identity") return CovModel(Matrix::Identity(p, p));
    if (type == "equicorrelation") {
      try {
        return equicorrelation_cov(p, rho);
      } catch (const DomainError& e) {
        throw ConfigError(e.what());
      }
    }
    if (type == "one_factor") {
      if (static_cast<int>(loadings.size()) != p) throw ConfigError("one_factor needs p loadings");
      try {
        if (!uniqueness) return one_factor_unit_diagonal(loadings);
        if (static_cast<int>(uniqueness->size()) != p) throw ConfigError("one_factor needs p uniqueness entries");
        return one_factor_cov(loadings, *uniqueness);
      } catch (const DomainError& e) {
        throw ConfigError(e.what());
      }
    }
    if (type == "explicit") {
      const auto rows = detail::split(matrix, ';');
      if (static_cast<int>(rows.size()) != p) throw ConfigError("explicit matrix needs p rows");
      Matrix theta(p, p);
      for (int u = 0; u < p; ++u) {
        std::istringstream is(rows[static_cast<std::size_t>(u)]);
        std::string tok;
        int v = 0;
        while (is >> tok) {
          if (v >= p) throw ConfigError("explicit matrix row " + std::to_string(u + 1) + " is too long");
          theta(u, v++) = detail::parse_real(tok);
        }
        if (v != p) throw ConfigError("explicit matrix row " + std::to_string(u + 1) + " is too short");
      }
      if (!theta.isApprox(theta.transpose(), 0.0)) throw ConfigError("explicit matrix is not symmetric");
      try {
        return CovModel(theta);
      } catch (const DomainError& e) {
        throw ConfigError(e.what());
      }
    }
    throw ConfigError("unknown model type '" + type + "'");
  }

  /// key=value lines for the metadata sidecar.
  std::vector<std::pair<std::string, std::string>> echo() const {
    std::vector<std::pair<std::string, std::string>> out{{"model.type", type}, {"model.p", std::to_string(p)}};
    auto join = [](const std::vector<double>& v) {
      std::string s;
      for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
      return s;
    };
    if (type == "one_factor") {
      out.emplace_back("model.loadings", join(loadings));
      out.emplace_back("model.uniqueness", uniqueness ? join(*uniqueness) : "unit_diagonal");
    }
    if (type == "equicorrelation") out.emplace_back("model.rho", format_double(rho));
    if (type == "explicit") out.emplace_back("model.matrix", matrix);
    return out;
  }
};

/// Everything a subcommand needs, after file values and flag overrides.
struct RunConfig {
  std::optional<ModelSpec> model;
  std::optional<std::string> constraint;
  std::size_t n = 100;
  std::string budget = "x2";
  std::vector<Statistic> statistics{Statistic::wald_standardized, Statistic::wald_studentized,
                                    Statistic::icu_standardized, Statistic::icu_studentized,
                                    Statistic::block};
  std::size_t replicates = 1000;
  std::vector<double> alphas = default_alpha_grid();
  bool default_alphas = true;
  Sidedness sided = Sidedness::two;
  std::size_t dc_groups = 0;
  unsigned max_redraws = 64;
  std::vector<std::size_t> n_sweep;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::string out = "size.csv";
};

inline Sidedness parse_sidedness(const std::string& s) {
  if (s == "two") return Sidedness::two;
  if (s == "right") return Sidedness::right;
  throw ConfigError("sided must be 'two' or 'right', got '" + s + "'");
}

inline std::string_view sidedness_name(Sidedness s) { return s == Sidedness::two ? "two" : "right"; }

/// Apply a parsed file to a RunConfig. Value errors are reported with the
/// line they come from.
inline RunConfig apply_config(const ConfigFile& file, RunConfig rc = {}) {
  auto with_line = [&](const std::string& key, auto&& fn) {
    const ConfigValue* v = file.find(key);
    if (!v) return;
    try {
      fn(v->text);
    } catch (const ConfigError& e) {
      file.fail(v->line, e.what());
    } catch (const DomainError& e) {
      file.fail(v->line, e.what());
    }
  };

  if (file.find("model.type")) {
    ModelSpec spec;
    with_line("model.type", [&](const std::string& s) {
      if (s != "one_factor" && s != "equicorrelation" && s != "identity" && s != "explicit") {
        throw ConfigError("unknown model type '" + s + "'");
      }
      spec.type = s;
    });
    with_line("model.p", [&](const std::string& s) { spec.p = static_cast<int>(detail::parse_count(s)); });
    with_line("model.loadings", [&](const std::string& s) { spec.loadings = detail::parse_reals(s); });
    with_line("model.uniqueness", [&](const std::string& s) {
      if (s != "unit_diagonal") spec.uniqueness = detail::parse_reals(s);
    });
    with_line("model.rho", [&](const std::string& s) { spec.rho = detail::parse_real(s); });
    with_line("model.matrix", [&](const std::string& s) { spec.matrix = s; });
    with_line("model.type", [&](const std::string&) { spec.build(); });
    rc.model = spec;
  } else {
    for (const auto& [key, value] : file.values()) {
      if (key.rfind("model.", 0) == 0) file.fail(value.line, "[model] needs a 'type' key");
    }
  }
  with_line("constraint.f", [&](const std::string& s) {
    if (rc.model) parse_constraint(s, rc.model->p);
    rc.constraint = s;
  });
  with_line("experiment.n", [&](const std::string& s) { rc.n = detail::parse_count(s); });
  with_line("experiment.budget", [&](const std::string& s) {
    parse_budget(s, rc.n);
    rc.budget = s;
  });
  with_line("experiment.statistics", [&](const std::string& s) {
    rc.statistics.clear();
    for (const auto& name : detail::split(s, ',')) rc.statistics.push_back(parse_statistic(name));
  });
  with_line("experiment.replicates", [&](const std::string& s) {
    rc.replicates = detail::parse_count(s);
    if (rc.replicates < 1) throw ConfigError("replicates must be at least 1");
  });
  with_line("experiment.alphas", [&](const std::string& s) {
    if (s == "default") {
      rc.alphas = default_alpha_grid();
      rc.default_alphas = true;
      return;
    }
    rc.alphas = detail::parse_reals(s);
    rc.default_alphas = false;
    for (std::size_t i = 0; i < rc.alphas.size(); ++i) {
      if (!(rc.alphas[i] > 0.0 && rc.alphas[i] < 1.0)) throw ConfigError("nominal levels must lie in (0, 1)");
      if (i > 0 && !(rc.alphas[i] > rc.alphas[i - 1])) throw ConfigError("nominal levels must be increasing");
    }
  });
  with_line("experiment.sided", [&](const std::string& s) { rc.sided = parse_sidedness(s); });
  with_line("experiment.dc_groups", [&](const std::string& s) { rc.dc_groups = detail::parse_count(s); });
  with_line("experiment.max_redraws",
            [&](const std::string& s) { rc.max_redraws = static_cast<unsigned>(detail::parse_count(s)); });
  with_line("experiment.n_sweep", [&](const std::string& s) {
    rc.n_sweep.clear();
    for (const auto& item : detail::split(s, ',')) rc.n_sweep.push_back(detail::parse_count(item));
  });
  with_line("run.seed", [&](const std::string& s) { rc.seed = detail::parse_count(s); });
  with_line("run.threads", [&](const std::string& s) { rc.threads = static_cast<unsigned>(detail::parse_count(s)); });
  with_line("run.out", [&](const std::string& s) { rc.out = s; });
  return rc;
}

}  // namespace ustest
