#pragma once

// Experiment configuration: a versioned JSON document with nested sections.
// Validation failures name the offending field.

#include "stabent/models.hpp"

#include <json.hpp>

#include <fstream>
#include <optional>

namespace stabent::config {

using nlohmann::json;

inline constexpr int kConfigVersion = 1;

struct SystemSpec {
  enum class Type { Linear, Quadratic, Cubic, Chain };
  Type type = Type::Linear;
  Mat a, b;                     // linear
  models::QuadraticParams quad;  // quadratic
  models::CubicParams cubic;     // cubic
  models::ChainParams chain;     // chain
};

struct FeedbackSpec {
  enum class Type { None, Linear, Quadratic, PiecewiseLinear, Synthesized };
  Type type = Type::None;
  Mat k;                   // linear gain
  double c1 = 0.0, c2 = 0.0;  // quadratic (k, q) or pwl (k1, k2)
};

struct ZetaSpec {
  enum class Type { Exponential, Synthesized };
  Type type = Type::Exponential;
  double alpha = 1.0;
  double big_m = 1.0;
};

struct SafetyFactors {
  double upper_inflation = 1.05;
  double lower_margin = 0.0;
  double sampling_inflation = 1.0;
};

struct CandidateSpec {
  bool use_feedback = true;
  int quant_levels = 0;
  int control_steps = 0;  // 0: one control interval per dt
};

struct SynthesisSpec {
  double alpha = 1.0;
  double fit_horizon = 20.0;
  double gain_start = 4.0;
  double dive_window = 0.25;
  int fit_grid = 41;
};

struct SweepSpec {
  double from = 1e2;
  double to = 1e6;
  int points = 20;
};

struct ExperimentConfig {
  std::string name = "experiment";
  SystemSpec system;
  Box gamma_box;
  std::vector<int> gamma_grid;
  Box target;
  ZetaSpec zeta;
  double epsilon = 0.1;
  std::vector<double> horizons;
  double dt = 0.01;
  double rho = std::numeric_limits<double>::infinity();
  spanning::Mode mode = spanning::Mode::Practical;
  std::uint64_t seed = 1;
  int grid_res = 41;
  SafetyFactors safety;
  CandidateSpec candidates;
  FeedbackSpec feedback;
  SynthesisSpec synthesis;
  SweepSpec sweep;
  Vec x0;           // simulate subcommand start state (defaults to Gamma's center)
  double sim_tau = 0.0;  // simulate horizon (defaults to the last entropy horizon)
};

namespace detail {

inline const json& field(const json& j, const std::string& key, const std::string& scope) {
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(scope + key, "missing field '" + scope + key + "'");
  return *it;
}

inline double number(const json& j, const std::string& key, const std::string& scope) {
  const json& v = field(j, key, scope);
  if (!v.is_number()) throw ConfigError(scope + key, "field '" + scope + key + "' must be a number");
  double x = v.get<double>();
  if (!std::isfinite(x)) throw ConfigError(scope + key, "field '" + scope + key + "' must be finite");
  return x;
}

inline double number_or(const json& j, const std::string& key, const std::string& scope,
                        double fallback) {
  if (!j.contains(key)) return fallback;
  return number(j, key, scope);
}

inline std::vector<double> number_list(const json& j, const std::string& key,
                                       const std::string& scope) {
  const json& v = field(j, key, scope);
  if (!v.is_array()) throw ConfigError(scope + key, "field '" + scope + key + "' must be an array");
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number())
      throw ConfigError(scope + key, "field '" + scope + key + "' must hold numbers");
    double x = e.get<double>();
    if (!std::isfinite(x))
      throw ConfigError(scope + key, "field '" + scope + key + "' must hold finite numbers");
    out.push_back(x);
  }
  return out;
}

inline Mat matrix(const json& j, const std::string& key, const std::string& scope) {
  const json& v = field(j, key, scope);
  if (!v.is_array() || v.empty())
    throw ConfigError(scope + key, "field '" + scope + key + "' must be a nonempty 2d array");
  std::size_t cols = 0;
  std::vector<std::vector<double>> rows;
  for (const auto& r : v) {
    if (!r.is_array()) throw ConfigError(scope + key, "field '" + scope + key + "' must be 2d");
    std::vector<double> row;
    for (const auto& e : r) row.push_back(e.get<double>());
    if (cols == 0) cols = row.size();
    if (row.size() != cols || cols == 0)
      throw ConfigError(scope + key, "field '" + scope + key + "' has ragged rows");
    rows.push_back(std::move(row));
  }
  Mat m(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
  return m;
}

inline Vec vector(const json& j, const std::string& key, const std::string& scope) {
  auto values = number_list(j, key, scope);
  Vec v(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) v[static_cast<Eigen::Index>(i)] = values[i];
  return v;
}

inline SystemSpec parse_system(const json& j) {
  SystemSpec spec;
  std::string type = field(j, "type", "system.").get<std::string>();
  if (type == "linear") {
    spec.type = SystemSpec::Type::Linear;
    spec.a = matrix(j, "a", "system.");
    spec.b = matrix(j, "b", "system.");
    if (spec.a.rows() != spec.a.cols()) throw ConfigError("system.a", "system.a must be square");
    if (spec.b.rows() != spec.a.rows())
      throw ConfigError("system.b", "system.b must have as many rows as system.a");
  } else if (type == "quadratic") {
    spec.type = SystemSpec::Type::Quadratic;
    spec.quad.lambda = number(j, "lambda", "system.");
    spec.quad.alpha0 = number(j, "alpha0", "system.");
    spec.quad.beta0 = number(j, "beta0", "system.");
    spec.quad.gamma0 = number(j, "gamma0", "system.");
    spec.quad.validate();
  } else if (type == "cubic") {
    spec.type = SystemSpec::Type::Cubic;
    spec.cubic.lambda = number(j, "lambda", "system.");
    spec.cubic.alpha0 = number(j, "alpha0", "system.");
    spec.cubic.beta0 = number(j, "beta0", "system.");
    spec.cubic.gamma0 = number(j, "gamma0", "system.");
    spec.cubic.alpha1 = number(j, "alpha1", "system.");
    spec.cubic.beta1 = number(j, "beta1", "system.");
    spec.cubic.gamma1 = number(j, "gamma1", "system.");
    spec.cubic.eta1 = number(j, "eta1", "system.");
    spec.cubic.validate();
  } else if (type == "chain") {
    spec.type = SystemSpec::Type::Chain;
    spec.chain.d = static_cast<int>(number(j, "d", "system."));
    spec.chain.lambda = number(j, "lambda", "system.");
    spec.chain.alpha0 = number(j, "alpha0", "system.");
    spec.chain.beta0 = number(j, "beta0", "system.");
    spec.chain.gammas = number_list(j, "gammas", "system.");
    spec.chain.k1 = number(j, "k1", "system.");
    auto k2 = number_list(j, "k2", "system.");
    spec.chain.k2 = Eigen::RowVectorXd(static_cast<Eigen::Index>(k2.size()));
    for (std::size_t i = 0; i < k2.size(); ++i)
      spec.chain.k2(0, static_cast<Eigen::Index>(i)) = k2[i];
    spec.chain.validate();
  } else {
    throw ConfigError("system.type", "unknown system.type '" + type + "'");
  }
  return spec;
}

inline Box parse_box(const json& j, const std::string& scope) {
  Vec lo = vector(j, "lo", scope);
  Vec hi = vector(j, "hi", scope);
  if (lo.size() != hi.size()) throw ConfigError(scope + "hi", scope + "lo/hi size mismatch");
  for (Eigen::Index i = 0; i < lo.size(); ++i)
    if (lo[i] > hi[i]) throw ConfigError(scope + "lo", scope + "lo exceeds hi");
  return Box(lo, hi);
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& j) {
  ExperimentConfig cfg;
  if (!j.contains("config_version") || !j["config_version"].is_number_integer() ||
      j["config_version"].get<int>() != kConfigVersion)
    throw ConfigError("config_version",
                      "config_version must be " + std::to_string(kConfigVersion));
  if (j.contains("name")) cfg.name = j["name"].get<std::string>();

  cfg.system = detail::parse_system(detail::field(j, "system", ""));

  const json& gamma = detail::field(j, "gamma", "");
  cfg.gamma_box = detail::parse_box(gamma, "gamma.");
  if (gamma.contains("grid") && gamma["grid"].is_array()) {
    for (const auto& e : gamma["grid"]) cfg.gamma_grid.push_back(e.get<int>());
  } else {
    int n = static_cast<int>(detail::number_or(gamma, "grid", "gamma.", 41));
    cfg.gamma_grid.assign(static_cast<std::size_t>(cfg.gamma_box.dim()), n);
  }
  if (static_cast<int>(cfg.gamma_grid.size()) != cfg.gamma_box.dim())
    throw ConfigError("gamma.grid", "gamma.grid must match the box dimension");
  for (int n : cfg.gamma_grid)
    if (n < 1) throw ConfigError("gamma.grid", "gamma.grid entries must be >= 1");

  cfg.target = detail::parse_box(detail::field(j, "target", ""), "target.");
  if (cfg.target.dim() != cfg.gamma_box.dim())
    throw ConfigError("target", "target dimension must match gamma");

  const json& zeta = detail::field(j, "zeta", "");
  std::string ztype = detail::field(zeta, "type", "zeta.").get<std::string>();
  if (ztype == "exponential") {
    cfg.zeta.type = ZetaSpec::Type::Exponential;
    cfg.zeta.alpha = detail::number(zeta, "alpha", "zeta.");
    cfg.zeta.big_m = detail::number(zeta, "big_m", "zeta.");
    if (cfg.zeta.alpha <= 0.0) throw ConfigError("zeta.alpha", "zeta.alpha must be > 0");
    if (cfg.zeta.big_m < 1.0) throw ConfigError("zeta.big_m", "zeta.big_m must be >= 1");
  } else if (ztype == "synthesized") {
    cfg.zeta.type = ZetaSpec::Type::Synthesized;
  } else {
    throw ConfigError("zeta.type", "unknown zeta.type '" + ztype + "'");
  }

  cfg.epsilon = detail::number(j, "epsilon", "");
  if (cfg.epsilon <= 0.0) throw ConfigError("epsilon", "epsilon must be > 0");

  cfg.horizons = detail::number_list(j, "horizons", "");
  for (std::size_t i = 0; i + 1 < cfg.horizons.size(); ++i)
    if (cfg.horizons[i + 1] <= cfg.horizons[i])
      throw ConfigError("horizons", "horizons must be strictly increasing");
  if (!cfg.horizons.empty() && cfg.horizons.front() <= 0.0)
    throw ConfigError("horizons", "horizons must be positive");

  cfg.dt = detail::number(j, "dt", "");
  if (cfg.dt <= 0.0) throw ConfigError("dt", "dt must be > 0");

  cfg.rho = detail::number_or(j, "rho", "", cfg.rho);
  if (cfg.rho <= 0.0) throw ConfigError("rho", "rho must be > 0");

  std::string mode = j.contains("mode") ? j["mode"].get<std::string>() : "practical";
  if (mode == "practical")
    cfg.mode = spanning::Mode::Practical;
  else if (mode == "strict")
    cfg.mode = spanning::Mode::Strict;
  else
    throw ConfigError("mode", "mode must be 'practical' or 'strict'");

  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  cfg.grid_res = static_cast<int>(detail::number_or(j, "grid_res", "", 41));
  if (cfg.grid_res < 2) throw ConfigError("grid_res", "grid_res must be >= 2");

  if (j.contains("safety")) {
    const json& s = j["safety"];
    cfg.safety.upper_inflation = detail::number_or(s, "upper_inflation", "safety.", 1.05);
    cfg.safety.lower_margin = detail::number_or(s, "lower_margin", "safety.", 0.0);
    cfg.safety.sampling_inflation = detail::number_or(s, "sampling_inflation", "safety.", 1.0);
    if (cfg.safety.upper_inflation < 1.0)
      throw ConfigError("safety.upper_inflation", "safety.upper_inflation must be >= 1");
    if (cfg.safety.sampling_inflation < 1.0)
      throw ConfigError("safety.sampling_inflation", "safety.sampling_inflation must be >= 1");
  }

  if (j.contains("candidates")) {
    const json& c = j["candidates"];
    if (c.contains("use_feedback")) cfg.candidates.use_feedback = c["use_feedback"].get<bool>();
    cfg.candidates.quant_levels = static_cast<int>(detail::number_or(c, "quant_levels", "candidates.", 0));
    cfg.candidates.control_steps =
        static_cast<int>(detail::number_or(c, "control_steps", "candidates.", 0));
    if (cfg.candidates.quant_levels < 0)
      throw ConfigError("candidates.quant_levels", "candidates.quant_levels must be >= 0");
  }

  if (j.contains("feedback")) {
    const json& f = j["feedback"];
    std::string ftype = detail::field(f, "type", "feedback.").get<std::string>();
    if (ftype == "linear") {
      cfg.feedback.type = FeedbackSpec::Type::Linear;
      cfg.feedback.k = detail::matrix(f, "k", "feedback.");
    } else if (ftype == "quadratic") {
      cfg.feedback.type = FeedbackSpec::Type::Quadratic;
      cfg.feedback.c1 = detail::number(f, "k", "feedback.");
      cfg.feedback.c2 = detail::number(f, "q", "feedback.");
    } else if (ftype == "pwl") {
      cfg.feedback.type = FeedbackSpec::Type::PiecewiseLinear;
      cfg.feedback.c1 = detail::number(f, "k1", "feedback.");
      cfg.feedback.c2 = detail::number(f, "k2", "feedback.");
    } else if (ftype == "synthesized") {
      cfg.feedback.type = FeedbackSpec::Type::Synthesized;
    } else if (ftype == "none") {
      cfg.feedback.type = FeedbackSpec::Type::None;
    } else {
      throw ConfigError("feedback.type", "unknown feedback.type '" + ftype + "'");
    }
  }

  if (j.contains("synthesis")) {
    const json& s = j["synthesis"];
    cfg.synthesis.alpha = detail::number_or(s, "alpha", "synthesis.", 1.0);
    cfg.synthesis.fit_horizon = detail::number_or(s, "fit_horizon", "synthesis.", 20.0);
    cfg.synthesis.gain_start = detail::number_or(s, "gain_start", "synthesis.", 4.0);
    cfg.synthesis.dive_window = detail::number_or(s, "dive_window", "synthesis.", 0.25);
    cfg.synthesis.fit_grid = static_cast<int>(detail::number_or(s, "fit_grid", "synthesis.", 41));
    if (cfg.synthesis.alpha <= 0.0)
      throw ConfigError("synthesis.alpha", "synthesis.alpha must be > 0");
  }

  if (j.contains("sweep")) {
    const json& s = j["sweep"];
    cfg.sweep.from = detail::number_or(s, "from", "sweep.", 1e2);
    cfg.sweep.to = detail::number_or(s, "to", "sweep.", 1e6);
    cfg.sweep.points = static_cast<int>(detail::number_or(s, "points", "sweep.", 20));
    if (cfg.sweep.from <= 0.0 || cfg.sweep.to <= cfg.sweep.from)
      throw ConfigError("sweep.from", "sweep needs 0 < from < to");
    if (cfg.sweep.points < 2) throw ConfigError("sweep.points", "sweep.points must be >= 2");
  }

  if (j.contains("x0")) cfg.x0 = detail::vector(j, "x0", "");
  cfg.sim_tau = detail::number_or(j, "sim_tau", "", 0.0);
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("config", std::string("config parse error: ") + e.what());
  }
  return parse_config(j);
}

}  // namespace stabent::config
