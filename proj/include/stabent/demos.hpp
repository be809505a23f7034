#pragma once

// Built-in demo configurations, one per model family. Horizon lists are tuned
// so the spanning covers stay resolvable on the configured grids (counts well
// below the grid size at the largest horizon).

#include "stabent/config.hpp"

namespace stabent::demos {

inline std::vector<std::string> list_demos() {
  return {"linear-1d", "linear-2d", "quadratic-5.2", "cubic-5.3", "chain-5.4"};
}

inline config::ExperimentConfig demo_config(const std::string& name) {
  using config::ExperimentConfig;
  ExperimentConfig cfg;
  cfg.name = name;

  if (name == "linear-1d") {
    // Contracting scalar flow: every eigenvalue sits below -alpha, so the
    // spectral sum is empty and the spanning counts stay bounded. For an
    // expanding scalar system the Lipschitz bound |a| d is tight with no
    // slack, which no finite-horizon estimate can sit under.
    cfg.system.type = config::SystemSpec::Type::Linear;
    cfg.system.a = Mat::Constant(1, 1, -0.8);
    cfg.system.b = Mat::Constant(1, 1, 1.0);
    cfg.gamma_box = Box::interval(-1.0, 1.0);
    cfg.gamma_grid = {201};
    cfg.target = Box::point1d(0.0);
    cfg.zeta = {config::ZetaSpec::Type::Exponential, 0.5, 2.0};
    cfg.epsilon = 0.02;
    cfg.horizons = {0.5, 1.0, 1.5, 2.0};
    cfg.dt = 0.01;
    cfg.rho = 10.0;
    cfg.feedback.type = config::FeedbackSpec::Type::Linear;
    cfg.feedback.k = Mat::Constant(1, 1, -0.2);  // closed pole at -1, below -alpha
    cfg.candidates.quant_levels = 3;
    return cfg;
  }

  if (name == "linear-2d") {
    cfg.system.type = config::SystemSpec::Type::Linear;
    cfg.system.a = Mat::Zero(2, 2);
    cfg.system.a(0, 0) = 1.0;
    cfg.system.a(1, 1) = -2.0;
    cfg.system.b = Mat::Identity(2, 2);
    cfg.gamma_box = Box::cube(2, -1.0, 1.0);
    cfg.gamma_grid = {21, 21};
    cfg.target = Box::point(Vec::Zero(2));
    cfg.zeta = {config::ZetaSpec::Type::Exponential, 0.5, 2.0};
    cfg.epsilon = 0.05;
    cfg.horizons = {0.5, 1.0, 1.5, 2.0};
    cfg.dt = 0.01;
    cfg.rho = 10.0;
    cfg.feedback.type = config::FeedbackSpec::Type::Linear;
    cfg.feedback.k = Mat::Zero(2, 2);
    cfg.feedback.k(0, 0) = -4.5;
    cfg.feedback.k(1, 1) = -1.5;  // both closed poles at -3.5
    cfg.candidates.quant_levels = 0;
    return cfg;
  }

  if (name == "quadratic-5.2") {
    // epsilon is kept loose so the accepted gain stays moderate: the recorded
    // open-loop signals must track the initial dive at the control step, and
    // the dive steepens like the gain squared
    cfg.system.type = config::SystemSpec::Type::Quadratic;
    cfg.system.quad = models::QuadraticParams{1.0, 0.2, 0.5, -1.0};
    cfg.gamma_box = Box::interval(0.4, 0.8);
    cfg.gamma_grid = {41};
    cfg.target = Box::point1d(0.0);
    cfg.zeta.type = config::ZetaSpec::Type::Synthesized;
    cfg.epsilon = 0.25;
    cfg.horizons = {1.0, 1.5, 2.0, 2.5};
    cfg.dt = 5e-5;
    cfg.feedback.type = config::FeedbackSpec::Type::Synthesized;
    cfg.synthesis.alpha = 1.0;  // inside (0, 3 lambda)
    cfg.sweep = {1e2, 1e6, 20};
    return cfg;
  }

  if (name == "cubic-5.3") {
    cfg.system.type = config::SystemSpec::Type::Cubic;
    cfg.system.cubic = models::CubicParams{1.0, 0.1, 0.8, 1.0, 0.0, 0.0, 0.5, 1.0};
    cfg.gamma_box = Box::interval(-1.0, 1.0);
    cfg.gamma_grid = {31};
    cfg.target = Box::point1d(0.0);
    cfg.zeta.type = config::ZetaSpec::Type::Synthesized;
    cfg.epsilon = 0.4;
    cfg.horizons = {0.4, 0.8, 1.2, 1.6};
    cfg.dt = 4e-5;
    cfg.feedback.type = config::FeedbackSpec::Type::Synthesized;
    cfg.synthesis.alpha = 0.5;  // below the saturating equilibrium rate ~lambda
    cfg.sweep = {1e2, 1e5, 16};
    return cfg;
  }

  if (name == "chain-5.4") {
    // d = 2 keeps the replayed open-loop signals honest: the integrator block
    // is a single integrator, so the zero-order-hold recording bias stays
    // bounded instead of growing ballistically. The slow equilibrium sits at
    // x1 = lambda (k2/k1)^2 = 0.025 with x2 = -2 x1.
    cfg.system.type = config::SystemSpec::Type::Chain;
    cfg.system.chain.d = 2;
    cfg.system.chain.lambda = 0.1;
    cfg.system.chain.alpha0 = 0.0;
    cfg.system.chain.beta0 = 0.0;
    cfg.system.chain.gammas = {-1.0};
    cfg.system.chain.k1 = -8.0;
    cfg.system.chain.k2 = Eigen::RowVectorXd::Constant(1, -4.0);
    Vec lo(2), hi(2);
    lo << 0.05, -0.05;
    hi << 0.2, 0.05;
    cfg.gamma_box = Box(lo, hi);
    cfg.gamma_grid = {81, 1};  // spanning grid rides the slow x1 axis
    cfg.target = Box::point(Vec::Zero(2));
    cfg.zeta.type = config::ZetaSpec::Type::Synthesized;  // envelope fitted on the attractor
    cfg.epsilon = 0.1;
    cfg.horizons = {15.0, 20.0, 25.0, 30.0, 35.0};
    cfg.dt = 0.005;
    cfg.rho = 50.0;
    cfg.synthesis.alpha = 0.08;  // below the slow manifold rate lambda
    cfg.synthesis.fit_horizon = 40.0;
    return cfg;
  }

  throw ConfigError("demo", "unknown demo '" + name + "'");
}

}  // namespace stabent::demos
