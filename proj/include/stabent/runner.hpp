#pragma once

// Config-driven experiment runner: materializes a configuration (building the
// system, feedback law and envelope, running synthesis when requested), then
// executes one subcommand and writes CSV/JSON artifacts. Outputs are
// deterministic for a fixed config, and worker count never changes results.

#include "stabent/config.hpp"
#include "stabent/demos.hpp"
#include "stabent/io.hpp"

#include <iostream>

namespace stabent::runner {

struct Materialized {
  ControlSystem system;
  std::optional<feedback::FeedbackLaw> law;
  KLFunction zeta;
  GriddedSet gamma;
  TargetSet target;
  std::optional<models::SynthesisResult> synthesis;
  models::StiffStepping sim_step;  // stepping that resolves the closed loop
  std::optional<Vec> attractor;    // located attractor for the chain family

  Materialized() : zeta(KLFunction::exponential(1.0, 1.0)), target(Box::point1d(0.0)) {}
};

namespace detail {

inline models::SynthesisOptions synthesis_options(const config::ExperimentConfig& cfg, int jobs) {
  models::SynthesisOptions opts;
  opts.gain_start = cfg.synthesis.gain_start;
  opts.fit_horizon = cfg.synthesis.fit_horizon;
  opts.dive_window = cfg.synthesis.dive_window;
  opts.fit_grid = cfg.synthesis.fit_grid;
  opts.jobs = jobs;
  return opts;
}

// Locate the closed-loop attractor of the chain family by forward simulation
// from the initial box center, then fit the envelope constant empirically.
inline void materialize_chain_envelope(const config::ExperimentConfig& cfg, Materialized& mat,
                                       int jobs) {
  auto fb = mat.law->as_function();
  double settle = std::max(cfg.synthesis.fit_horizon, 40.0 / cfg.system.chain.lambda);
  auto n = static_cast<std::int64_t>(std::llround(settle / cfg.dt));
  settle = static_cast<double>(n) * cfg.dt;
  auto path = models::closed_loop_sampled(mat.system, fb, mat.gamma.box.center(), settle,
                                          models::StiffStepping::uniform(cfg.dt));
  Vec e = path.states.back();
  double residual = max_norm(mat.system.field(e, fb(e)));
  if (residual > 1e-6)
    throw SynthesisError("no attractor found for the chain loop: residual " +
                         format_double(residual) + " after t = " + format_double(settle));
  mat.attractor = e;
  auto fit = models::fit_overshoot_M(mat.system, fb, mat.gamma.points, cfg.synthesis.alpha, e,
                                     cfg.synthesis.fit_horizon,
                                     models::StiffStepping::uniform(cfg.dt), jobs);
  mat.zeta = KLFunction::exponential(cfg.synthesis.alpha, fit.big_m);
}

}  // namespace detail

inline Materialized materialize(const config::ExperimentConfig& cfg, int jobs) {
  Materialized mat;
  mat.gamma = make_grid(cfg.gamma_box, cfg.gamma_grid);
  mat.target = cfg.target;
  mat.sim_step = models::StiffStepping::uniform(cfg.dt);

  bool want_synthesis = cfg.feedback.type == config::FeedbackSpec::Type::Synthesized ||
                        cfg.zeta.type == config::ZetaSpec::Type::Synthesized;

  switch (cfg.system.type) {
    case config::SystemSpec::Type::Linear:
      mat.system = linear_system(cfg.system.a, cfg.system.b, cfg.rho);
      break;
    case config::SystemSpec::Type::Quadratic: {
      if (want_synthesis) {
        auto res = models::synthesize_quadratic(cfg.system.quad, cfg.epsilon, cfg.synthesis.alpha,
                                                mat.gamma, detail::synthesis_options(cfg, jobs));
        mat.system = models::quadratic_system(cfg.system.quad, res.control_range, res.rho);
        mat.law = models::quad_feedback_law(cfg.system.quad, res.gain_primary, res.rho);
        mat.zeta = res.envelope;
        mat.sim_step = res.stiff;
        mat.synthesis = std::move(res);
      } else {
        mat.system = models::quadratic_system(cfg.system.quad,
                                              Box::interval(-cfg.rho, cfg.rho), cfg.rho);
      }
      break;
    }
    case config::SystemSpec::Type::Cubic: {
      if (want_synthesis) {
        auto res = models::synthesize_pwl(cfg.system.cubic, cfg.epsilon, cfg.synthesis.alpha,
                                          mat.gamma, detail::synthesis_options(cfg, jobs));
        mat.system = models::cubic_system(cfg.system.cubic, res.control_range, res.rho);
        mat.law = feedback::FeedbackLaw::piecewise_linear(res.gain_primary, res.gain_secondary,
                                                          res.rho);
        mat.zeta = res.envelope;
        mat.sim_step = res.stiff;
        mat.synthesis = std::move(res);
      } else {
        mat.system =
            models::cubic_system(cfg.system.cubic, Box::interval(-cfg.rho, cfg.rho), cfg.rho);
      }
      break;
    }
    case config::SystemSpec::Type::Chain: {
      auto chain = models::chain_system(cfg.system.chain, cfg.rho);
      mat.system = std::move(chain.system);
      mat.law = std::move(chain.law);
      break;
    }
  }

  // explicit feedback overrides (or provides) the law
  switch (cfg.feedback.type) {
    case config::FeedbackSpec::Type::Linear:
      mat.law = feedback::FeedbackLaw::linear(cfg.feedback.k, cfg.rho);
      break;
    case config::FeedbackSpec::Type::Quadratic:
      mat.law = feedback::FeedbackLaw::quadratic(cfg.feedback.c1, cfg.feedback.c2, cfg.rho);
      break;
    case config::FeedbackSpec::Type::PiecewiseLinear:
      mat.law = feedback::FeedbackLaw::piecewise_linear(cfg.feedback.c1, cfg.feedback.c2, cfg.rho);
      break;
    case config::FeedbackSpec::Type::Synthesized:
    case config::FeedbackSpec::Type::None:
      break;
  }

  if (cfg.zeta.type == config::ZetaSpec::Type::Exponential) {
    mat.zeta = KLFunction::exponential(cfg.zeta.alpha, cfg.zeta.big_m);
  } else if (cfg.system.type == config::SystemSpec::Type::Chain) {
    if (!mat.law) throw ConfigError("feedback", "chain envelope fitting needs a feedback law");
    detail::materialize_chain_envelope(cfg, mat, jobs);
  } else if (!mat.synthesis) {
    throw ConfigError("zeta", "zeta.type synthesized needs a quadratic/cubic/chain system");
  }
  return mat;
}

// ---------------------------------------------------------------------------
// Candidate pool for the spanning runs

inline std::vector<spanning::Candidate> build_pool(const Materialized& mat,
                                                   const config::ExperimentConfig& cfg, double tau,
                                                   int jobs) {
  std::vector<std::function<Vec(const Vec&)>> feedbacks;
  if (cfg.candidates.use_feedback && mat.law) feedbacks.push_back(mat.law->as_function());
  int steps = cfg.candidates.control_steps > 0
                  ? cfg.candidates.control_steps
                  : static_cast<int>(std::llround(tau / cfg.dt));
  steps = std::max(steps, 1);
  double ctrl_step = tau / steps;

  // sub-step the closed-loop recording when the loop is stiffer than the
  // control step
  double dt_int = ctrl_step;
  if (!feedbacks.empty()) {
    Box region = mat.gamma.box;
    if (mat.synthesis) {
      for (const auto& eq : mat.synthesis->equilibria) {
        Vec loc = Vec::Constant(1, eq.location);
        region = Box(region.lo().cwiseMin(loc), region.hi().cwiseMax(loc));
      }
    }
    double lips = models::estimate_closed_loop_lipschitz(mat.system, feedbacks.front(), region);
    auto sub = static_cast<std::int64_t>(std::ceil(ctrl_step * lips));
    if (sub > 1) dt_int = ctrl_step / static_cast<double>(sub);
  }
  return spanning::build_candidates(mat.system, feedbacks, mat.gamma.points, tau, steps, dt_int,
                                    cfg.candidates.quant_levels, jobs);
}

// ---------------------------------------------------------------------------
// Subcommands. Each returns a process exit code and writes its artifacts
// under outdir.

namespace detail {

inline spanning::SpanningMode mode_of(const config::ExperimentConfig& cfg) {
  return spanning::SpanningMode(cfg.mode, cfg.epsilon, cfg.safety.sampling_inflation);
}

inline std::optional<double> spectral_oracle(const config::ExperimentConfig& cfg,
                                             const Materialized& mat) {
  if (cfg.system.type != config::SystemSpec::Type::Linear || !mat.zeta.is_exponential())
    return std::nullopt;
  return bounds::linear_spectral_entropy(cfg.system.a, mat.zeta.alpha());
}

}  // namespace detail

inline int run_entropy(const config::ExperimentConfig& cfg, const Materialized& mat,
                       const std::filesystem::path& out, int jobs, std::ostream& log) {
  if (cfg.horizons.size() < 3) throw ConfigError("horizons", "entropy needs >= 3 horizons");
  auto builder = [&](double tau) { return build_pool(mat, cfg, tau, jobs); };
  try {
    auto est = spanning::entropy_rate(mat.system, mat.gamma.points, builder, mat.zeta,
                                      detail::mode_of(cfg), mat.target, cfg.horizons, cfg.dt, jobs);
    io::write_file(out / "entropy.csv", spanning::entropy_csv(est));
    io::ordered_json j;
    j["name"] = cfg.name;
    j["estimate"] = io::to_json(est);
    if (auto oracle = detail::spectral_oracle(cfg, mat)) j["spectral_exact"] = *oracle;
    if (mat.synthesis) j["synthesis"] = io::to_json(*mat.synthesis);
    io::write_json(out / "entropy.json", j);
    log << "entropy " << cfg.name << ": rate " << format_double(est.rate) << ", rate_at_max "
        << format_double(est.rate_at_max) << ", counts " << est.counts.front() << ".."
        << est.counts.back() << "\n";
    return 0;
  } catch (const InfeasibleCoverError& e) {
    log << "entropy " << cfg.name << ": infeasible at tau " << format_double(e.horizon) << " ("
        << e.what() << ")\n";
    return 1;
  }
}

inline bounds::BoundReport assemble_bounds(const config::ExperimentConfig& cfg,
                                           const Materialized& mat, int jobs) {
  bounds::BoundReport report;
  report.epsilon = cfg.epsilon;
  report.zeta = mat.zeta.describe();
  report.gamma = cfg.gamma_box;
  report.lambda = cfg.target;
  report.lower_general = bounds::divergence_lower_bound(mat.system, mat.target, cfg.epsilon,
                                                        cfg.grid_res, cfg.safety.lower_margin,
                                                        jobs);
  report.upper_lipschitz =
      bounds::lipschitz_upper_bound(mat.system, cfg.gamma_box, mat.target, mat.zeta, cfg.epsilon,
                                    cfg.grid_res, cfg.safety.upper_inflation, jobs);
  if (mat.zeta.is_exponential()) {
    double alpha = mat.zeta.alpha();
    report.upper_exponential =
        bounds::exponential_upper_bound(mat.system, cfg.gamma_box, mat.target, alpha,
                                        mat.zeta.big_m(), cfg.grid_res,
                                        cfg.safety.upper_inflation, jobs);
    switch (cfg.system.type) {
      case config::SystemSpec::Type::Linear: {
        auto details = bounds::spectral_details(cfg.system.a, alpha);
        report.spectral_exact = details.value;
        report.boundary_ambiguous = details.boundary_ambiguous;
        report.lower_exponential = bounds::exponential_lower_bound_projected(cfg.system.a, alpha);
        break;
      }
      case config::SystemSpec::Type::Quadratic: {
        auto analytic = models::quad_exponential_lower(cfg.system.quad, alpha, cfg.epsilon,
                                                       mat.system.truncated_range());
        report.lower_exponential = analytic.value;
        break;
      }
      case config::SystemSpec::Type::Cubic: {
        auto analytic = models::cubic_exponential_lower(cfg.system.cubic, alpha, cfg.epsilon);
        if (!analytic.outside_published_signs) report.lower_exponential = analytic.value;
        break;
      }
      case config::SystemSpec::Type::Chain:
        break;  // no published exponential lower bound for the chain family
    }
  }
  return report;
}

inline int run_bounds(const config::ExperimentConfig& cfg, const Materialized& mat,
                      const std::filesystem::path& out, int jobs, std::ostream& log) {
  auto report = assemble_bounds(cfg, mat, jobs);
  io::write_json(out / "bounds.json", io::to_json(report));
  log << "bounds " << cfg.name << ": lower_general " << format_double(report.lower_general)
      << ", upper_lipschitz " << format_double(report.upper_lipschitz) << "\n";
  return 0;
}

inline int run_fb_entropy(const config::ExperimentConfig& cfg, const Materialized& mat,
                          const std::filesystem::path& out, int jobs, std::ostream& log) {
  if (!mat.law) throw ConfigError("feedback", "fb-entropy needs a feedback law");
  auto est = feedback::feedback_entropy_rate(mat.system, *mat.law, mat.gamma.points, mat.zeta,
                                             cfg.epsilon, cfg.horizons, cfg.dt, jobs);
  io::write_file(out / "fb_entropy.csv", spanning::entropy_csv(est));
  io::ordered_json j;
  j["name"] = cfg.name;
  j["estimate"] = io::to_json(est);
  io::write_json(out / "fb_entropy.json", j);
  log << "fb-entropy " << cfg.name << ": rate " << format_double(est.rate) << "\n";
  return 0;
}

inline int run_synth(const config::ExperimentConfig& cfg, const Materialized& mat,
                     const std::filesystem::path& out, int, std::ostream& log) {
  if (!mat.synthesis)
    throw ConfigError("feedback",
                      "synth needs feedback/zeta 'synthesized' on a quadratic or cubic system");
  io::write_json(out / "synthesis.json", io::to_json(*mat.synthesis));
  log << "synth " << cfg.name << ": gain " << format_double(mat.synthesis->gain_primary) << ", M "
      << format_double(mat.synthesis->big_m) << ", rho " << format_double(mat.synthesis->rho)
      << "\n";
  return 0;
}

inline int run_verify(const config::ExperimentConfig& cfg, const Materialized& mat,
                      const std::filesystem::path& out, int jobs, std::ostream& log) {
  if (!mat.law) throw ConfigError("feedback", "verify needs a feedback law");
  double horizon = cfg.sim_tau > 0.0 ? cfg.sim_tau : 20.0;
  auto report = models::verify_practical_stability(mat.system, mat.law->as_function(),
                                                   mat.gamma.points, mat.zeta, cfg.epsilon,
                                                   mat.target, horizon, mat.sim_step, jobs);
  io::ordered_json j = io::to_json(report);
  j["name"] = cfg.name;
  j["horizon"] = horizon;
  io::write_json(out / "verify.json", j);

  std::vector<std::string> header;
  for (int i = 0; i < mat.gamma.box.dim(); ++i) header.push_back("x0_" + std::to_string(i + 1));
  header.push_back("margin");
  header.push_back("argmin_time");
  io::Csv csv(header);
  for (std::size_t i = 0; i < report.points.size(); ++i) {
    std::vector<double> row;
    for (int c = 0; c < mat.gamma.box.dim(); ++c) row.push_back(mat.gamma.points[i][c]);
    row.push_back(report.points[i].margin);
    row.push_back(report.points[i].argmin_time);
    csv.row(row);
  }
  io::write_file(out / "margins.csv", csv.str());
  log << "verify " << cfg.name << ": " << (report.pass ? "pass" : "FAIL") << ", worst margin "
      << format_double(report.worst_margin) << "\n";
  return report.pass ? 0 : 1;
}

inline int run_sweep(const config::ExperimentConfig& cfg, const Materialized&,
                     const std::filesystem::path& out, int, std::ostream& log) {
  io::ordered_json j;
  j["name"] = cfg.name;
  if (cfg.system.type == config::SystemSpec::Type::Quadratic) {
    io::Csv csv({"q", "e", "jacobian"});
    std::vector<double> logq, loge;
    double last_rel_err = std::numeric_limits<double>::quiet_NaN();
    double step = std::log(cfg.sweep.to / cfg.sweep.from) / (cfg.sweep.points - 1);
    for (int i = 0; i < cfg.sweep.points; ++i) {
      double q = cfg.sweep.from * std::exp(step * i);
      auto c = models::cardano_coefficients(cfg.system.quad, q);
      if (c.discriminant <= 0.0) continue;
      double e = models::cardano_equilibrium(cfg.system.quad, q);
      double jac = models::quad_jacobian(cfg.system.quad, q, e);
      csv.row({q, e, jac});
      logq.push_back(std::log(q));
      loge.push_back(std::log(std::abs(e)));
      last_rel_err = std::abs(jac + 3.0 * cfg.system.quad.lambda) / (3.0 * cfg.system.quad.lambda);
    }
    io::write_file(out / "sweep.csv", csv.str());
    j["slope_log_e_vs_log_q"] = fit_slope(logq, loge);
    j["jacobian_limit_rel_err"] = last_rel_err;
    io::write_json(out / "sweep.json", j);
    log << "sweep " << cfg.name << ": slope " << format_double(fit_slope(logq, loge)) << "\n";
    return 0;
  }
  if (cfg.system.type == config::SystemSpec::Type::Cubic) {
    io::Csv csv({"k", "e1", "jacobian1", "e2", "jacobian2"});
    double sign = cfg.system.cubic.eta1 > 0 ? -1.0 : 1.0;
    std::vector<double> logk, loge;
    double step = std::log(cfg.sweep.to / cfg.sweep.from) / (cfg.sweep.points - 1);
    for (int i = 0; i < cfg.sweep.points; ++i) {
      double k = sign * cfg.sweep.from * std::exp(step * i);
      try {
        auto eq = models::pwl_equilibria(cfg.system.cubic, k, k);
        csv.row({k, eq[0].location, eq[0].jacobian, eq[1].location, eq[1].jacobian});
        logk.push_back(std::log(std::abs(k)));
        loge.push_back(std::log(std::abs(eq[0].location)));
      } catch (const DiscriminantError&) {
      }
    }
    io::write_file(out / "sweep.csv", csv.str());
    j["slope_log_e1_vs_log_k"] = fit_slope(logk, loge);
    io::write_json(out / "sweep.json", j);
    log << "sweep " << cfg.name << ": slope " << format_double(fit_slope(logk, loge)) << "\n";
    return 0;
  }
  throw ConfigError("system.type", "sweep needs a quadratic or cubic system");
}

inline int run_check42(const config::ExperimentConfig& cfg, const Materialized& mat,
                       const std::filesystem::path& out, int jobs, std::ostream& log) {
  if (!mat.law) throw ConfigError("feedback", "check42 needs a feedback law");
  try {
    auto report = feedback::proposition42_check(mat.system, *mat.law, mat.gamma.points, mat.zeta,
                                                cfg.epsilon, mat.target, cfg.horizons, cfg.dt,
                                                jobs);
    io::ordered_json j = io::to_json(report);
    j["name"] = cfg.name;
    io::write_json(out / "check42.json", j);
    log << "check42 " << cfg.name << ": spanning " << format_double(report.spanning_rate)
        << " vs feedback " << format_double(report.feedback_rate) << " -> "
        << (report.pass ? "pass" : "FAIL") << "\n";
    return report.pass ? 0 : 1;
  } catch (const feedback::Eps0ViolationError& e) {
    log << "check42 " << cfg.name << ": precondition violated at " << e.violations.size()
        << " grid point(s)\n";
    return 1;
  }
}

inline int run_simulate(const config::ExperimentConfig& cfg, const Materialized& mat,
                        const std::filesystem::path& out, int, std::ostream& log) {
  Vec x0 = cfg.x0.size() > 0 ? cfg.x0 : mat.gamma.box.center();
  if (x0.size() != mat.system.dim_state)
    throw ConfigError("x0", "x0 dimension must match the system");
  double tau = cfg.sim_tau > 0.0 ? cfg.sim_tau
                                 : (cfg.horizons.empty() ? 1.0 : cfg.horizons.back());
  Trajectory traj;
  ControlSignal signal;
  if (mat.law) {
    double lips = models::estimate_closed_loop_lipschitz(mat.system, mat.law->as_function(),
                                                         mat.gamma.box);
    auto sub = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(cfg.dt * lips)));
    double dt = cfg.dt / static_cast<double>(sub);
    auto pair = closed_loop(mat.system, mat.law->as_function(), x0, tau, dt, cfg.dt);
    traj = std::move(pair.first);
    signal = std::move(pair.second);
  } else {
    signal = ControlSignal::constant(Vec::Zero(mat.system.dim_control), tau, 1);
    traj = integrate(mat.system, x0, signal, tau, cfg.dt);
  }
  io::write_file(out / "trajectory.csv", io::trajectory_csv(traj, signal));
  io::ordered_json j;
  j["name"] = cfg.name;
  j["final_state"] = std::vector<double>(traj.final_state().data(),
                                         traj.final_state().data() + traj.final_state().size());
  j["final_dist_to_target"] = dist_to_target(traj.final_state(), mat.target);
  io::write_json(out / "summary.json", j);
  log << "simulate " << cfg.name << ": final distance "
      << format_double(dist_to_target(traj.final_state(), mat.target)) << "\n";
  return 0;
}

inline int run_plotdata(const config::ExperimentConfig& cfg, const Materialized& mat,
                        const std::filesystem::path& out, int jobs, std::ostream& log) {
  auto builder = [&](double tau) { return build_pool(mat, cfg, tau, jobs); };
  auto est = spanning::entropy_rate(mat.system, mat.gamma.points, builder, mat.zeta,
                                    detail::mode_of(cfg), mat.target, cfg.horizons, cfg.dt, jobs);
  io::Csv csv({"tau", "log_count"});
  for (std::size_t i = 0; i < est.horizons.size(); ++i)
    csv.row({est.horizons[i], std::log(static_cast<double>(est.counts[i]))});
  io::write_file(out / "plot.csv", csv.str());
  log << "plotdata " << cfg.name << ": " << est.horizons.size() << " rows\n";
  return 0;
}

// Dispatch. Materialization happens here so every subcommand sees the same
// derived objects.
inline int run(const std::string& subcommand, const config::ExperimentConfig& cfg,
               const std::string& outdir, int jobs, std::ostream& log = std::cout) {
  Materialized mat = materialize(cfg, jobs);
  std::filesystem::path out(outdir);
  std::filesystem::create_directories(out);
  if (subcommand == "simulate") return run_simulate(cfg, mat, out, jobs, log);
  if (subcommand == "entropy") return run_entropy(cfg, mat, out, jobs, log);
  if (subcommand == "bounds") return run_bounds(cfg, mat, out, jobs, log);
  if (subcommand == "fb-entropy") return run_fb_entropy(cfg, mat, out, jobs, log);
  if (subcommand == "synth") return run_synth(cfg, mat, out, jobs, log);
  if (subcommand == "verify") return run_verify(cfg, mat, out, jobs, log);
  if (subcommand == "sweep") return run_sweep(cfg, mat, out, jobs, log);
  if (subcommand == "check42") return run_check42(cfg, mat, out, jobs, log);
  if (subcommand == "plotdata") return run_plotdata(cfg, mat, out, jobs, log);
  throw ConfigError("subcommand", "unknown subcommand '" + subcommand + "'");
}

}  // namespace stabent::runner
