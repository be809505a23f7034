#pragma once

// The model zoo: a scalar system stabilizable only practically by quadratic
// feedback, a scalar cubic variant handled by piecewise-linear feedback, and
// a d-dimensional extension through a chain of integrators. Synthesis grows
// the gains geometrically until the nontrivial equilibria sit close enough to
// the origin and decay fast enough, then fits the overshoot constant of the
// exponential envelope empirically.

#include "stabent/feedback.hpp"

#include <array>

namespace stabent::models {

// ---------------------------------------------------------------------------
// Parameter sets

// x' = lambda x + alpha0 x^2 + beta0 x u + gamma0 u^2
struct QuadraticParams {
  double lambda = 1.0;
  double alpha0 = 0.0;
  double beta0 = 0.0;
  double gamma0 = -1.0;

  void validate() const {
    if (lambda <= 0.0) throw PreconditionError("quadratic model needs lambda > 0");
    if (gamma0 == 0.0) throw PreconditionError("quadratic model needs gamma0 != 0");
  }
};

// x' = lambda x + alpha0 x^2 + beta0 x u + gamma0 u^2
//        + alpha1 x^3 + beta1 x^2 u + gamma1 x u^2 + eta1 u^3
struct CubicParams {
  double lambda = 1.0;
  double alpha0 = 0.0;
  double beta0 = 0.0;
  double gamma0 = 1.0;
  double alpha1 = 0.0;
  double beta1 = 0.0;
  double gamma1 = 0.0;
  double eta1 = 1.0;

  void validate() const {
    if (lambda <= 0.0) throw PreconditionError("cubic model needs lambda > 0");
    if (gamma0 == 0.0) throw PreconditionError("cubic model needs gamma0 != 0");
    if (eta1 == 0.0) throw PreconditionError("cubic model needs eta1 != 0");
  }
};

// x1' = lambda x1 + alpha0 x1^2 + beta0 x1 x2 + sum_{j>=2} gamma_j xj^2,
// z' = A2 z + B2 u with z = (x2, ..., xd), stabilized by u = k1 x1 + K2 z.
struct ChainParams {
  int d = 2;
  double lambda = 0.1;
  double alpha0 = 0.0;
  double beta0 = 0.0;
  std::vector<double> gammas;  // gamma_2 .. gamma_d, size d - 1
  double k1 = -8.0;
  Eigen::RowVectorXd k2;       // 1 x (d - 1)

  void validate() const {
    if (d < 2) throw PreconditionError("chain model needs d >= 2");
    if (lambda <= 0.0) throw PreconditionError("chain model needs lambda > 0");
    if (static_cast<int>(gammas.size()) != d - 1)
      throw PreconditionError("chain model needs gamma_2..gamma_d (d - 1 values)");
    if (gammas[0] == 0.0) throw PreconditionError("chain model needs gamma_2 != 0");
    if (k2.cols() != d - 1) throw PreconditionError("chain gain K2 must be 1 x (d - 1)");
  }
};

// ---------------------------------------------------------------------------
// System builders

inline ControlSystem quadratic_system(const QuadraticParams& p,
                                      Box control_range = Box::interval(
                                          -std::numeric_limits<double>::infinity(),
                                          std::numeric_limits<double>::infinity()),
                                      double rho = std::numeric_limits<double>::infinity()) {
  p.validate();
  ControlSystem sys;
  sys.dim_state = 1;
  sys.dim_control = 1;
  sys.field = [p](const Vec& x, const Vec& u) -> Vec {
    double xv = x[0], uv = u[0];
    return Vec::Constant(1, p.lambda * xv + p.alpha0 * xv * xv + p.beta0 * xv * uv +
                                p.gamma0 * uv * uv);
  };
  sys.jacobian = [p](const Vec& x, const Vec& u) -> Mat {
    return Mat::Constant(1, 1, p.lambda + 2.0 * p.alpha0 * x[0] + p.beta0 * u[0]);
  };
  sys.control_range = std::move(control_range);
  sys.truncation_radius = rho;
  sys.name = "quadratic";
  return sys;
}

inline ControlSystem cubic_system(const CubicParams& p,
                                  Box control_range = Box::interval(
                                      -std::numeric_limits<double>::infinity(),
                                      std::numeric_limits<double>::infinity()),
                                  double rho = std::numeric_limits<double>::infinity()) {
  p.validate();
  ControlSystem sys;
  sys.dim_state = 1;
  sys.dim_control = 1;
  sys.field = [p](const Vec& x, const Vec& u) -> Vec {
    double xv = x[0], uv = u[0];
    double v = p.lambda * xv + p.alpha0 * xv * xv + p.beta0 * xv * uv + p.gamma0 * uv * uv +
               p.alpha1 * xv * xv * xv + p.beta1 * xv * xv * uv + p.gamma1 * xv * uv * uv +
               p.eta1 * uv * uv * uv;
    return Vec::Constant(1, v);
  };
  sys.jacobian = [p](const Vec& x, const Vec& u) -> Mat {
    double xv = x[0], uv = u[0];
    return Mat::Constant(1, 1,
                         p.lambda + 2.0 * p.alpha0 * xv + p.beta0 * uv +
                             3.0 * p.alpha1 * xv * xv + 2.0 * p.beta1 * xv * uv +
                             p.gamma1 * uv * uv);
  };
  sys.control_range = std::move(control_range);
  sys.truncation_radius = rho;
  sys.name = "cubic";
  return sys;
}

struct ChainSystem {
  ControlSystem system;
  feedback::FeedbackLaw law;  // linear, gain [k1, K2]
  Mat a2, b2;
};

inline ChainSystem chain_system(const ChainParams& p,
                                double rho = std::numeric_limits<double>::infinity()) {
  p.validate();
  const int d = p.d;
  Mat a2 = Mat::Zero(d - 1, d - 1);
  for (int i = 0; i + 1 < d - 1; ++i) a2(i, i + 1) = 1.0;
  Mat b2 = Mat::Zero(d - 1, 1);
  b2(d - 2, 0) = 1.0;
  Mat k2 = p.k2;
  if (feedback::pole_margin(a2, b2, k2, 0.0) <= 0.0)
    throw PreconditionError("chain model needs A2 + B2 K2 stable");

  ControlSystem sys;
  sys.dim_state = d;
  sys.dim_control = 1;
  sys.field = [p, d](const Vec& x, const Vec& u) -> Vec {
    Vec dx(d);
    double head = p.lambda * x[0] + p.alpha0 * x[0] * x[0] + p.beta0 * x[0] * x[1];
    for (int j = 1; j < d; ++j) head += p.gammas[static_cast<std::size_t>(j - 1)] * x[j] * x[j];
    dx[0] = head;
    for (int i = 1; i < d - 1; ++i) dx[i] = x[i + 1];
    dx[d - 1] = u[0];
    return dx;
  };
  sys.jacobian = [p, d](const Vec& x, const Vec&) -> Mat {
    Mat j = Mat::Zero(d, d);
    j(0, 0) = p.lambda + 2.0 * p.alpha0 * x[0] + p.beta0 * x[1];
    j(0, 1) = p.beta0 * x[0] + 2.0 * p.gammas[0] * x[1];
    for (int c = 2; c < d; ++c) j(0, c) = 2.0 * p.gammas[static_cast<std::size_t>(c - 1)] * x[c];
    for (int r = 1; r < d - 1; ++r) j(r, r + 1) = 1.0;
    return j;
  };
  sys.control_range = Box::interval(-std::numeric_limits<double>::infinity(),
                                    std::numeric_limits<double>::infinity());
  sys.truncation_radius = rho;
  sys.name = "chain";

  Mat k_full(1, d);
  k_full(0, 0) = p.k1;
  for (int i = 1; i < d; ++i) k_full(0, i) = p.k2(0, i - 1);
  return ChainSystem{std::move(sys), feedback::FeedbackLaw::linear(k_full, rho), std::move(a2),
                     std::move(b2)};
}

// ---------------------------------------------------------------------------
// Quadratic feedback synthesis via the reduced-cubic equilibrium

// The linear gain that removes the quadratic term of the equilibrium
// polynomial: beta0 + 2 gamma0 k = 0.
inline double quad_feedback_k(const QuadraticParams& p) { return -p.beta0 / (2.0 * p.gamma0); }

struct CardanoCoefficients {
  double a = 0.0;  // reduced cubic x^3 + 3 a x + b = 0
  double b = 0.0;
  double discriminant = 0.0;  // 4 a^3 + b^2
};

inline CardanoCoefficients cardano_coefficients(const QuadraticParams& p, double q) {
  p.validate();
  if (q == 0.0) throw PreconditionError("cardano_equilibrium needs q != 0");
  CardanoCoefficients c;
  c.a = (4.0 * p.alpha0 * p.gamma0 - p.beta0 * p.beta0) / (12.0 * p.gamma0 * p.gamma0 * q * q);
  c.b = p.lambda / (p.gamma0 * q * q);
  c.discriminant = 4.0 * c.a * c.a * c.a + c.b * c.b;
  return c;
}

// Unique real root of x^3 + ((4 a0 g0 - b0^2) / (4 g0^2 q^2)) x + lambda / (g0 q^2) = 0,
// the nontrivial closed-loop equilibrium e(q) for k = -beta0 / (2 gamma0).
// std::cbrt keeps the cube roots of negative arguments real. The root is
// formed as u - a/u with u the larger-magnitude cube root, which avoids the
// cancellation of adding two nearly opposite cube roots when a > 0; one
// Newton step polishes the last bits.
inline double cardano_equilibrium(const QuadraticParams& p, double q) {
  CardanoCoefficients c = cardano_coefficients(p, q);
  if (c.discriminant <= 0.0)
    throw DiscriminantError("cardano discriminant " + format_double(c.discriminant) +
                            " <= 0; enlarge |q|");
  double s = 0.5 * std::sqrt(c.discriminant);
  double hb = -0.5 * c.b;
  double u = c.b <= 0.0 ? std::cbrt(hb + s) : std::cbrt(hb - s);
  double e = u - c.a / u;  // the partner cube root is -a/u since u v = -a
  double slope = 3.0 * e * e + 3.0 * c.a;
  if (std::abs(slope) > 1e-8 * std::max(1.0, std::abs(c.a)))
    e -= (e * e * e + 3.0 * c.a * e + c.b) / slope;
  return e;
}

// Closed-loop Jacobian J(x) = lambda + ((4 a0 g0 - b0^2) / (2 g0)) x + 4 g0 q^2 x^3.
inline double quad_jacobian(const QuadraticParams& p, double q, double x) {
  p.validate();
  double mid = (4.0 * p.alpha0 * p.gamma0 - p.beta0 * p.beta0) / (2.0 * p.gamma0);
  return p.lambda + mid * x + 4.0 * p.gamma0 * q * q * x * x * x;
}

// ---------------------------------------------------------------------------
// Piecewise-linear equilibria of the cubic model

// Delta_{0,i} = alpha0 + beta0 k + gamma0 k^2, Delta_{1,i} = alpha1 + beta1 k
// + gamma1 k^2 + eta1 k^3 for the gain k acting on one side.
inline std::pair<double, double> pwl_deltas(const CubicParams& p, double k) {
  return {p.alpha0 + p.beta0 * k + p.gamma0 * k * k,
          p.alpha1 + p.beta1 * k + p.gamma1 * k * k + p.eta1 * k * k * k};
}

struct Equilibrium {
  double location = 0.0;
  double jacobian = 0.0;
};

// Solves lambda + Delta0 x + Delta1 x^2 = 0 per side and picks the stable
// pair e2(k2) < 0 < e1(k1); both Jacobians come out negative. Requires
// sign(ki) = -sign(eta1) and positive discriminants.
inline std::array<Equilibrium, 2> pwl_equilibria(const CubicParams& p, double k1, double k2) {
  p.validate();
  double want = -(p.eta1 > 0 ? 1.0 : -1.0);
  if ((k1 > 0 ? 1.0 : -1.0) != want || (k2 > 0 ? 1.0 : -1.0) != want)
    throw PreconditionError("pwl gains need sign(ki) = -sign(eta1)");

  auto solve_side = [&](double k, bool positive_side) -> Equilibrium {
    auto [d0, d1] = pwl_deltas(p, k);
    double disc = d0 * d0 - 4.0 * p.lambda * d1;
    if (disc <= 0.0 || d1 == 0.0)
      throw DiscriminantError("pwl equilibrium discriminant not positive; enlarge |k|");
    double root = std::sqrt(disc);
    // x^- = (-d0 - root) / (2 d1) on the positive side, x^+ on the negative side
    double e = positive_side ? (-d0 - root) / (2.0 * d1) : (-d0 + root) / (2.0 * d1);
    if ((positive_side && e <= 0.0) || (!positive_side && e >= 0.0))
      throw DiscriminantError("pwl equilibrium has the wrong sign; enlarge |k|");
    double jac = positive_side ? -e * root : e * root;
    return Equilibrium{e, jac};
  };

  return {solve_side(k1, true), solve_side(k2, false)};
}

inline feedback::FeedbackLaw quad_feedback_law(const QuadraticParams& p, double q,
                                               double rho = std::numeric_limits<double>::infinity()) {
  return feedback::FeedbackLaw::quadratic(quad_feedback_k(p), q, rho);
}

// ---------------------------------------------------------------------------
// Stiff closed loops. The synthesized gains make |J| of order gain^2 during
// the initial dive toward the equilibrium, while the tail near the
// equilibrium is mild. Simulations run in one or two fixed-step phases: a
// fine step inside an initial window, a coarse step after it. Both phases are
// fixed-step RK4, so runs stay deterministic.

struct StiffStepping {
  double dt = 0.01;       // step inside the window (and everywhere if window = 0)
  double window = 0.0;    // duration integrated at the fine step
  double dt_tail = 0.01;  // step after the window

  static StiffStepping uniform(double dt) { return StiffStepping{dt, 0.0, dt}; }
};

struct SampledPath {
  std::vector<double> times;
  std::vector<Vec> states;
  double max_control = 0.0;
};

// Integrates the closed loop at the phase step sizes but records at most
// ~kMaxSamplesPerPhase states per phase (plus the endpoints). Control values
// are range-checked at every step boundary; the control peak covers every
// step, not just the recorded ones.
inline constexpr std::size_t kMaxSamplesPerPhase = 4096;

inline SampledPath closed_loop_sampled(const ControlSystem& sys,
                                       const std::function<Vec(const Vec&)>& fb, const Vec& x0,
                                       double t_horizon, const StiffStepping& step) {
  SampledPath path;
  Box range = sys.truncated_range();
  Vec x = x0;
  path.times.push_back(0.0);
  path.states.push_back(x);

  auto run_phase = [&](double t0, double horizon, double dt_raw) {
    if (horizon <= 0.0) return;
    auto n = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(horizon / dt_raw)));
    double dt = horizon / static_cast<double>(n);
    auto stride = static_cast<std::int64_t>((n + kMaxSamplesPerPhase - 1) / kMaxSamplesPerPhase);
    auto closed_field = [&](const Vec& y) { return sys.field(y, fb(y)); };
    for (std::int64_t i = 0; i < n; ++i) {
      double t = t0 + static_cast<double>(i) * dt;
      Vec u = fb(x);
      if (!range.contains(u))
        throw RangeViolationError(t, u,
                                  "feedback value outside the truncated control range at t = " +
                                      format_double(t));
      path.max_control = std::max(path.max_control, max_norm(u));
      Vec k1 = closed_field(x);
      Vec k2 = closed_field(x + 0.5 * dt * k1);
      Vec k3 = closed_field(x + 0.5 * dt * k2);
      Vec k4 = closed_field(x + dt * k3);
      x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      double t_next = t0 + static_cast<double>(i + 1) * dt;
      stabent::detail::check_state(x, t_next);
      if ((i + 1) % stride == 0 || i + 1 == n) {
        path.times.push_back(t_next);
        path.states.push_back(x);
      }
    }
  };

  double window = std::clamp(step.window, 0.0, t_horizon);
  if (window > 0.0) {
    run_phase(0.0, window, step.dt);
    run_phase(window, t_horizon - window, step.dt_tail);
  } else {
    run_phase(0.0, t_horizon, step.dt);
  }
  return path;
}

// ---------------------------------------------------------------------------
// Empirical overshoot constant

struct OvershootFit {
  double big_m = 1.0;    // inflated by 5 percent, >= 1
  double raw = 1.0;      // the measured supremum before clamping/inflation
  bool flagged = false;  // raw exceeded 1e6 (alpha likely above the true decay rate)
  double max_control = 0.0;
};

inline constexpr double kOvershootInflation = 1.05;
inline constexpr double kOvershootFlagLimit = 1e6;

// M_hat = sup over the grid and sample times of e^{alpha t} |psi(t) - e| / |x0 - e|,
// clamped below by 1 and inflated. Seeds equal to the equilibrium are skipped,
// and the ratio stops accumulating once the distance falls below a relative
// noise floor: past that point integrator roundoff dominates and the
// exponential weight would only amplify noise. A trajectory that ends farther
// from e than it started is a non-attraction error.
inline constexpr double kOvershootNoiseFloor = 1e-10;

inline OvershootFit fit_overshoot_M(const ControlSystem& sys,
                                    const std::function<Vec(const Vec&)>& fb,
                                    const std::vector<Vec>& gamma_grid, double alpha,
                                    const Vec& equilibrium, double t_horizon,
                                    const StiffStepping& step, int jobs = 1) {
  if (alpha <= 0.0) throw PreconditionError("fit_overshoot_M needs alpha > 0");
  std::vector<double> ratios(gamma_grid.size(), 0.0);
  std::vector<double> controls(gamma_grid.size(), 0.0);
  std::vector<int> divergent(gamma_grid.size(), 0);
  parallel_for(gamma_grid.size(), jobs, [&](std::size_t i) {
    double dist0 = max_norm(gamma_grid[i] - equilibrium);
    SampledPath path = closed_loop_sampled(sys, fb, gamma_grid[i], t_horizon, step);
    controls[i] = path.max_control;
    if (dist0 == 0.0) return;
    double floor = kOvershootNoiseFloor * dist0;
    double worst = 0.0;
    for (std::size_t k = 0; k < path.states.size(); ++k) {
      double dist = max_norm(path.states[k] - equilibrium);
      if (dist < floor) continue;
      worst = std::max(worst, std::exp(alpha * path.times[k]) * dist / dist0);
    }
    ratios[i] = worst;
    if (max_norm(path.states.back() - equilibrium) > dist0) divergent[i] = 1;
  });
  for (std::size_t i = 0; i < divergent.size(); ++i)
    if (divergent[i])
      throw NonAttractionError("trajectory from grid point " + std::to_string(i) +
                               " did not approach the equilibrium within T");
  OvershootFit fit;
  for (double r : ratios) fit.raw = std::max(fit.raw, r);
  fit.raw = std::max(fit.raw, 1.0);
  fit.big_m = kOvershootInflation * fit.raw;
  fit.flagged = fit.raw > kOvershootFlagLimit;
  for (double u : controls) fit.max_control = std::max(fit.max_control, u);
  return fit;
}

inline OvershootFit fit_overshoot_M(const ControlSystem& sys,
                                    const std::function<Vec(const Vec&)>& fb,
                                    const std::vector<Vec>& gamma_grid, double alpha,
                                    const Vec& equilibrium, double t_horizon, double dt,
                                    int jobs = 1) {
  return fit_overshoot_M(sys, fb, gamma_grid, alpha, equilibrium, t_horizon,
                         StiffStepping::uniform(dt), jobs);
}

// ---------------------------------------------------------------------------
// Step-size choice for the stiff closed loops (gains make |J| large). The
// integrator stays fixed-step; the step is fixed per run from a Lipschitz
// estimate of the closed-loop field over the region of interest.

inline double estimate_closed_loop_lipschitz(const ControlSystem& sys,
                                             const std::function<Vec(const Vec&)>& fb,
                                             const Box& region, int samples_per_axis = 9) {
  auto closed = [&](const Vec& x) { return sys.field(x, fb(x)); };
  double worst = 0.0;
  for (const Vec& x : grid_points(region, samples_per_axis)) {
    Mat j(sys.dim_state, sys.dim_state);
    for (int c = 0; c < sys.dim_state; ++c) {
      double h = 1e-6 * std::max(1.0, std::abs(x[c]));
      Vec xp = x, xm = x;
      xp[c] += h;
      xm[c] -= h;
      j.col(c) = (closed(xp) - closed(xm)) / (2.0 * h);
    }
    worst = std::max(worst, j.cwiseAbs().rowwise().sum().maxCoeff());
  }
  return worst;
}

// Largest dt <= dt_cap that divides t_horizon and keeps dt * L comfortably
// inside the RK4 stability region.
inline double stable_dt(double lipschitz, double t_horizon, double dt_cap) {
  double dt = dt_cap;
  if (lipschitz > 0.0) dt = std::min(dt, 1.0 / lipschitz);
  auto n = static_cast<std::int64_t>(std::ceil(t_horizon / dt - 1e-9));
  n = std::max<std::int64_t>(n, 1);
  return t_horizon / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Synthesis

struct SynthesisOptions {
  double gain_start = 4.0;  // documented start; |gain| doubles each iteration
  int max_doublings = 60;
  double fit_horizon = 20.0;
  double dt_cap = 0.01;
  double dive_window = 0.25;  // initial fine-step window of the two-phase fit
  int fit_grid = 41;
  int jobs = 1;
};

struct SynthesisResult {
  double gain_primary = 0.0;    // q for quadratic, k1 for piecewise linear
  double gain_secondary = 0.0;  // k for quadratic, k2 for piecewise linear
  std::vector<Equilibrium> equilibria;
  KLFunction envelope;  // Exponential(alpha, M(eps)), M fitted empirically
  double alpha = 0.0;
  double big_m = 1.0;
  double rho = 0.0;  // control truncation radius, 10 percent above the observed peak
  double epsilon = 0.0;
  double fit_horizon = 0.0;
  StiffStepping stiff;  // stepping that resolved the loop; reuse for verification
  double dt_used = 0.0;  // fine step of the fit
  int iterations = 0;
  bool range_one_sided = true;
  Box control_range;  // U_eps as actually used
  bool overshoot_flagged = false;

  SynthesisResult() : envelope(KLFunction::exponential(1.0, 1.0)) {}
};

inline constexpr double kEquilibriumResidualTol = 1e-10;

namespace detail {

inline Box one_sided_range(double umin, double umax, double rho, bool* one_sided) {
  if (umin >= 0.0) {
    *one_sided = true;
    return Box::interval(0.0, rho);
  }
  if (umax <= 0.0) {
    *one_sided = true;
    return Box::interval(-rho, 0.0);
  }
  *one_sided = false;
  return Box::interval(-rho, rho);
}

// Two-phase overshoot fit with retries: an unstable tail step shows up as
// blow-up (or apparent non-attraction), in which case the fine window doubles
// and the tail step halves before giving up.
inline std::optional<std::pair<OvershootFit, StiffStepping>> fit_with_retries(
    const ControlSystem& sys, const std::function<Vec(const Vec&)>& fb,
    const std::vector<Vec>& grid, double alpha, const Vec& equilibrium, double l_dive,
    double l_tail, const SynthesisOptions& opts) {
  StiffStepping step;
  step.dt = std::min(opts.dt_cap, 1.0 / std::max(l_dive, 1.0));
  step.window = std::min(opts.dive_window, opts.fit_horizon);
  step.dt_tail = std::min(opts.dt_cap, 1.0 / std::max(l_tail, 1.0));
  for (int attempt = 0; attempt < 4; ++attempt) {
    try {
      OvershootFit fit =
          fit_overshoot_M(sys, fb, grid, alpha, equilibrium, opts.fit_horizon, step, opts.jobs);
      return std::make_pair(fit, step);
    } catch (const BlowupError&) {
    } catch (const NonAttractionError&) {
    }
    step.window = std::min(2.0 * step.window, opts.fit_horizon);
    step.dt_tail *= 0.5;
  }
  return std::nullopt;
}

}  // namespace detail

// Quadratic feedback u = k x + q x^2 with k = -beta0 / (2 gamma0), |q| grown
// geometrically until the equilibrium e(q) is close enough to the origin and
// decays faster than alpha. Initial states on the wrong side of the origin
// for the sign of gamma0 are rejected up front.
inline SynthesisResult synthesize_quadratic(const QuadraticParams& p, double eps, double alpha,
                                            const GriddedSet& gamma,
                                            const SynthesisOptions& opts = {}) {
  p.validate();
  if (eps <= 0.0) throw PreconditionError("synthesize_quadratic needs eps > 0");
  if (alpha <= 0.0 || alpha >= 3.0 * p.lambda)
    throw PreconditionError("synthesize_quadratic needs alpha in (0, 3 lambda)");
  if (p.gamma0 < 0.0 && gamma.box.lo()[0] <= 0.0)
    throw PreconditionError("gamma0 < 0 needs initial values in a compact subset of (0, inf)");
  if (p.gamma0 > 0.0 && gamma.box.hi()[0] >= 0.0)
    throw PreconditionError("gamma0 > 0 needs initial values in a compact subset of (-inf, 0)");

  double k = quad_feedback_k(p);
  std::vector<Vec> fit_grid = grid_points(gamma.box, opts.fit_grid);

  std::string last_diag = "no admissible q reached";
  for (int iter = 0; iter < opts.max_doublings; ++iter) {
    double q = opts.gain_start * std::pow(2.0, iter);
    CardanoCoefficients c = cardano_coefficients(p, q);
    if (c.discriminant <= 0.0) {
      last_diag = "D <= 0 at q = " + format_double(q);
      continue;
    }
    double e = cardano_equilibrium(p, q);
    if ((p.gamma0 < 0.0 && e <= 0.0) || (p.gamma0 > 0.0 && e >= 0.0)) {
      last_diag = "equilibrium on the wrong side at q = " + format_double(q);
      continue;
    }
    double jac = quad_jacobian(p, q, e);
    if (jac >= -alpha) {
      last_diag = "J(e(q)) = " + format_double(jac) + " >= -alpha at q = " + format_double(q);
      continue;
    }
    // M >= 1.05 after inflation, so this q cannot qualify; skip the fit
    if (std::abs(e) >= eps / (2.0 * kOvershootInflation)) {
      last_diag = "|e(q)| = " + format_double(std::abs(e)) + " too large at q = " +
                  format_double(q);
      continue;
    }

    // unconstrained range while fitting; rho is measured afterwards
    ControlSystem sys = quadratic_system(p);
    auto law = quad_feedback_law(p, q);
    auto fb = law.as_function();
    Vec e_vec = Vec::Constant(1, e);
    // scalar monotone flow: trajectories stay inside the hull of Gamma and e
    Box dive_region = Box::interval(1.02 * std::min({gamma.box.lo()[0], e, 0.0}),
                                    1.02 * std::max({gamma.box.hi()[0], e, 0.0}));
    Box tail_region = Box::interval(std::min(-4.0 * std::abs(e), 4.0 * std::min(e, 0.0)),
                                    std::max(4.0 * std::abs(e), 4.0 * std::max(e, 0.0)));
    auto fitted = detail::fit_with_retries(
        sys, fb, fit_grid, alpha, e_vec, estimate_closed_loop_lipschitz(sys, fb, dive_region),
        estimate_closed_loop_lipschitz(sys, fb, tail_region), opts);
    if (!fitted) {
      last_diag = "grid not attracted to e(q) at q = " + format_double(q);
      continue;
    }
    auto [fit, stepping] = *fitted;
    if (std::abs(e) >= eps / (2.0 * fit.big_m)) {
      last_diag = "|e(q)| = " + format_double(std::abs(e)) + " not below eps / (2 M) at q = " +
                  format_double(q);
      continue;
    }

    SynthesisResult res;
    res.gain_primary = q;
    res.gain_secondary = k;
    res.equilibria = {Equilibrium{0.0, p.lambda}, Equilibrium{e, jac}};
    res.alpha = alpha;
    res.big_m = fit.big_m;
    res.envelope = KLFunction::exponential(alpha, fit.big_m);
    res.rho = 1.1 * fit.max_control;
    res.epsilon = eps;
    res.fit_horizon = opts.fit_horizon;
    res.stiff = stepping;
    res.dt_used = stepping.dt;
    res.iterations = iter + 1;
    res.overshoot_flagged = fit.flagged;
    double k_at_lo = k * gamma.box.lo()[0] + q * gamma.box.lo()[0] * gamma.box.lo()[0];
    double k_at_hi = k * gamma.box.hi()[0] + q * gamma.box.hi()[0] * gamma.box.hi()[0];
    res.control_range = detail::one_sided_range(std::min({k_at_lo, k_at_hi, 0.0}),
                                                std::max({k_at_lo, k_at_hi, 0.0}), res.rho,
                                                &res.range_one_sided);
    return res;
  }
  throw SynthesisError("quadratic synthesis failed after " + std::to_string(opts.max_doublings) +
                       " doublings: " + last_diag);
}

// Piecewise-linear feedback with sign(ki) = -sign(eta1); |k1| = |k2| grows
// geometrically until both equilibria are within eps / (2 M) of the origin
// and both Jacobians clear -alpha.
inline SynthesisResult synthesize_pwl(const CubicParams& p, double eps, double alpha,
                                      const GriddedSet& gamma, const SynthesisOptions& opts = {}) {
  p.validate();
  if (eps <= 0.0) throw PreconditionError("synthesize_pwl needs eps > 0");
  if (alpha <= 0.0) throw PreconditionError("synthesize_pwl needs alpha > 0");

  double sign_k = -(p.eta1 > 0 ? 1.0 : -1.0);
  std::vector<Vec> fit_grid = grid_points(gamma.box, opts.fit_grid);
  std::vector<Vec> plus_grid, minus_grid;
  for (const auto& x : fit_grid) {
    if (x[0] > 0.0) plus_grid.push_back(x);
    if (x[0] < 0.0) minus_grid.push_back(x);
  }

  std::string last_diag = "no admissible gain reached";
  for (int iter = 0; iter < opts.max_doublings; ++iter) {
    double k1 = sign_k * opts.gain_start * std::pow(2.0, iter);
    double k2 = k1;
    std::array<Equilibrium, 2> eq;
    try {
      eq = pwl_equilibria(p, k1, k2);
    } catch (const DiscriminantError& err) {
      last_diag = err.what();
      continue;
    }
    if (eq[0].jacobian >= -alpha || eq[1].jacobian >= -alpha) {
      last_diag = "equilibrium Jacobians above -alpha at k = " + format_double(k1);
      continue;
    }
    if (std::abs(eq[0].location) >= eps / (2.0 * kOvershootInflation) ||
        std::abs(eq[1].location) >= eps / (2.0 * kOvershootInflation)) {
      last_diag = "equilibria too large at k = " + format_double(k1);
      continue;
    }

    ControlSystem sys = cubic_system(p);
    auto law = feedback::FeedbackLaw::piecewise_linear(k1, k2);
    auto fb = law.as_function();
    Box dive_region = Box::interval(1.02 * std::min(gamma.box.lo()[0], eq[1].location),
                                    1.02 * std::max(gamma.box.hi()[0], eq[0].location));
    Box tail_region = Box::interval(4.0 * eq[1].location, 4.0 * eq[0].location);
    double l_dive = estimate_closed_loop_lipschitz(sys, fb, dive_region);
    double l_tail = estimate_closed_loop_lipschitz(sys, fb, tail_region);

    OvershootFit fit_plus, fit_minus;
    StiffStepping stepping = StiffStepping::uniform(opts.dt_cap);
    bool fit_ok = true;
    if (!plus_grid.empty()) {
      auto fitted = detail::fit_with_retries(sys, fb, plus_grid, alpha,
                                             Vec::Constant(1, eq[0].location), l_dive, l_tail, opts);
      if (fitted) {
        fit_plus = fitted->first;
        stepping = fitted->second;
      } else {
        fit_ok = false;
      }
    }
    if (fit_ok && !minus_grid.empty()) {
      auto fitted = detail::fit_with_retries(sys, fb, minus_grid, alpha,
                                             Vec::Constant(1, eq[1].location), l_dive, l_tail, opts);
      if (fitted) {
        fit_minus = fitted->first;
        stepping = fitted->second;
      } else {
        fit_ok = false;
      }
    }
    if (!fit_ok) {
      last_diag = "grid not attracted at k = " + format_double(k1);
      continue;
    }
    double big_m = std::max(fit_plus.big_m, fit_minus.big_m);
    if (std::abs(eq[0].location) >= eps / (2.0 * big_m) ||
        std::abs(eq[1].location) >= eps / (2.0 * big_m)) {
      last_diag = "equilibria not within eps / (2 M) at k = " + format_double(k1);
      continue;
    }

    SynthesisResult res;
    res.gain_primary = k1;
    res.gain_secondary = k2;
    res.equilibria = {Equilibrium{0.0, p.lambda}, eq[0], eq[1]};
    res.alpha = alpha;
    res.big_m = big_m;
    res.envelope = KLFunction::exponential(alpha, big_m);
    res.rho = 1.1 * std::max(fit_plus.max_control, fit_minus.max_control);
    res.epsilon = eps;
    res.fit_horizon = opts.fit_horizon;
    res.stiff = stepping;
    res.dt_used = stepping.dt;
    res.iterations = iter + 1;
    res.overshoot_flagged = fit_plus.flagged || fit_minus.flagged;
    res.range_one_sided = false;
    res.control_range = Box::interval(-res.rho, res.rho);
    return res;
  }
  throw SynthesisError("pwl synthesis failed after " + std::to_string(opts.max_doublings) +
                       " doublings: " + last_diag);
}

// ---------------------------------------------------------------------------
// Practical-stability verification: d(psi(t), Lambda) <= zeta(d(x0, Lambda), t) + eps
// on [0, T], reported as the worst margin per grid point.

struct VerifyPointReport {
  double margin = 0.0;
  double argmin_time = 0.0;
  Vec argmin_state;
  bool blew_up = false;
};

struct VerifyReport {
  bool pass = false;
  double worst_margin = 0.0;
  int worst_index = -1;
  std::vector<VerifyPointReport> points;
};

inline VerifyReport verify_practical_stability(const ControlSystem& sys,
                                               const std::function<Vec(const Vec&)>& fb,
                                               const std::vector<Vec>& gamma_grid,
                                               const KLFunction& zeta_eps, double eps,
                                               const TargetSet& target, double t_horizon,
                                               const StiffStepping& step, int jobs = 1) {
  VerifyReport report;
  report.points.resize(gamma_grid.size());
  parallel_for(gamma_grid.size(), jobs, [&](std::size_t i) {
    VerifyPointReport& pr = report.points[i];
    double d0 = dist_to_target(gamma_grid[i], target);
    try {
      SampledPath path = closed_loop_sampled(sys, fb, gamma_grid[i], t_horizon, step);
      pr.margin = std::numeric_limits<double>::infinity();
      for (std::size_t s = 0; s < path.states.size(); ++s) {
        double m = zeta_eps(d0, path.times[s]) + eps - dist_to_target(path.states[s], target);
        if (m < pr.margin) {
          pr.margin = m;
          pr.argmin_time = path.times[s];
          pr.argmin_state = path.states[s];
        }
      }
    } catch (const BlowupError& b) {
      pr.margin = -std::numeric_limits<double>::infinity();
      pr.argmin_time = b.time;
      pr.blew_up = true;
    }
  });
  report.pass = true;
  report.worst_margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < report.points.size(); ++i) {
    if (report.points[i].margin < report.worst_margin) {
      report.worst_margin = report.points[i].margin;
      report.worst_index = static_cast<int>(i);
    }
    if (report.points[i].margin < 0.0) report.pass = false;
  }
  return report;
}

inline VerifyReport verify_practical_stability(const ControlSystem& sys,
                                               const std::function<Vec(const Vec&)>& fb,
                                               const std::vector<Vec>& gamma_grid,
                                               const KLFunction& zeta_eps, double eps,
                                               const TargetSet& target, double t_horizon,
                                               double dt, int jobs = 1) {
  return verify_practical_stability(sys, fb, gamma_grid, zeta_eps, eps, target, t_horizon,
                                    StiffStepping::uniform(dt), jobs);
}

// ---------------------------------------------------------------------------
// Forward-simulation attractor search for the chain family. The quadratic
// head admits a nontrivial equilibrium on one side of the origin only (the
// side is fixed by sign(gamma_2)); the probe from the other side diverges and
// is reported as such rather than guessed around.

struct ChainAttractorReport {
  std::optional<Vec> positive_side;
  std::optional<Vec> negative_side;
  std::string diagnostics;
};

inline ChainAttractorReport locate_chain_attractors(const ChainSystem& chain, double probe,
                                                    double t_horizon, double dt) {
  ChainAttractorReport report;
  auto fb = chain.law.as_function();
  int d = chain.system.dim_state;
  auto try_side = [&](double x1) -> std::optional<Vec> {
    Vec x0 = Vec::Zero(d);
    x0[0] = x1;
    try {
      auto path = closed_loop_sampled(chain.system, fb, x0, t_horizon,
                                      StiffStepping::uniform(dt));
      Vec e = path.states.back();
      double residual = max_norm(chain.system.field(e, fb(e)));
      if (residual > 1e-6) {
        report.diagnostics += "probe from x1 = " + format_double(x1) +
                              " did not settle (field residual " + format_double(residual) +
                              "); ";
        return std::nullopt;
      }
      return e;
    } catch (const Error& err) {
      report.diagnostics +=
          "probe from x1 = " + format_double(x1) + " diverged (" + err.what() + "); ";
      return std::nullopt;
    }
  };
  report.positive_side = try_side(probe);
  report.negative_side = try_side(-probe);
  return report;
}

// ---------------------------------------------------------------------------
// Analytic bound values for the model zoo, used both in reports and as
// oracles for the grid optimizer.

// min over |x| <= eps, u in range of lambda + 2 alpha0 x + beta0 u.
inline double quad_divergence_min(const QuadraticParams& p, double eps, const Box& range) {
  double min_u = std::min(p.beta0 * range.lo()[0], p.beta0 * range.hi()[0]);
  return p.lambda - 2.0 * std::abs(p.alpha0) * eps + min_u;
}

// alpha + lambda - 3 |alpha0| eps + min beta0 u; the extra |alpha0| eps pays
// for approximating the unbounded control range by compact truncations.
struct AnalyticBound {
  double value = 0.0;
  bool outside_published_signs = false;
};

inline AnalyticBound quad_exponential_lower(const QuadraticParams& p, double alpha, double eps,
                                            const Box& range) {
  AnalyticBound b;
  double min_u = std::min(p.beta0 * range.lo()[0], p.beta0 * range.hi()[0]);
  b.value = alpha + p.lambda - 3.0 * std::abs(p.alpha0) * eps + min_u;
  b.outside_published_signs = p.beta0 * p.gamma0 > 0.0;
  return b;
}

// alpha + lambda - 3 |alpha0| eps - 3 |alpha1| eps^2 - (|beta0| + 2 |beta1| eps)^2 / (4 gamma1),
// valid for gamma1 > 0 with the full real line as nominal control range.
inline AnalyticBound cubic_exponential_lower(const CubicParams& p, double alpha, double eps) {
  AnalyticBound b;
  b.outside_published_signs = p.gamma1 <= 0.0;
  double peak = std::abs(p.beta0) + 2.0 * std::abs(p.beta1) * eps;
  b.value = alpha + p.lambda - 3.0 * std::abs(p.alpha0) * eps -
            3.0 * std::abs(p.alpha1) * eps * eps -
            (b.outside_published_signs ? 0.0 : peak * peak / (4.0 * p.gamma1));
  return b;
}

// min over |x| <= eps, u in range of the cubic divergence
// lambda + 2 a0 x + b0 u + 3 a1 x^2 + 2 b1 x u + g1 u^2, computed by scanning
// x at the extremes and minimizing the u-parabola in closed form.
inline double cubic_divergence_min(const CubicParams& p, double eps, const Box& range) {
  double best = std::numeric_limits<double>::infinity();
  for (double x : {-eps, 0.0, eps}) {
    double cu = p.beta0 + 2.0 * p.beta1 * x;  // coefficient of u
    double cuu = p.gamma1;                    // coefficient of u^2
    double base = p.lambda + 2.0 * p.alpha0 * x + 3.0 * p.alpha1 * x * x;
    double lo = range.lo()[0], hi = range.hi()[0];
    double m = std::min(base + cu * lo + cuu * lo * lo, base + cu * hi + cuu * hi * hi);
    if (cuu > 0.0) {
      double ustar = -cu / (2.0 * cuu);
      if (ustar > lo && ustar < hi) m = std::min(m, base + cu * ustar + cuu * ustar * ustar);
    }
    best = std::min(best, m);
  }
  return best;
}

}  // namespace stabent::models
