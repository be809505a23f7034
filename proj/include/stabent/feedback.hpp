#pragma once

// Feedback entropy: covers of Gamma by seed points whose recorded open-loop
// controls shadow every nearby start. A seed y covers x0 at horizon tau when
//
//   ||x0 - y|| < eps   and
//   ||phi(t, x0, u_y) - phi(t, y, u_y)|| <= zeta(||x0 - y|| + eps, t)
//
// for all sample times, with u_y(t) = k(psi(t, y; k)) the control recorded
// along the closed loop from y. Both trajectories are simulated open loop
// under the same recorded signal.

#include "stabent/bounds.hpp"
#include "stabent/spanning.hpp"

namespace stabent::feedback {

// ---------------------------------------------------------------------------
// Feedback laws

class FeedbackLaw {
 public:
  enum class Kind { Linear, Quadratic, PiecewiseLinear, Custom };

  static FeedbackLaw linear(Mat k, double rho = std::numeric_limits<double>::infinity()) {
    FeedbackLaw law;
    law.kind_ = Kind::Linear;
    law.k_matrix_ = std::move(k);
    law.dim_control_ = static_cast<int>(law.k_matrix_.rows());
    law.range_check_ = rho;
    return law;
  }

  // u = k x + q x^2, scalar systems only.
  static FeedbackLaw quadratic(double k, double q,
                               double rho = std::numeric_limits<double>::infinity()) {
    FeedbackLaw law;
    law.kind_ = Kind::Quadratic;
    law.c1_ = k;
    law.c2_ = q;
    law.dim_control_ = 1;
    law.range_check_ = rho;
    return law;
  }

  // u = k1 x for x >= 0, k2 x for x < 0, scalar systems only.
  static FeedbackLaw piecewise_linear(double k1, double k2,
                                      double rho = std::numeric_limits<double>::infinity()) {
    FeedbackLaw law;
    law.kind_ = Kind::PiecewiseLinear;
    law.c1_ = k1;
    law.c2_ = k2;
    law.dim_control_ = 1;
    law.range_check_ = rho;
    return law;
  }

  static FeedbackLaw custom(std::function<Vec(const Vec&)> fn, int dim_control,
                            double rho = std::numeric_limits<double>::infinity()) {
    FeedbackLaw law;
    law.kind_ = Kind::Custom;
    law.custom_ = std::move(fn);
    law.dim_control_ = dim_control;
    law.range_check_ = rho;
    return law;
  }

  Vec operator()(const Vec& x) const {
    switch (kind_) {
      case Kind::Linear:
        return k_matrix_ * x;
      case Kind::Quadratic:
        return Vec::Constant(1, c1_ * x[0] + c2_ * x[0] * x[0]);
      case Kind::PiecewiseLinear:
        return Vec::Constant(1, (x[0] >= 0.0 ? c1_ : c2_) * x[0]);
      case Kind::Custom:
        return custom_(x);
    }
    throw Error("unreachable feedback kind");
  }

  std::function<Vec(const Vec&)> as_function() const {
    FeedbackLaw copy = *this;
    return [copy](const Vec& x) { return copy(x); };
  }

  Kind kind() const { return kind_; }
  int dim_control() const { return dim_control_; }
  double range_check() const { return range_check_; }
  const Mat& gain_matrix() const { return k_matrix_; }
  std::pair<double, double> scalar_gains() const { return {c1_, c2_}; }

 private:
  Kind kind_ = Kind::Custom;
  Mat k_matrix_;
  double c1_ = 0.0, c2_ = 0.0;
  int dim_control_ = 0;
  double range_check_ = std::numeric_limits<double>::infinity();
  std::function<Vec(const Vec&)> custom_;
};

// ---------------------------------------------------------------------------

struct FeedbackCoverReport {
  spanning::SpanningResult cover;
  // How rejected (seed, point) pairs were rejected: by the eps-ball
  // constraint or by the envelope. Shows which constraint binds.
  std::size_t ball_rejections = 0;
  std::size_t envelope_rejections = 0;
};

namespace detail {

struct FeedbackCoverData {
  std::vector<ControlSignal> signals;            // recorded from closed loops, one per seed
  std::vector<std::vector<Vec>> seed_paths;      // open-loop replay from each seed
  // viol[j][i]: first sample time where seed j fails to cover point i (+inf if none)
  std::vector<std::vector<double>> viol;
  std::vector<std::vector<char>> ball_reject;
};

// Seeds are the grid points themselves; the grid must resolve the eps-ball.
inline void validate_grid_spacing(const std::vector<Vec>& grid, double eps) {
  if (grid.size() < 2) return;
  // nearest-neighbour spacing along the first two points is the grid pitch in
  // row-major order; a full pairwise scan is overkill here
  double pitch = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < grid.size(); ++i)
    pitch = std::min(pitch, max_norm(grid[i] - grid[i - 1]));
  if (pitch >= eps)
    throw PreconditionError(
        "gamma grid pitch " + format_double(pitch) + " is not finer than the cover ball radius " +
        format_double(eps));
}

inline FeedbackCoverData feedback_cover_data(const ControlSystem& sys, const FeedbackLaw& law,
                                             const std::vector<Vec>& grid, const KLFunction& zeta,
                                             double eps, double tau, double dt, int jobs) {
  if (eps <= 0.0) throw PreconditionError("feedback cover needs eps > 0");
  validate_grid_spacing(grid, eps);
  FeedbackCoverData data;
  const std::size_t n = grid.size();
  data.signals.resize(n);
  data.seed_paths.resize(n);
  auto fb = law.as_function();

  parallel_for(n, jobs, [&](std::size_t j) {
    auto [traj, signal] = closed_loop(sys, fb, grid[j], tau, dt, dt);
    (void)traj;
    Trajectory replay = integrate(sys, grid[j], signal, tau, dt);
    data.seed_paths[j] = std::move(replay.states);
    data.signals[j] = std::move(signal);
  });

  data.viol.assign(n, std::vector<double>(n, 0.0));
  data.ball_reject.assign(n, std::vector<char>(n, 0));
  parallel_for(n * n, jobs, [&](std::size_t k) {
    std::size_t j = k / n;  // seed
    std::size_t i = k % n;  // covered point
    double base = max_norm(grid[i] - grid[j]);
    if (base >= eps) {
      data.viol[j][i] = 0.0;
      data.ball_reject[j][i] = 1;
      return;
    }
    const auto& ref = data.seed_paths[j];
    const ControlSignal& u = data.signals[j];
    std::int64_t n_steps = stabent::detail::exact_ratio(tau, dt, "tau");
    Vec x = grid[i];
    double viol = std::numeric_limits<double>::infinity();
    for (std::int64_t s = 0; s < n_steps; ++s) {
      const Vec& uv = u.at_index(static_cast<std::size_t>(s));
      x = stabent::detail::rk4_step(sys, x, uv, dt);
      double t = static_cast<double>(s + 1) * dt;
      if (!x.allFinite() || max_norm(x) > kBlowupLimit ||
          max_norm(x - ref[static_cast<std::size_t>(s + 1)]) > zeta(base + eps, t)) {
        viol = t;
        break;
      }
    }
    data.viol[j][i] = viol;
  });
  return data;
}

inline FeedbackCoverReport cover_at(const FeedbackCoverData& data, double tau, double dt,
                                    std::size_t n) {
  spanning::detail::CoverProblem prob;
  prob.n_points = n;
  prob.covers.resize(n);
  FeedbackCoverReport report;
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      if (data.viol[j][i] > tau + 0.5 * dt) {
        prob.covers[j].push_back(static_cast<int>(i));
      } else if (data.ball_reject[j][i]) {
        ++report.ball_rejections;
      } else {
        ++report.envelope_rejections;
      }
    }
  }
  report.cover = spanning::detail::select_cover(prob, tau);
  return report;
}

}  // namespace detail

// Minimal-found number of seeds E subset of the grid covering all of it.
inline FeedbackCoverReport feedback_spanning_count(const ControlSystem& sys,
                                                   const FeedbackLaw& law,
                                                   const std::vector<Vec>& gamma_grid,
                                                   const KLFunction& zeta, double eps, double tau,
                                                   double dt, int jobs = 1) {
  auto data = detail::feedback_cover_data(sys, law, gamma_grid, zeta, eps, tau, dt, jobs);
  return detail::cover_at(data, tau, dt, gamma_grid.size());
}

// Growth rate of the seed counts over increasing horizons.
inline spanning::EntropyEstimate feedback_entropy_rate(const ControlSystem& sys,
                                                       const FeedbackLaw& law,
                                                       const std::vector<Vec>& gamma_grid,
                                                       const KLFunction& zeta, double eps,
                                                       const std::vector<double>& horizons,
                                                       double dt, int jobs = 1) {
  if (horizons.size() < 3) throw PreconditionError("feedback_entropy_rate needs >= 3 horizons");
  for (std::size_t i = 1; i < horizons.size(); ++i)
    if (horizons[i] <= horizons[i - 1]) throw PreconditionError("horizons must be increasing");
  auto data = detail::feedback_cover_data(sys, law, gamma_grid, zeta, eps, horizons.back(), dt, jobs);

  spanning::EntropyEstimate est;
  est.horizons = horizons;
  est.grid_size = gamma_grid.size();
  for (double tau : horizons) {
    auto rep = detail::cover_at(data, tau, dt, gamma_grid.size());
    est.counts.push_back(rep.cover.count);
    est.methods.push_back(rep.cover.method);
  }
  est.rate = spanning::fit_entropy_rate(horizons, est.counts, est.grid_size);
  est.rate_at_max = std::log(static_cast<double>(est.counts.back())) / horizons.back();
  return est;
}

// ---------------------------------------------------------------------------
// Feedback-to-spanning reduction: the strict spanning rate with doubled
// envelope and tolerance is bounded by the feedback entropy rate.

struct Eps0ViolationError : Error {
  std::vector<int> violations;
  Eps0ViolationError(std::vector<int> v, const std::string& what)
      : Error(what), violations(std::move(v)) {}
};

struct Prop42Report {
  spanning::EntropyEstimate spanning_estimate;  // strict, 2 eps, 2 zeta
  spanning::EntropyEstimate feedback_estimate;  // eps, zeta
  double spanning_rate = 0.0;
  double feedback_rate = 0.0;
  bool pass = false;
};

inline constexpr double kProp42Slack = 1.10;

inline Prop42Report proposition42_check(const ControlSystem& sys, const FeedbackLaw& law,
                                        const std::vector<Vec>& gamma_grid,
                                        const KLFunction& zeta, double eps,
                                        const TargetSet& target,
                                        const std::vector<double>& horizons, double dt,
                                        int jobs = 1) {
  double tau_max = horizons.empty() ? 0.0 : horizons.back();
  auto fb = law.as_function();

  // precondition: the closed loop itself satisfies the strict envelope
  // d(psi(t), Lambda) <= zeta(d(x0, Lambda) + eps, t) on the grid
  std::vector<char> ok(gamma_grid.size(), 1);
  parallel_for(gamma_grid.size(), jobs, [&](std::size_t i) {
    double d0 = dist_to_target(gamma_grid[i], target);
    try {
      auto [traj, signal] = closed_loop(sys, fb, gamma_grid[i], tau_max, dt, dt);
      (void)signal;
      for (std::size_t k = 0; k < traj.states.size(); ++k) {
        if (dist_to_target(traj.states[k], target) > zeta(d0 + eps, traj.times[k])) {
          ok[i] = 0;
          return;
        }
      }
    } catch (const Error&) {
      ok[i] = 0;
    }
  });
  std::vector<int> bad;
  for (std::size_t i = 0; i < ok.size(); ++i)
    if (!ok[i]) bad.push_back(static_cast<int>(i));
  if (!bad.empty())
    throw Eps0ViolationError(bad, "closed loop violates the strict envelope at " +
                                      std::to_string(bad.size()) + " grid point(s)");

  Prop42Report report;
  spanning::SpanningMode strict2(spanning::Mode::Strict, 2.0 * eps);
  auto builder = [&](double tau) {
    return spanning::build_candidates(sys, {fb}, gamma_grid, tau,
                                      std::max<int>(1, static_cast<int>(std::llround(tau / dt))),
                                      dt, 0, jobs);
  };
  report.spanning_estimate = spanning::entropy_rate(sys, gamma_grid, builder, zeta.scaled(2.0),
                                                    strict2, target, horizons, dt, jobs);
  report.feedback_estimate =
      feedback_entropy_rate(sys, law, gamma_grid, zeta, eps, horizons, dt, jobs);
  report.spanning_rate = report.spanning_estimate.rate;
  report.feedback_rate = report.feedback_estimate.rate;
  report.pass = report.spanning_rate <= report.feedback_rate * kProp42Slack + 1e-9;
  return report;
}

// ---------------------------------------------------------------------------

// Exact minimal number of closed max-norm balls of the given radius covering
// the box: product over axes of ceil(side / (2 radius)).
inline long long ball_cover_count(const Box& gamma, double radius) {
  if (radius <= 0.0) throw PreconditionError("ball_cover_count needs radius > 0");
  long long total = 1;
  for (int i = 0; i < gamma.dim(); ++i) {
    double side = gamma.hi()[i] - gamma.lo()[i];
    double cells = side / (2.0 * radius);
    long long n = static_cast<long long>(std::ceil(cells - 1e-12));
    total *= std::max<long long>(1, n);
  }
  return total;
}

// -alpha - max Re eig(A + BK); positive means every closed-loop eigenvalue
// clears the -alpha line.
inline double pole_margin(const Mat& a, const Mat& b, const Mat& k, double alpha) {
  Mat closed = a + b * k;
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& ev : bounds::eigenvalues_of(closed)) worst = std::max(worst, ev.real());
  return -alpha - worst;
}

}  // namespace stabent::feedback
