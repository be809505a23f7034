#pragma once

// Control systems x' = f(x,u), piecewise-constant control signals, KL decay
// envelopes and fixed-step RK4 trajectories. Everything here is immutable
// after construction and deterministic: identical inputs give bit-identical
// trajectories, which the spanning counts depend on.

#include "stabent/core.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <utility>

namespace stabent {

// ---------------------------------------------------------------------------
// KL-function: zeta(r, s), strictly increasing in r with zeta(0, s) = 0 and
// strictly decreasing to 0 in s. The exponential family e^{-alpha s} M r is
// the workhorse; a tabulated variant covers envelopes that are only known
// pointwise (bilinear interpolation preserves the monotonicity of the table).

class KLFunction {
 public:
  static KLFunction exponential(double alpha, double big_m) {
    if (alpha <= 0.0) throw PreconditionError("exponential KL-function needs alpha > 0");
    if (big_m < 1.0) throw PreconditionError("exponential KL-function needs M >= 1");
    KLFunction z;
    z.alpha_ = alpha;
    z.big_m_ = big_m;
    return z;
  }

  // values[i][j] = zeta(r_grid[i], s_grid[j]); r_grid[0] must be 0 with a zero row.
  static KLFunction tabulated(std::vector<double> r_grid, std::vector<double> s_grid,
                              std::vector<std::vector<double>> values) {
    if (r_grid.size() < 2 || s_grid.size() < 2) throw PreconditionError("tabulated KL-function needs a 2x2 grid");
    if (r_grid.front() != 0.0) throw PreconditionError("tabulated KL-function needs r_grid[0] == 0");
    if (values.size() != r_grid.size()) throw PreconditionError("tabulated KL-function: row count mismatch");
    for (const auto& row : values)
      if (row.size() != s_grid.size()) throw PreconditionError("tabulated KL-function: column count mismatch");
    for (double v : values.front())
      if (v != 0.0) throw PreconditionError("tabulated KL-function needs zeta(0, s) == 0");
    for (std::size_t i = 1; i < r_grid.size(); ++i) {
      if (r_grid[i] <= r_grid[i - 1]) throw PreconditionError("tabulated KL-function: r_grid not increasing");
      for (std::size_t j = 0; j < s_grid.size(); ++j)
        if (values[i][j] <= values[i - 1][j])
          throw PreconditionError("tabulated KL-function: values not increasing in r");
    }
    for (std::size_t j = 1; j < s_grid.size(); ++j) {
      if (s_grid[j] <= s_grid[j - 1]) throw PreconditionError("tabulated KL-function: s_grid not increasing");
      for (std::size_t i = 1; i < r_grid.size(); ++i)
        if (values[i][j] >= values[i][j - 1])
          throw PreconditionError("tabulated KL-function: values not decreasing in s");
    }
    KLFunction z;
    z.table_ = std::make_shared<Table>(Table{std::move(r_grid), std::move(s_grid), std::move(values)});
    return z;
  }

  double operator()(double r, double s) const {
    if (r < 0.0 || s < 0.0) throw PreconditionError("KL-function arguments must be nonnegative");
    if (r == 0.0) return 0.0;
    if (!table_) return scale_ * std::exp(-alpha_ * s) * big_m_ * r;
    return scale_ * table_->eval(r, s);
  }

  bool is_exponential() const { return table_ == nullptr; }
  double alpha() const {
    if (!is_exponential()) throw PreconditionError("alpha is only defined for the exponential family");
    return alpha_;
  }
  double big_m() const {
    if (!is_exponential()) throw PreconditionError("M is only defined for the exponential family");
    return scale_ * big_m_;
  }

  // factor * zeta, still a KL-function for factor > 0. Used for the doubled
  // envelope bookkeeping in the feedback reduction.
  KLFunction scaled(double factor) const {
    if (factor <= 0.0) throw PreconditionError("KL scale factor must be positive");
    KLFunction z = *this;
    z.scale_ *= factor;
    return z;
  }

  std::string describe() const {
    if (is_exponential())
      return "exp(alpha=" + format_double(alpha_) + ",M=" + format_double(big_m()) + ")";
    return "tabulated(scale=" + format_double(scale_) + ")";
  }

 private:
  struct Table {
    std::vector<double> r, s;
    std::vector<std::vector<double>> v;

    double eval(double rr, double ss) const {
      // clamp s beyond the table; extrapolate r linearly past the last segment
      ss = std::clamp(ss, s.front(), s.back());
      auto su = std::upper_bound(s.begin(), s.end(), ss);
      std::size_t j = su == s.begin() ? 0 : static_cast<std::size_t>(su - s.begin()) - 1;
      j = std::min(j, s.size() - 2);
      double ts = (ss - s[j]) / (s[j + 1] - s[j]);

      auto ru = std::upper_bound(r.begin(), r.end(), rr);
      std::size_t i = ru == r.begin() ? 0 : static_cast<std::size_t>(ru - r.begin()) - 1;
      i = std::min(i, r.size() - 2);
      double tr = (rr - r[i]) / (r[i + 1] - r[i]);  // > 1 beyond the table: linear continuation

      double lo = v[i][j] + ts * (v[i][j + 1] - v[i][j]);
      double hi = v[i + 1][j] + ts * (v[i + 1][j + 1] - v[i + 1][j]);
      return lo + tr * (hi - lo);
    }
  };

  KLFunction() = default;
  double alpha_ = 0.0;
  double big_m_ = 1.0;
  double scale_ = 1.0;
  std::shared_ptr<const Table> table_;
};

inline double kl_eval(const KLFunction& zeta, double r, double s) { return zeta(r, s); }

// ---------------------------------------------------------------------------
// Control system

struct ControlSystem {
  int dim_state = 0;
  int dim_control = 0;
  std::function<Vec(const Vec&, const Vec&)> field;     // f(x, u)
  std::function<Mat(const Vec&, const Vec&)> jacobian;  // df/dx (x, u), d x d
  Box control_range;          // U, possibly unbounded on some side
  double truncation_radius = std::numeric_limits<double>::infinity();  // rho
  std::string name;

  // U intersected with the box [-rho, rho]^m; all consumers use this range.
  Box truncated_range() const {
    Box k = Box::cube(dim_control, -truncation_radius, truncation_radius);
    return control_range.intersect(k);
  }
};

inline ControlSystem linear_system(const Mat& a, const Mat& b,
                                   double rho = std::numeric_limits<double>::infinity()) {
  if (a.rows() != a.cols()) throw PreconditionError("A must be square");
  if (b.rows() != a.rows()) throw PreconditionError("B row count must match A");
  ControlSystem sys;
  sys.dim_state = static_cast<int>(a.rows());
  sys.dim_control = static_cast<int>(b.cols());
  sys.field = [a, b](const Vec& x, const Vec& u) -> Vec { return a * x + b * u; };
  sys.jacobian = [a](const Vec&, const Vec&) -> Mat { return a; };
  int m = static_cast<int>(b.cols());
  sys.control_range = Box(Vec::Constant(m, -std::numeric_limits<double>::infinity()),
                          Vec::Constant(m, std::numeric_limits<double>::infinity()));
  sys.truncation_radius = rho;
  sys.name = "linear";
  return sys;
}

// div_x f(x, u) = tr df/dx.
inline double divergence(const ControlSystem& sys, const Vec& x, const Vec& u) {
  return sys.jacobian(x, u).trace();
}

// Operator norm induced by the max-norm: maximum absolute row sum.
inline double jacobian_norm(const ControlSystem& sys, const Vec& x, const Vec& u) {
  Mat j = sys.jacobian(x, u);
  return j.cwiseAbs().rowwise().sum().maxCoeff();
}

// ---------------------------------------------------------------------------
// Piecewise-constant control signal: value on [k step, (k+1) step) is values[k].

struct ControlSignal {
  double step = 0.0;
  std::vector<Vec> values;

  double horizon() const { return step * static_cast<double>(values.size()); }

  const Vec& at_index(std::size_t k) const {
    return values[std::min(k, values.size() - 1)];
  }

  static ControlSignal constant(const Vec& u, double step, std::size_t n) {
    return ControlSignal{step, std::vector<Vec>(n, u)};
  }

  bool operator==(const ControlSignal& other) const {
    if (step != other.step || values.size() != other.values.size()) return false;
    for (std::size_t i = 0; i < values.size(); ++i)
      if (values[i] != other.values[i]) return false;
    return true;
  }
};

struct Trajectory {
  double dt = 0.0;
  std::vector<double> times;
  std::vector<Vec> states;
  ControlSignal control;

  const Vec& origin() const { return states.front(); }
  const Vec& final_state() const { return states.back(); }
  double horizon() const { return times.back(); }
};

// ---------------------------------------------------------------------------
// Fixed-step RK4. Step counts are resolved by integer arithmetic so a control
// step is always an exact multiple of dt.

namespace detail {

inline std::int64_t exact_ratio(double whole, double part, const char* what) {
  double raw = whole / part;
  auto n = static_cast<std::int64_t>(std::llround(raw));
  if (n < 0 || std::abs(raw - static_cast<double>(n)) > 1e-9 * std::max(1.0, std::abs(raw)))
    throw PreconditionError(std::string(what) + " must be an integer multiple of dt");
  return n;
}

inline Vec rk4_step(const ControlSystem& sys, const Vec& x, const Vec& u, double dt) {
  Vec k1 = sys.field(x, u);
  Vec k2 = sys.field(x + 0.5 * dt * k1, u);
  Vec k3 = sys.field(x + 0.5 * dt * k2, u);
  Vec k4 = sys.field(x + dt * k3, u);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

inline void check_state(const Vec& x, double t) {
  if (!x.allFinite() || max_norm(x) > kBlowupLimit)
    throw BlowupError(t, "trajectory diverged at t = " + format_double(t));
}

}  // namespace detail

// phi(t, x0, u) on the dt-grid of [0, tau]. dt must divide both the control
// step and tau. Throws BlowupError when a coordinate passes kBlowupLimit.
inline Trajectory integrate(const ControlSystem& sys, const Vec& x0, const ControlSignal& u,
                            double tau, double dt) {
  if (dt <= 0.0) throw PreconditionError("integrate needs dt > 0");
  if (tau < 0.0) throw PreconditionError("integrate needs tau >= 0");
  if (!x0.allFinite()) throw PreconditionError("integrate needs a finite initial state");
  if (x0.size() != sys.dim_state) throw PreconditionError("initial state dimension mismatch");

  std::int64_t n_steps = detail::exact_ratio(tau, dt, "tau");
  std::int64_t per_ctrl = 1;
  if (n_steps > 0) {
    if (u.step <= 0.0) throw PreconditionError("control signal needs step > 0");
    per_ctrl = detail::exact_ratio(u.step, dt, "control step");
    if (per_ctrl == 0) throw PreconditionError("control step must be >= dt");
    if (u.horizon() + 1e-9 * std::max(1.0, tau) < tau)
      throw PreconditionError("control signal shorter than the integration horizon");
    Box range = sys.truncated_range();
    for (std::size_t k = 0; k < u.values.size(); ++k)
      if (!range.contains(u.values[k]))
        throw RangeViolationError(static_cast<double>(k) * u.step, u.values[k],
                                  "control value " + std::to_string(k) +
                                      " outside the truncated control range");
  }

  Trajectory traj;
  traj.dt = dt;
  traj.control = u;
  traj.times.reserve(static_cast<std::size_t>(n_steps) + 1);
  traj.states.reserve(static_cast<std::size_t>(n_steps) + 1);
  traj.times.push_back(0.0);
  traj.states.push_back(x0);

  Vec x = x0;
  for (std::int64_t i = 0; i < n_steps; ++i) {
    const Vec& uv = u.at_index(static_cast<std::size_t>(i / per_ctrl));
    x = detail::rk4_step(sys, x, uv, dt);
    double t = static_cast<double>(i + 1) * dt;
    detail::check_state(x, t);
    traj.times.push_back(t);
    traj.states.push_back(x);
  }
  return traj;
}

// Integrates x' = f(x, k(x)) and records the open-loop signal u(t) = k(psi(t))
// sampled at control_step (default dt). Recorded values must lie inside the
// truncated control range.
inline std::pair<Trajectory, ControlSignal> closed_loop(
    const ControlSystem& sys, const std::function<Vec(const Vec&)>& feedback, const Vec& x0,
    double tau, double dt, double control_step = 0.0) {
  if (dt <= 0.0) throw PreconditionError("closed_loop needs dt > 0");
  if (control_step == 0.0) control_step = dt;
  std::int64_t n_steps = detail::exact_ratio(tau, dt, "tau");
  std::int64_t per_ctrl = detail::exact_ratio(control_step, dt, "control step");
  if (per_ctrl == 0) throw PreconditionError("control step must be >= dt");
  if (x0.size() != sys.dim_state) throw PreconditionError("initial state dimension mismatch");

  Box range = sys.truncated_range();
  auto record = [&](const Vec& x, double t) -> Vec {
    Vec uv = feedback(x);
    if (uv.size() != sys.dim_control) throw PreconditionError("feedback dimension mismatch");
    if (!range.contains(uv))
      throw RangeViolationError(t, uv,
                                "feedback value outside the truncated control range at t = " +
                                    format_double(t));
    return uv;
  };

  Trajectory traj;
  traj.dt = dt;
  traj.times.push_back(0.0);
  traj.states.push_back(x0);
  ControlSignal signal;
  signal.step = control_step;

  auto closed_field = [&](const Vec& x) -> Vec { return sys.field(x, feedback(x)); };
  Vec x = x0;
  for (std::int64_t i = 0; i < n_steps; ++i) {
    if (i % per_ctrl == 0) signal.values.push_back(record(x, static_cast<double>(i) * dt));
    Vec k1 = closed_field(x);
    Vec k2 = closed_field(x + 0.5 * dt * k1);
    Vec k3 = closed_field(x + 0.5 * dt * k2);
    Vec k4 = closed_field(x + dt * k3);
    x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    double t = static_cast<double>(i + 1) * dt;
    detail::check_state(x, t);
    traj.times.push_back(t);
    traj.states.push_back(x);
  }
  if (n_steps == 0 && tau == 0.0) signal.values.push_back(record(x0, 0.0));
  traj.control = signal;
  return {std::move(traj), std::move(signal)};
}

}  // namespace stabent
