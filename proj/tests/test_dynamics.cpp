#include "stabent/dynamics.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <random>

using namespace stabent;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

ControlSystem scalar_linear(double a, double b = 1.0) {
  return linear_system(Mat::Constant(1, 1, a), Mat::Constant(1, 1, b));
}

Vec v1(double x) { return Vec::Constant(1, x); }

}  // namespace

TEST_CASE("integrate matches closed-form linear solutions") {
  // x' = -x, x(0) = 1, u = 0: x(1) = e^{-1}
  auto sys = scalar_linear(-1.0, 0.0);
  auto u = ControlSignal::constant(v1(0.0), 1.0, 1);
  auto traj = integrate(sys, v1(1.0), u, 1.0, 1e-3);
  CHECK_THAT(traj.final_state()[0], WithinAbs(std::exp(-1.0), 1e-6));
  CHECK(traj.states.size() == 1001);
  CHECK(traj.origin()[0] == 1.0);

  // x' = x + u, x(0) = 0, u = 1: x(1) = e - 1
  auto sys2 = scalar_linear(1.0);
  auto u2 = ControlSignal::constant(v1(1.0), 1.0, 1);
  auto traj2 = integrate(sys2, v1(0.0), u2, 1.0, 1e-3);
  CHECK_THAT(traj2.final_state()[0], WithinAbs(std::exp(1.0) - 1.0, 1e-6));
}

TEST_CASE("zero-horizon trajectory is the initial point") {
  auto sys = scalar_linear(2.0);
  auto u = ControlSignal::constant(v1(0.0), 1.0, 1);
  auto traj = integrate(sys, v1(0.7), u, 0.0, 0.1);
  REQUIRE(traj.states.size() == 1);
  CHECK(traj.states[0][0] == 0.7);
}

TEST_CASE("RK4 error shrinks by at least 12x per dt halving") {
  auto sys = scalar_linear(-1.0, 0.0);
  auto u = ControlSignal::constant(v1(0.0), 1.0, 1);
  double exact = std::exp(-1.0);
  double prev_err = 0.0;
  for (int k = 0; k < 3; ++k) {
    double dt = 0.1 / std::pow(2.0, k);
    auto traj = integrate(sys, v1(1.0), u, 1.0, dt);
    double err = std::abs(traj.final_state()[0] - exact);
    if (k > 0) CHECK(prev_err / err >= 12.0);
    prev_err = err;
  }
}

TEST_CASE("blow-up raises a divergence error with the blow-up time") {
  // x' = x^2 from 1 escapes at t = 1
  ControlSystem sys;
  sys.dim_state = sys.dim_control = 1;
  sys.field = [](const Vec& x, const Vec&) { return Vec::Constant(1, x[0] * x[0]); };
  sys.jacobian = [](const Vec& x, const Vec&) { return Mat::Constant(1, 1, 2.0 * x[0]); };
  sys.control_range = Box::interval(-1.0, 1.0);
  auto u = ControlSignal::constant(v1(0.0), 2.0, 1);
  try {
    integrate(sys, v1(1.0), u, 2.0, 1e-3);
    FAIL("expected BlowupError");
  } catch (const BlowupError& e) {
    CHECK(e.time > 0.9);
    CHECK(e.time < 1.5);
  }
}

TEST_CASE("preconditions are enforced") {
  auto sys = scalar_linear(1.0);
  auto u = ControlSignal::constant(v1(0.0), 0.3, 4);
  CHECK_THROWS_AS(integrate(sys, v1(0.0), u, 1.0, 0.2), PreconditionError);      // dt !| step
  CHECK_THROWS_AS(integrate(sys, v1(0.0), u, 1.05, 0.1), PreconditionError);     // dt !| tau
  CHECK_THROWS_AS(integrate(sys, v1(0.0), u, 2.0, 0.1), PreconditionError);      // u too short
  Vec bad = v1(std::numeric_limits<double>::quiet_NaN());
  CHECK_THROWS_AS(integrate(sys, bad, u, 1.0, 0.1), PreconditionError);
}

TEST_CASE("integration is deterministic") {
  auto sys = scalar_linear(0.5);
  auto u = ControlSignal::constant(v1(0.3), 0.1, 20);
  auto t1 = integrate(sys, v1(0.2), u, 2.0, 0.01);
  auto t2 = integrate(sys, v1(0.2), u, 2.0, 0.01);
  REQUIRE(t1.states.size() == t2.states.size());
  for (std::size_t i = 0; i < t1.states.size(); ++i) CHECK(t1.states[i] == t2.states[i]);
}

TEST_CASE("KL evaluation: exponential family") {
  auto z1 = KLFunction::exponential(0.5, 2.0);
  CHECK(z1(1.0, 0.0) == 2.0);
  CHECK(z1(0.0, 3.7) == 0.0);
  auto z2 = KLFunction::exponential(1.0, 1.0);
  CHECK_THAT(z2(1.0, std::log(2.0)), WithinAbs(0.5, 1e-15));
  CHECK_THAT(z1.scaled(2.0)(1.0, 0.0), WithinAbs(4.0, 1e-15));
  CHECK(z1.scaled(2.0).big_m() == 4.0);
}

TEST_CASE("KL monotonicity, property-tested") {
  auto zs = {KLFunction::exponential(0.8, 3.0),
             KLFunction::tabulated({0.0, 0.5, 1.0, 2.0}, {0.0, 1.0, 3.0},
                                   {{0.0, 0.0, 0.0},
                                    {0.5, 0.2, 0.1},
                                    {1.0, 0.45, 0.25},
                                    {2.2, 1.0, 0.6}})};
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> rdist(0.0, 2.0), sdist(0.0, 3.0);
  for (const auto& z : zs) {
    for (int i = 0; i < 300; ++i) {
      double r = rdist(rng), s = sdist(rng);
      double dr = 0.1 + rdist(rng) * 0.2, ds = 0.1 + sdist(rng) * 0.2;
      CHECK(z(r + dr, s) > z(r, s));               // increasing in r (r + dr > r >= 0)
      if (r > 0.0) CHECK(z(r, s + ds) <= z(r, s));  // nonincreasing in s on the sampled table
      CHECK(z(0.0, s) == 0.0);
    }
  }
}

TEST_CASE("divergence and the induced matrix norm") {
  Mat a(2, 2);
  a << 1.0, 3.0, 0.25, -2.0;
  auto sys = linear_system(a, Mat::Identity(2, 2));
  Vec x = Vec::Zero(2), u = Vec::Zero(2);
  CHECK(divergence(sys, x, u) == -1.0);            // tr A
  CHECK(jacobian_norm(sys, x, u) == 4.0);          // max abs row sum
  auto id = linear_system(Mat::Identity(3, 3), Mat::Identity(3, 3));
  CHECK(jacobian_norm(id, Vec::Zero(3), Vec::Zero(3)) == 1.0);
}

TEST_CASE("jacobian agrees with central finite differences") {
  // a mildly nonlinear 2d system exercised at random states and controls
  ControlSystem sys;
  sys.dim_state = 2;
  sys.dim_control = 1;
  sys.field = [](const Vec& x, const Vec& u) {
    Vec dx(2);
    dx[0] = std::sin(x[0]) + x[1] * x[1] + 0.5 * u[0] * x[0];
    dx[1] = -x[1] + std::cos(x[0]) * u[0];
    return dx;
  };
  sys.jacobian = [](const Vec& x, const Vec& u) {
    Mat j(2, 2);
    j(0, 0) = std::cos(x[0]) + 0.5 * u[0];
    j(0, 1) = 2.0 * x[1];
    j(1, 0) = -std::sin(x[0]) * u[0];
    j(1, 1) = -1.0;
    return j;
  };
  sys.control_range = Box::interval(-2.0, 2.0);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> dist(-1.5, 1.5);
  for (int trial = 0; trial < 50; ++trial) {
    Vec x(2), u(1);
    x << dist(rng), dist(rng);
    u << dist(rng);
    Mat j = sys.jacobian(x, u);
    for (int c = 0; c < 2; ++c) {
      double h = 1e-6;
      Vec xp = x, xm = x;
      xp[c] += h;
      xm[c] -= h;
      Vec fd = (sys.field(xp, u) - sys.field(xm, u)) / (2.0 * h);
      for (int r = 0; r < 2; ++r) {
        double denom = std::max(1.0, std::abs(j(r, c)));
        CHECK(std::abs(fd[r] - j(r, c)) / denom < 1e-5);
      }
    }
  }
}

TEST_CASE("closed loop with zero feedback equals open loop with zero control") {
  auto sys = scalar_linear(-0.7);
  auto zero_fb = [](const Vec&) { return Vec::Zero(1); };
  auto [traj, signal] = closed_loop(sys, zero_fb, v1(1.3), 2.0, 0.01);
  auto u = ControlSignal::constant(v1(0.0), 2.0, 1);
  auto open = integrate(sys, v1(1.3), u, 2.0, 0.01);
  REQUIRE(traj.states.size() == open.states.size());
  for (std::size_t i = 0; i < traj.states.size(); ++i)
    CHECK(traj.states[i] == open.states[i]);
  for (const auto& uv : signal.values) CHECK(uv[0] == 0.0);
}

TEST_CASE("closed loop reproduces the linear closed form and records k(psi)") {
  // x' = x + u with k(x) = -2x: psi(t) = x0 e^{-t}, u(t) = -2 x0 e^{-t}
  auto sys = scalar_linear(1.0);
  auto fb = [](const Vec& x) { return Vec::Constant(1, -2.0 * x[0]); };
  double x0 = 0.8;
  auto [traj, signal] = closed_loop(sys, fb, v1(x0), 1.0, 1e-3);
  for (std::size_t i = 0; i < traj.states.size(); i += 100)
    CHECK_THAT(traj.states[i][0], WithinAbs(x0 * std::exp(-traj.times[i]), 1e-7));
  for (std::size_t k = 0; k < signal.values.size(); k += 100) {
    double t = static_cast<double>(k) * signal.step;
    CHECK_THAT(signal.values[k][0], WithinAbs(-2.0 * x0 * std::exp(-t), 1e-6));
  }
}

TEST_CASE("feedback values outside the truncated range raise a range violation") {
  auto sys = scalar_linear(1.0);
  sys.control_range = Box::interval(-1.0, 1.0);
  auto fb = [](const Vec& x) { return Vec::Constant(1, -2.0 * x[0]); };
  try {
    closed_loop(sys, fb, v1(0.9), 1.0, 0.01);
    FAIL("expected RangeViolationError");
  } catch (const RangeViolationError& e) {
    CHECK(e.time == 0.0);
    CHECK_THAT(e.value[0], WithinAbs(-1.8, 1e-12));
  }
}

TEST_CASE("replaying the recorded signal stays within the Gronwall bound") {
  // x' = x + u, k(x) = -2x. The replay uses the piecewise-constant recording,
  // so the defect per unit step is bounded via L_fx = 1, L_fu = 1, L_k = 2,
  // V = max |psi'| = |x0|: ||psi - phi|| <= 2 |x0| dt (e^{tau} - 1) =: C_pred dt.
  auto sys = scalar_linear(1.0);
  auto fb = [](const Vec& x) { return Vec::Constant(1, -2.0 * x[0]); };
  double x0 = 1.0, tau = 2.0, dt = 1e-3;
  auto [traj, signal] = closed_loop(sys, fb, v1(x0), tau, dt);
  auto replay = integrate(sys, v1(x0), signal, tau, dt);
  double worst = 0.0;
  for (std::size_t i = 0; i < traj.states.size(); ++i)
    worst = std::max(worst, std::abs(traj.states[i][0] - replay.states[i][0]));
  double c_emp = worst / dt;
  double c_pred = 2.0 * std::abs(x0) * (std::exp(tau) - 1.0);
  CHECK(worst > 0.0);
  CHECK(c_emp < 10.0 * c_pred);
}
