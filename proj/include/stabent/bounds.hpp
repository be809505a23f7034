#pragma once

// Closed-form entropy bounds for comparison with the empirical rates:
//
//   upper (Lipschitz):    L_eps * d,  L_eps = max ||df/dx|| over P_eps x U
//   upper (exponential):  (L0s + alpha) * d over P0s x U
//   lower (divergence):   min tr df/dx over cl N(Lambda; eps) x U
//   lower (exponential):  alpha * d + min tr df/dx over ||x|| <= eps, u in U
//   linear exact:         sum over Re lambda_i > -alpha of (alpha + Re lambda_i)
//
// The box extrema are taken on finite grids; upper bounds inflate the grid
// maximum, lower bounds subtract a margin (both configurable, defaults keep
// the analytic test cases exact).

#include "stabent/dynamics.hpp"

#include <Eigen/Eigenvalues>

#include <complex>
#include <optional>

namespace stabent::bounds {

// P_eps = {x : d(x, Lambda) <= zeta(max_{y in Gamma} d(y, Lambda) + eps, 0) + eps},
// a box because distance is measured in the max-norm.
inline Box compute_P_eps(const Box& gamma, const TargetSet& target, const KLFunction& zeta,
                         double eps) {
  double kappa = target.max_dist_from(gamma);
  double radius = zeta(kappa + eps, 0.0) + eps;
  return target.inflate(radius);
}

// P0s = {x : d(x, Lambda) <= M * max_{y in Gamma} d(y, Lambda)}.
inline Box compute_P0s(const Box& gamma, const TargetSet& target, double big_m) {
  double kappa = target.max_dist_from(gamma);
  return target.inflate(big_m * kappa);
}

namespace detail {

inline double grid_max(const ControlSystem& sys, const Box& xbox, int grid_res,
                       const std::function<double(const Vec&, const Vec&)>& fn, int jobs) {
  auto xs = grid_points(xbox, grid_res);
  auto us = grid_points(sys.truncated_range(), grid_res);
  std::vector<double> per_x(xs.size(), -std::numeric_limits<double>::infinity());
  parallel_for(xs.size(), jobs, [&](std::size_t i) {
    double m = -std::numeric_limits<double>::infinity();
    for (const auto& u : us) m = std::max(m, fn(xs[i], u));
    per_x[i] = m;
  });
  double m = -std::numeric_limits<double>::infinity();
  for (double v : per_x) m = std::max(m, v);
  return m;
}

inline double grid_min(const ControlSystem& sys, const Box& xbox, int grid_res,
                       const std::function<double(const Vec&, const Vec&)>& fn, int jobs) {
  return -grid_max(sys, xbox, grid_res,
                   [&fn](const Vec& x, const Vec& u) { return -fn(x, u); }, jobs);
}

}  // namespace detail

// L_eps * d with the grid maximum inflated by the safety factor.
inline double lipschitz_upper_bound(const ControlSystem& sys, const Box& gamma,
                                    const TargetSet& target, const KLFunction& zeta, double eps,
                                    int grid_res, double safety = 1.05, int jobs = 1) {
  Box p = compute_P_eps(gamma, target, zeta, eps);
  double l = detail::grid_max(
      sys, p, grid_res,
      [&sys](const Vec& x, const Vec& u) { return jacobian_norm(sys, x, u); }, jobs);
  return safety * l * sys.dim_state;
}

// (L0s + alpha) * d for the exponential envelope e^{-alpha s} M r.
inline double exponential_upper_bound(const ControlSystem& sys, const Box& gamma,
                                      const TargetSet& target, double alpha, double big_m,
                                      int grid_res, double safety = 1.05, int jobs = 1) {
  Box p = compute_P0s(gamma, target, big_m);
  double l = detail::grid_max(
      sys, p, grid_res,
      [&sys](const Vec& x, const Vec& u) { return jacobian_norm(sys, x, u); }, jobs);
  return (safety * l + alpha) * sys.dim_state;
}

// min div over cl N(Lambda; eps) x U, minus the safety margin.
inline double divergence_lower_bound(const ControlSystem& sys, const TargetSet& target, double eps,
                                     int grid_res, double safety_margin = 0.0, int jobs = 1) {
  Box nb = target.inflate(eps);
  double m = detail::grid_min(
      sys, nb, grid_res,
      [&sys](const Vec& x, const Vec& u) { return divergence(sys, x, u); }, jobs);
  return m - safety_margin;
}

// alpha * d + min div over the eps-ball around the origin times U
// (Lambda = {0} case of the volume-growth bound).
inline double exponential_lower_bound(const ControlSystem& sys, double alpha, double eps,
                                      int grid_res, double safety_margin = 0.0, int jobs = 1) {
  Box ball = Box::cube(sys.dim_state, -eps, eps);
  double m = detail::grid_min(
      sys, ball, grid_res,
      [&sys](const Vec& x, const Vec& u) { return divergence(sys, x, u); }, jobs);
  return alpha * sys.dim_state + m - safety_margin;
}

// ---------------------------------------------------------------------------
// Linear spectral quantities

struct SpectralResult {
  double value = 0.0;
  int count_above = 0;            // eigenvalues with Re > -alpha, with multiplicity
  bool boundary_ambiguous = false;  // some Re lambda within 1e-9 of -alpha
  std::vector<std::complex<double>> eigenvalues;
};

inline std::vector<std::complex<double>> eigenvalues_of(const Mat& a) {
  if (a.rows() != a.cols()) throw PreconditionError("eigenvalues need a square matrix");
  Eigen::EigenSolver<Mat> solver(a, /*computeEigenvectors=*/false);
  if (solver.info() != Eigen::Success) throw NumericError("eigenvalue solver did not converge");
  std::vector<std::complex<double>> eigs(static_cast<std::size_t>(a.rows()));
  for (Eigen::Index i = 0; i < a.rows(); ++i) eigs[static_cast<std::size_t>(i)] = solver.eigenvalues()[i];
  return eigs;
}

inline constexpr double kSpectralTieTol = 1e-9;

// sum over Re lambda_i > -alpha of (alpha + Re lambda_i), algebraic
// multiplicity counted. Eigenvalues within 1e-9 of the threshold are excluded
// (strict inequality) and flagged.
inline SpectralResult spectral_details(const Mat& a, double alpha) {
  if (alpha < 0.0) throw PreconditionError("spectral entropy needs alpha >= 0");
  SpectralResult res;
  res.eigenvalues = eigenvalues_of(a);
  for (const auto& ev : res.eigenvalues) {
    double re = ev.real();
    if (std::abs(re + alpha) <= kSpectralTieTol) {
      res.boundary_ambiguous = true;
      continue;
    }
    if (re > -alpha) {
      res.value += alpha + re;
      ++res.count_above;
    }
  }
  return res;
}

inline double linear_spectral_entropy(const Mat& a, double alpha) {
  return spectral_details(a, alpha).value;
}

// Shifted-threshold sum of real parts: sum over Re lambda_i > -alpha of
// Re lambda_i. At alpha = 0 this is the topological entropy of the flow e^{At}.
inline double topological_entropy_linear(const Mat& a, double alpha) {
  SpectralResult res = spectral_details(a, alpha);
  return res.value - alpha * res.count_above;
}

// The projected-subspace route to the exponential lower bound for linear
// systems: alpha * d' + sum of the d' real parts above the threshold. Equal to
// linear_spectral_entropy by construction of the projection.
inline double exponential_lower_bound_projected(const Mat& a, double alpha) {
  SpectralResult res = spectral_details(a, alpha);
  double sum_re = res.value - alpha * res.count_above;
  return alpha * res.count_above + sum_re;
}

// ---------------------------------------------------------------------------
// Aggregated report

struct BoundReport {
  double lower_general = 0.0;
  std::optional<double> lower_exponential;
  double upper_lipschitz = 0.0;
  std::optional<double> upper_exponential;
  std::optional<double> spectral_exact;
  bool boundary_ambiguous = false;
  // metadata
  double epsilon = 0.0;
  std::string zeta;
  Box gamma;
  Box lambda;
};

}  // namespace stabent::bounds
