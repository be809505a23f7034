#pragma once

// Spanning decisions and minimal-cardinality spanning sets. A candidate
// control u covers a grid point x0 at horizon tau when the trajectory from x0
// under u satisfies the decay envelope at every sample time in [0, tau]:
//
//   strict:     d(phi(t), Lambda) <= zeta(d(x0, Lambda) + eps, t)
//   practical:  d(phi(t), Lambda) <= zeta(d(x0, Lambda) + eps, t) + eps
//
// Covers are selected exactly (branch and bound) on small grids and greedily
// otherwise; the entropy rate is the fitted slope of log count against tau.

#include "stabent/dynamics.hpp"

#include <cstdint>
#include <sstream>

namespace stabent::spanning {

enum class Mode { Strict, Practical };

struct SpanningMode {
  Mode kind = Mode::Practical;
  double epsilon = 0.0;
  // Multiplies eps in the sampled check; compensates for checking the
  // envelope on the dt-grid only. Default 1 (no inflation).
  double sampling_inflation = 1.0;

  SpanningMode() = default;
  SpanningMode(Mode k, double eps, double inflation = 1.0)
      : kind(k), epsilon(eps), sampling_inflation(inflation) {
    if (eps <= 0.0) throw PreconditionError("spanning needs eps > 0");
  }

  double eps_eff() const { return epsilon * sampling_inflation; }
};

struct Candidate {
  enum class Source { Feedback, Constant };
  ControlSignal signal;
  Source source = Source::Feedback;
  int seed_index = -1;     // grid index the signal was generated from, -1 for constants
  int feedback_index = -1; // which feedback produced it
  Vec seed;                // empty for constants
};

struct SpanningResult {
  enum class Method { Greedy, ExactSmall };
  double horizon = 0.0;
  std::size_t count = 0;
  std::vector<int> assignment;  // grid point -> candidate index
  Method method = Method::Greedy;
};

inline const char* method_name(SpanningResult::Method m) {
  return m == SpanningResult::Method::Greedy ? "greedy" : "exact";
}

struct EntropyEstimate {
  std::vector<double> horizons;
  std::vector<std::size_t> counts;
  std::vector<SpanningResult::Method> methods;
  double rate = 0.0;         // censored least-squares slope of log count vs tau
  double rate_at_max = 0.0;  // log(count(tau_max)) / tau_max
  std::size_t grid_size = 0;
};

// ---------------------------------------------------------------------------
// Pointwise spanning check

inline double envelope_value(const KLFunction& zeta, const SpanningMode& mode, double d0, double t) {
  double v = zeta(d0 + mode.eps_eff(), t);
  if (mode.kind == Mode::Practical) v += mode.eps_eff();
  return v;
}

inline bool check_spanning(const Trajectory& traj, const KLFunction& zeta, const SpanningMode& mode,
                           const TargetSet& target) {
  double d0 = dist_to_target(traj.origin(), target);
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    if (dist_to_target(traj.states[k], target) > envelope_value(zeta, mode, d0, traj.times[k]))
      return false;
  }
  return true;
}

namespace detail {

// Integrates from x0 under the signal and returns the time of the first
// sample violating the envelope (+inf when none up to tau). Blow-up counts as
// a violation at the blow-up time; nothing is stored, so the pairwise sweep
// stays cheap.
inline double first_violation_time(const ControlSystem& sys, const Vec& x0,
                                   const ControlSignal& u, const KLFunction& zeta,
                                   const SpanningMode& mode, const TargetSet& target, double tau,
                                   double dt) {
  double d0 = dist_to_target(x0, target);
  if (dist_to_target(x0, target) > envelope_value(zeta, mode, d0, 0.0)) return 0.0;
  std::int64_t n_steps = stabent::detail::exact_ratio(tau, dt, "tau");
  std::int64_t per_ctrl = n_steps > 0 ? stabent::detail::exact_ratio(u.step, dt, "control step") : 1;
  Vec x = x0;
  for (std::int64_t i = 0; i < n_steps; ++i) {
    const Vec& uv = u.at_index(static_cast<std::size_t>(i / per_ctrl));
    x = stabent::detail::rk4_step(sys, x, uv, dt);
    double t = static_cast<double>(i + 1) * dt;
    if (!x.allFinite() || max_norm(x) > kBlowupLimit) return t;
    if (dist_to_target(x, target) > envelope_value(zeta, mode, d0, t)) return t;
  }
  return std::numeric_limits<double>::infinity();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Candidate construction: one open-loop signal per (feedback, grid seed),
// recorded from the closed loop, optionally augmented with quantized constant
// controls. Deterministic order, exact duplicates removed.
//
// Each control interval stores the feedback value at the interval midpoint of
// the closed-loop path. Boundary sampling leaves an O(step) hold bias that an
// unstable open loop amplifies by e^{L tau}; the midpoint representative of
// the same continuous signal reduces the bias to O(step^2).

inline std::vector<Candidate> build_candidates(
    const ControlSystem& sys, const std::vector<std::function<Vec(const Vec&)>>& feedbacks,
    const std::vector<Vec>& gamma_grid, double tau, int steps, double dt, int quant_levels = 0,
    int jobs = 1) {
  if (steps < 1) throw PreconditionError("build_candidates needs steps >= 1");
  double ctrl_step = tau / steps;

  std::vector<Candidate> pool;
  if (!feedbacks.empty() && !gamma_grid.empty()) {
    double half = 0.5 * ctrl_step;
    auto sub = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(half / dt - 1e-9)));
    double dt_rec = half / static_cast<double>(sub);
    std::vector<std::vector<Candidate>> per_feedback(feedbacks.size());
    for (std::size_t fi = 0; fi < feedbacks.size(); ++fi) {
      auto& slot = per_feedback[fi];
      slot.resize(gamma_grid.size());
      parallel_for(gamma_grid.size(), jobs, [&](std::size_t j) {
        auto [traj, fine] = closed_loop(sys, feedbacks[fi], gamma_grid[j], tau, dt_rec, half);
        (void)traj;
        ControlSignal signal;
        signal.step = ctrl_step;
        signal.values.reserve(static_cast<std::size_t>(steps));
        for (int s = 0; s < steps; ++s)
          signal.values.push_back(fine.values[static_cast<std::size_t>(2 * s + 1)]);
        slot[j] = Candidate{std::move(signal), Candidate::Source::Feedback, static_cast<int>(j),
                            static_cast<int>(fi), gamma_grid[j]};
      });
    }
    for (auto& group : per_feedback)
      for (auto& c : group) pool.push_back(std::move(c));
  }

  if (quant_levels > 0) {
    Box range = sys.truncated_range();
    if (!range.is_bounded())
      throw PreconditionError("constant-control candidates need a bounded (truncated) range");
    for (const Vec& u : grid_points(range, quant_levels)) {
      ControlSignal sig = ControlSignal::constant(u, tau, 1);
      pool.push_back(Candidate{std::move(sig), Candidate::Source::Constant, -1, -1, Vec()});
    }
  }

  // de-duplicate on exact signal equality, keeping first occurrences
  std::vector<Candidate> out;
  out.reserve(pool.size());
  for (auto& c : pool) {
    bool dup = false;
    for (const auto& kept : out) {
      if (kept.signal == c.signal) {
        dup = true;
        break;
      }
    }
    if (!dup) out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cover selection over a boolean coverage relation

namespace detail {

struct CoverProblem {
  // covers[c] lists grid points covered by candidate c (ascending)
  std::vector<std::vector<int>> covers;
  std::size_t n_points = 0;
};

inline void throw_uncovered(const std::vector<char>& coverable) {
  std::vector<int> missing;
  for (std::size_t p = 0; p < coverable.size(); ++p)
    if (!coverable[p]) missing.push_back(static_cast<int>(p));
  std::ostringstream msg;
  msg << missing.size() << " grid point(s) covered by no candidate (r = +inf); first indices:";
  for (std::size_t i = 0; i < missing.size() && i < 8; ++i) msg << ' ' << missing[i];
  throw InfeasibleCoverError(std::move(missing), msg.str());
}

inline void check_feasible(const CoverProblem& prob) {
  std::vector<char> coverable(prob.n_points, 0);
  for (const auto& cov : prob.covers)
    for (int p : cov) coverable[static_cast<std::size_t>(p)] = 1;
  for (char c : coverable)
    if (!c) throw_uncovered(coverable);
}

// Greedy: repeatedly pick the candidate covering the most uncovered points,
// ties broken by lowest candidate index.
inline std::vector<int> greedy_cover(const CoverProblem& prob) {
  check_feasible(prob);
  std::vector<char> covered(prob.n_points, 0);
  std::size_t remaining = prob.n_points;
  std::vector<int> chosen;
  while (remaining > 0) {
    int best = -1;
    std::size_t best_gain = 0;
    for (std::size_t c = 0; c < prob.covers.size(); ++c) {
      std::size_t gain = 0;
      for (int p : prob.covers[c])
        if (!covered[static_cast<std::size_t>(p)]) ++gain;
      if (gain > best_gain) {
        best_gain = gain;
        best = static_cast<int>(c);
      }
    }
    chosen.push_back(best);
    for (int p : prob.covers[static_cast<std::size_t>(best)]) {
      if (!covered[static_cast<std::size_t>(p)]) {
        covered[static_cast<std::size_t>(p)] = 1;
        --remaining;
      }
    }
  }
  return chosen;
}

// Exact minimum set cover by branch and bound over point masks (<= 32 points).
inline std::vector<int> exact_cover(const CoverProblem& prob) {
  if (prob.n_points > 32) throw PreconditionError("exact cover limited to 32 points");
  check_feasible(prob);
  const std::uint64_t full = prob.n_points == 0 ? 0 : (~std::uint64_t{0} >> (64 - prob.n_points));
  std::vector<std::uint64_t> masks(prob.covers.size(), 0);
  std::size_t widest = 1;
  for (std::size_t c = 0; c < prob.covers.size(); ++c) {
    for (int p : prob.covers[c]) masks[c] |= std::uint64_t{1} << p;
    widest = std::max<std::size_t>(widest, prob.covers[c].size());
  }

  std::vector<int> best = greedy_cover(prob);
  std::vector<int> current;

  std::function<void(std::uint64_t)> descend = [&](std::uint64_t covered) {
    if (covered == full) {
      if (current.size() < best.size()) best = current;
      return;
    }
    std::size_t uncovered_count = static_cast<std::size_t>(__builtin_popcountll(full & ~covered));
    std::size_t lower = (uncovered_count + widest - 1) / widest;
    if (current.size() + lower >= best.size()) return;

    // branch on the uncovered point with the fewest covering candidates
    int branch_point = -1;
    std::size_t fewest = std::numeric_limits<std::size_t>::max();
    for (std::size_t p = 0; p < prob.n_points; ++p) {
      if (covered & (std::uint64_t{1} << p)) continue;
      std::size_t options = 0;
      for (std::size_t c = 0; c < masks.size(); ++c)
        if (masks[c] & (std::uint64_t{1} << p)) ++options;
      if (options < fewest) {
        fewest = options;
        branch_point = static_cast<int>(p);
      }
    }
    for (std::size_t c = 0; c < masks.size(); ++c) {
      if (!(masks[c] & (std::uint64_t{1} << branch_point))) continue;
      current.push_back(static_cast<int>(c));
      descend(covered | masks[c]);
      current.pop_back();
    }
  };
  descend(0);
  return best;
}

inline SpanningResult select_cover(const CoverProblem& prob, double horizon) {
  SpanningResult res;
  res.horizon = horizon;
  res.method = prob.n_points <= 24 ? SpanningResult::Method::ExactSmall
                                   : SpanningResult::Method::Greedy;
  std::vector<int> chosen = res.method == SpanningResult::Method::ExactSmall
                                ? exact_cover(prob)
                                : greedy_cover(prob);
  res.count = chosen.size();
  res.assignment.assign(prob.n_points, -1);
  std::sort(chosen.begin(), chosen.end());
  for (int c : chosen)
    for (int p : prob.covers[static_cast<std::size_t>(c)])
      if (res.assignment[static_cast<std::size_t>(p)] < 0)
        res.assignment[static_cast<std::size_t>(p)] = c;
  return res;
}

// violation_times[c][p]: first violating sample time of candidate c started
// at grid point p, +inf when the pair satisfies the envelope on the whole
// simulated horizon.
inline std::vector<std::vector<double>> violation_times(
    const ControlSystem& sys, const std::vector<Vec>& gamma_grid,
    const std::vector<Candidate>& candidates, const KLFunction& zeta, const SpanningMode& mode,
    const TargetSet& target, double tau, double dt, int jobs) {
  std::vector<std::vector<double>> times(candidates.size(),
                                         std::vector<double>(gamma_grid.size(), 0.0));
  std::size_t total = candidates.size() * gamma_grid.size();
  parallel_for(total, jobs, [&](std::size_t k) {
    std::size_t c = k / gamma_grid.size();
    std::size_t p = k % gamma_grid.size();
    times[c][p] = first_violation_time(sys, gamma_grid[p], candidates[c].signal, zeta, mode,
                                       target, tau, dt);
  });
  return times;
}

inline CoverProblem coverage_at(const std::vector<std::vector<double>>& times, double tau,
                                double dt, std::size_t n_points) {
  CoverProblem prob;
  prob.n_points = n_points;
  prob.covers.resize(times.size());
  for (std::size_t c = 0; c < times.size(); ++c)
    for (std::size_t p = 0; p < n_points; ++p)
      if (times[c][p] > tau + 0.5 * dt) prob.covers[c].push_back(static_cast<int>(p));
  return prob;
}

}  // namespace detail

// Set-cover selection on an explicit coverage relation (covers[c] lists the
// points candidate c covers). Used directly by oracle tests; minimal_cover
// feeds it simulated coverage.
inline SpanningResult solve_set_cover(std::vector<std::vector<int>> covers, std::size_t n_points,
                                      double horizon = 0.0) {
  detail::CoverProblem prob{std::move(covers), n_points};
  return detail::select_cover(prob, horizon);
}

inline std::size_t greedy_cover_count(std::vector<std::vector<int>> covers, std::size_t n_points) {
  detail::CoverProblem prob{std::move(covers), n_points};
  return detail::greedy_cover(prob).size();
}

inline std::size_t exact_cover_count(std::vector<std::vector<int>> covers, std::size_t n_points) {
  detail::CoverProblem prob{std::move(covers), n_points};
  return detail::exact_cover(prob).size();
}

// Minimal (approximately, on large grids) spanning cover of gamma_grid.
inline SpanningResult minimal_cover(const ControlSystem& sys, const std::vector<Vec>& gamma_grid,
                                    const std::vector<Candidate>& candidates,
                                    const KLFunction& zeta, const SpanningMode& mode,
                                    const TargetSet& target, double tau, double dt, int jobs = 1) {
  if (candidates.empty()) throw PreconditionError("minimal_cover needs at least one candidate");
  if (gamma_grid.empty()) throw PreconditionError("minimal_cover needs a nonempty grid");
  auto times = detail::violation_times(sys, gamma_grid, candidates, zeta, mode, target, tau, dt, jobs);
  return detail::select_cover(detail::coverage_at(times, tau, dt, gamma_grid.size()), tau);
}

// ---------------------------------------------------------------------------
// Rate fitting. A fixed finite grid saturates: once the cover needs every
// grid point, the counts measure the grid rather than the system, so
// saturated horizons are excluded from the slope. When fewer than two
// unsaturated horizons remain, the first saturated horizon is kept (the
// crossing still reflects growth); with no usable pair at all the fit falls
// back to the plain upper-half slope. rate_at_max is always reported next to
// the fit so the difference stays visible.

inline double fit_entropy_rate(const std::vector<double>& horizons,
                               const std::vector<std::size_t>& counts,
                               std::size_t grid_size = std::numeric_limits<std::size_t>::max()) {
  if (horizons.size() != counts.size() || horizons.size() < 2)
    throw PreconditionError("rate fit needs >= 2 horizons");
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < counts.size(); ++i)
    if (counts[i] < grid_size) usable.push_back(i);
  if (usable.size() < 2) {
    std::size_t last = usable.empty() ? 0 : usable.back();
    if (last + 1 < horizons.size() && counts[last + 1] >= grid_size && !usable.empty())
      usable.push_back(last + 1);
  }
  std::vector<std::size_t> pick;
  if (usable.size() >= 2) {
    std::size_t take = std::max<std::size_t>(2, (usable.size() + 1) / 2);
    pick.assign(usable.end() - static_cast<std::ptrdiff_t>(take), usable.end());
  } else {
    std::size_t take = std::max<std::size_t>(2, (horizons.size() + 1) / 2);
    for (std::size_t i = horizons.size() - take; i < horizons.size(); ++i) pick.push_back(i);
  }
  std::vector<double> xs, ys;
  for (std::size_t i : pick) {
    xs.push_back(horizons[i]);
    ys.push_back(std::log(static_cast<double>(counts[i])));
  }
  return fit_slope(xs, ys);
}

// Runs minimal_cover per horizon and fits the growth rate. Candidates are
// built once at the largest horizon; shorter horizons evaluate prefixes of
// the same signals (feedback recordings and constants are prefix-consistent).
inline EntropyEstimate entropy_rate(
    const ControlSystem& sys, const std::vector<Vec>& gamma_grid,
    const std::function<std::vector<Candidate>(double)>& candidate_builder,
    const KLFunction& zeta, const SpanningMode& mode, const TargetSet& target,
    const std::vector<double>& horizons, double dt, int jobs = 1) {
  if (horizons.size() < 3) throw PreconditionError("entropy_rate needs >= 3 horizons");
  for (std::size_t i = 1; i < horizons.size(); ++i)
    if (horizons[i] <= horizons[i - 1]) throw PreconditionError("horizons must be increasing");
  if (gamma_grid.empty()) throw PreconditionError("entropy_rate needs a nonempty grid");

  double tau_max = horizons.back();
  std::vector<Candidate> candidates = candidate_builder(tau_max);
  if (candidates.empty()) throw PreconditionError("entropy_rate needs at least one candidate");
  auto times =
      detail::violation_times(sys, gamma_grid, candidates, zeta, mode, target, tau_max, dt, jobs);

  EntropyEstimate est;
  est.horizons = horizons;
  est.grid_size = gamma_grid.size();
  for (double tau : horizons) {
    try {
      SpanningResult res =
          detail::select_cover(detail::coverage_at(times, tau, dt, gamma_grid.size()), tau);
      est.counts.push_back(res.count);
      est.methods.push_back(res.method);
    } catch (InfeasibleCoverError& e) {
      e.horizon = tau;
      throw;
    }
  }
  est.rate = fit_entropy_rate(horizons, est.counts, est.grid_size);
  est.rate_at_max =
      std::log(static_cast<double>(est.counts.back())) / horizons.back();
  return est;
}

// Fixed CSV layout: tau,count,method,rate_running.
inline std::string entropy_csv(const EntropyEstimate& est) {
  std::string out = "tau,count,method,rate_running\n";
  for (std::size_t i = 0; i < est.horizons.size(); ++i) {
    double running =
        est.horizons[i] > 0.0 ? std::log(static_cast<double>(est.counts[i])) / est.horizons[i] : 0.0;
    out += format_double(est.horizons[i]);
    out += ',';
    out += std::to_string(est.counts[i]);
    out += ',';
    out += method_name(est.methods[i]);
    out += ',';
    out += format_double(running);
    out += '\n';
  }
  return out;
}

}  // namespace stabent::spanning
