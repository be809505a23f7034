#include "stabent/spanning.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <set>

using namespace stabent;
using namespace stabent::spanning;
using Catch::Matchers::WithinAbs;

namespace {

ControlSystem scalar_linear(double a, double b = 1.0) {
  return linear_system(Mat::Constant(1, 1, a), Mat::Constant(1, 1, b));
}

Vec v1(double x) { return Vec::Constant(1, x); }

std::function<Vec(const Vec&)> gain(double k) {
  return [k](const Vec& x) { return Vec::Constant(1, k * x[0]); };
}

// brute-force minimum set cover by subset enumeration (oracle)
std::size_t brute_force_cover(const std::vector<std::vector<int>>& covers, std::size_t n_points) {
  const std::size_t nc = covers.size();
  std::uint64_t full = n_points == 0 ? 0 : (~std::uint64_t{0} >> (64 - n_points));
  std::vector<std::uint64_t> masks(nc, 0);
  for (std::size_t c = 0; c < nc; ++c)
    for (int p : covers[c]) masks[c] |= std::uint64_t{1} << p;
  std::size_t best = n_points + 1;
  for (std::uint64_t sub = 0; sub < (std::uint64_t{1} << nc); ++sub) {
    std::uint64_t covered = 0;
    std::size_t size = 0;
    for (std::size_t c = 0; c < nc; ++c)
      if (sub & (std::uint64_t{1} << c)) {
        covered |= masks[c];
        ++size;
      }
    if (covered == full) best = std::min(best, size);
  }
  return best;
}

}  // namespace

TEST_CASE("check_spanning on constant and decaying trajectories") {
  TargetSet lam = Box::point1d(0.0);

  // trajectory constant at the target: true for any envelope and mode
  Trajectory still;
  still.dt = 0.1;
  for (int i = 0; i <= 10; ++i) {
    still.times.push_back(0.1 * i);
    still.states.push_back(v1(0.0));
  }
  CHECK(check_spanning(still, KLFunction::exponential(2.0, 1.0),
                       SpanningMode(Mode::Practical, 0.01), lam));
  CHECK(check_spanning(still, KLFunction::exponential(0.1, 1.0),
                       SpanningMode(Mode::Strict, 0.5), lam));

  // x' = -x from 1: decays like e^{-t}; an alpha = 2 envelope is too fast
  auto sys = scalar_linear(-1.0, 0.0);
  auto u = ControlSignal::constant(v1(0.0), 4.0, 1);
  auto traj = integrate(sys, v1(1.0), u, 4.0, 0.01);
  CHECK_FALSE(check_spanning(traj, KLFunction::exponential(2.0, 1.0),
                             SpanningMode(Mode::Practical, 0.01), lam));
  CHECK(check_spanning(traj, KLFunction::exponential(0.5, 1.0),
                       SpanningMode(Mode::Practical, 0.01), lam));
}

TEST_CASE("build_candidates counts and closed forms") {
  auto sys = scalar_linear(1.0);
  sys.truncation_radius = 10.0;
  auto grid = grid_points(Box::interval(-1.0, 1.0), 11);

  // one feedback, n seeds -> at most n candidates
  auto cands = build_candidates(sys, {gain(-3.0)}, grid, 1.0, 100, 0.01);
  CHECK(cands.size() <= grid.size());
  CHECK(cands.size() >= grid.size() - 1);  // only the x = 0 signal can collide with others

  // zero feedbacks, constant fallback: q levels per control axis
  auto consts = build_candidates(sys, {}, grid, 1.0, 100, 0.01, 5);
  CHECK(consts.size() == 5);
  for (const auto& c : consts) CHECK(c.source == Candidate::Source::Constant);

  // recorded signal matches u_y(t) = K e^{(A+BK)t} y at the interval midpoints
  double k = -3.0, y = 0.5;
  auto one = build_candidates(sys, {gain(k)}, {v1(y)}, 1.0, 100, 0.001);
  REQUIRE(one.size() == 1);
  const auto& sig = one[0].signal;
  for (std::size_t i = 0; i < sig.values.size(); i += 10) {
    double t = (static_cast<double>(i) + 0.5) * sig.step;
    CHECK_THAT(sig.values[i][0], WithinAbs(k * std::exp((1.0 + k) * t) * y, 1e-5));
  }
  CHECK(one[0].seed_index == 0);
}

TEST_CASE("minimal_cover trivial cases") {
  auto sys = scalar_linear(-1.0, 0.0);
  sys.truncation_radius = 1.0;
  TargetSet lam = Box::point1d(0.0);
  auto zeta = KLFunction::exponential(0.5, 2.0);
  SpanningMode mode(Mode::Practical, 0.1);

  // single grid point with a feasible candidate
  std::vector<Candidate> cand;
  cand.push_back(Candidate{ControlSignal::constant(v1(0.0), 1.0, 1),
                           Candidate::Source::Constant, -1, -1, Vec()});
  auto res = minimal_cover(sys, {v1(0.5)}, cand, zeta, mode, lam, 1.0, 0.01);
  CHECK(res.count == 1);
  CHECK(res.assignment == std::vector<int>{0});
  CHECK(res.method == SpanningResult::Method::ExactSmall);
}

TEST_CASE("infeasible points raise an error naming them") {
  // x' = +x with the zero control cannot satisfy a decaying envelope from far away
  auto sys = scalar_linear(1.0, 0.0);
  sys.truncation_radius = 1.0;
  TargetSet lam = Box::point1d(0.0);
  std::vector<Candidate> cand;
  cand.push_back(Candidate{ControlSignal::constant(v1(0.0), 4.0, 1),
                           Candidate::Source::Constant, -1, -1, Vec()});
  try {
    minimal_cover(sys, {v1(0.9), v1(1.0)}, cand, KLFunction::exponential(1.0, 1.0),
                  SpanningMode(Mode::Practical, 0.01), lam, 4.0, 0.01);
    FAIL("expected InfeasibleCoverError");
  } catch (const InfeasibleCoverError& e) {
    CHECK(e.uncovered.size() == 2);
  }
}

TEST_CASE("exact cover equals brute force; greedy within the ln bound") {
  std::mt19937_64 rng(2024);
  for (int inst = 0; inst < 60; ++inst) {
    std::size_t n_points = 4 + rng() % 9;  // 4..12
    std::size_t n_cands = 4 + rng() % 9;
    std::vector<std::vector<int>> covers(n_cands);
    for (std::size_t p = 0; p < n_points; ++p) {
      // every point coverable: give it to one random candidate, then sprinkle
      covers[rng() % n_cands].push_back(static_cast<int>(p));
      for (std::size_t c = 0; c < n_cands; ++c)
        if (rng() % 3 == 0) covers[c].push_back(static_cast<int>(p));
    }
    for (auto& cov : covers) {
      std::sort(cov.begin(), cov.end());
      cov.erase(std::unique(cov.begin(), cov.end()), cov.end());
    }
    std::size_t oracle = brute_force_cover(covers, n_points);
    std::size_t exact = exact_cover_count(covers, n_points);
    std::size_t greedy = greedy_cover_count(covers, n_points);
    CHECK(exact == oracle);
    CHECK(greedy >= exact);
    CHECK(static_cast<double>(greedy) <=
          (std::log(static_cast<double>(n_points)) + 1.0) * static_cast<double>(exact) + 1e-9);
  }
}

TEST_CASE("forced two-candidate cover") {
  std::vector<std::vector<int>> covers{{0}, {1}};
  auto res = solve_set_cover(covers, 2);
  CHECK(res.count == 2);
  CHECK(res.assignment == std::vector<int>{0, 1});
}

TEST_CASE("greedy determinism: identical inputs give identical covers") {
  std::mt19937_64 rng(99);
  std::vector<std::vector<int>> covers(40);
  for (int p = 0; p < 60; ++p) {
    covers[rng() % 40].push_back(p);
    for (int c = 0; c < 40; ++c)
      if (rng() % 4 == 0) covers[static_cast<std::size_t>(c)].push_back(p);
  }
  for (auto& cov : covers) {
    std::sort(cov.begin(), cov.end());
    cov.erase(std::unique(cov.begin(), cov.end()), cov.end());
  }
  auto a = solve_set_cover(covers, 60);
  auto b = solve_set_cover(covers, 60);
  CHECK(a.count == b.count);
  CHECK(a.assignment == b.assignment);
  CHECK(a.method == SpanningResult::Method::Greedy);
}

TEST_CASE("rate fitting: exact log-linear data and constants") {
  // counts = e^tau injected synthetically
  std::vector<double> horizons{1, 2, 3, 4, 5, 6};
  std::vector<std::size_t> exact_counts{3, 7, 20, 55, 148, 403};  // round(e^tau)
  CHECK_THAT(fit_entropy_rate(horizons, exact_counts), WithinAbs(1.0, 5e-3));

  std::vector<std::size_t> ones{1, 1, 1, 1, 1, 1};
  CHECK(fit_entropy_rate(horizons, ones) == 0.0);

  // nondecreasing counts give a nonnegative rate
  std::vector<std::size_t> steps{1, 1, 2, 2, 3, 3};
  CHECK(fit_entropy_rate(horizons, steps) >= 0.0);
}

TEST_CASE("rate fitting censors grid-saturated horizons") {
  std::vector<double> horizons{1, 2, 3, 4, 5};
  // grows like e^tau until the 100-point grid caps it
  std::vector<std::size_t> counts{3, 7, 20, 100, 100};
  double censored = fit_entropy_rate(horizons, counts, 100);
  CHECK_THAT(censored, WithinAbs(std::log(20.0 / 7.0), 0.05));
  // without grid information the flat tail drags the slope down
  double naive = fit_entropy_rate(horizons, counts);
  CHECK(naive < censored);
}

TEST_CASE("entropy_rate on the expanding scalar system, strict mode") {
  // x' = x + u, strict envelope e^{-alpha t} M (r + eps): the spanning count
  // grows like e^{(a + alpha) tau} while the grid still resolves the covers
  auto sys = scalar_linear(1.0);
  sys.truncation_radius = 10.0;
  TargetSet lam = Box::point1d(0.0);
  auto grid = grid_points(Box::interval(-1.0, 1.0), 201);
  auto zeta = KLFunction::exponential(0.5, 2.0);
  SpanningMode mode(Mode::Strict, 0.05);
  std::vector<double> horizons{0.5, 1.0, 1.5, 2.0};
  auto builder = [&](double tau) {
    return build_candidates(sys, {gain(-4.0)}, grid, tau,
                            static_cast<int>(std::llround(tau / 0.01)), 0.01);
  };
  auto est = entropy_rate(sys, grid, builder, zeta, mode, lam, horizons, 0.01, 4);
  for (std::size_t i = 1; i < est.counts.size(); ++i) CHECK(est.counts[i] >= est.counts[i - 1]);
  CHECK(est.counts.back() < grid.size());
  CHECK(est.rate > 1.5 - 0.4);
  CHECK(est.rate < 1.5 + 0.4);
  CHECK(est.rate_at_max > 0.0);
}

TEST_CASE("epsilon monotonicity and practical <= strict on identical inputs") {
  auto sys = scalar_linear(0.5);
  sys.truncation_radius = 10.0;
  TargetSet lam = Box::point1d(0.0);
  auto grid = grid_points(Box::interval(-1.0, 1.0), 41);
  auto zeta = KLFunction::exponential(0.5, 2.0);
  double tau = 1.5, dt = 0.01;
  auto cands = build_candidates(sys, {gain(-2.5)}, grid, tau, 150, dt);

  auto count_for = [&](Mode kind, double eps) {
    return minimal_cover(sys, grid, cands, zeta, SpanningMode(kind, eps), lam, tau, dt, 4).count;
  };
  std::size_t practical_loose = count_for(Mode::Practical, 0.2);
  std::size_t practical_tight = count_for(Mode::Practical, 0.05);
  std::size_t strict_tight = count_for(Mode::Strict, 0.05);
  CHECK(practical_loose <= practical_tight);
  CHECK(practical_tight <= strict_tight);
}

TEST_CASE("grid refinement never decreases the count") {
  auto sys = scalar_linear(0.5);
  sys.truncation_radius = 10.0;
  TargetSet lam = Box::point1d(0.0);
  auto zeta = KLFunction::exponential(0.5, 2.0);
  SpanningMode mode(Mode::Practical, 0.05);
  double tau = 1.5, dt = 0.01;
  Box gamma = Box::interval(-1.0, 1.0);

  auto coarse = grid_points(gamma, 21);
  auto fine = grid_points(gamma, 81);  // superset constraints, same candidates
  auto cands = build_candidates(sys, {gain(-2.5)}, coarse, tau, 150, dt);
  auto on_coarse = minimal_cover(sys, coarse, cands, zeta, mode, lam, tau, dt, 4);
  auto on_fine = minimal_cover(sys, fine, cands, zeta, mode, lam, tau, dt, 4);
  CHECK(on_fine.count >= on_coarse.count);
}

TEST_CASE("coverage matrices are independent of the worker count") {
  auto sys = scalar_linear(0.5);
  sys.truncation_radius = 10.0;
  TargetSet lam = Box::point1d(0.0);
  auto grid = grid_points(Box::interval(-1.0, 1.0), 31);
  auto zeta = KLFunction::exponential(0.5, 2.0);
  SpanningMode mode(Mode::Practical, 0.05);
  auto cands = build_candidates(sys, {gain(-2.5)}, grid, 1.0, 100, 0.01);
  auto seq = minimal_cover(sys, grid, cands, zeta, mode, lam, 1.0, 0.01, 1);
  auto par = minimal_cover(sys, grid, cands, zeta, mode, lam, 1.0, 0.01, 8);
  CHECK(seq.count == par.count);
  CHECK(seq.assignment == par.assignment);
}

TEST_CASE("entropy CSV has the fixed column layout") {
  EntropyEstimate est;
  est.horizons = {1.0, 2.0};
  est.counts = {3, 9};
  est.methods = {SpanningResult::Method::ExactSmall, SpanningResult::Method::Greedy};
  est.rate = 1.0;
  est.rate_at_max = std::log(9.0) / 2.0;
  auto csv = entropy_csv(est);
  CHECK(csv.rfind("tau,count,method,rate_running\n", 0) == 0);
  CHECK(csv.find("\n1,3,exact,") != std::string::npos);
  CHECK(csv.find("\n2,9,greedy,") != std::string::npos);
}
