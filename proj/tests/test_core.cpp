#include "stabent/core.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <random>

using namespace stabent;

TEST_CASE("max-norm distance to boxes") {
  Box point = Box::point(Vec::Constant(2, 0.0));
  Vec x(2);
  x << 3.0, 0.0;
  Box lam = Box::point((Vec(2) << 1.0, 0.0).finished());
  CHECK(lam.dist(x) == 2.0);

  Box square = Box::cube(2, -1.0, 1.0);
  Vec inside(2);
  inside << 0.3, -0.9;
  CHECK(square.dist(inside) == 0.0);

  Vec outside(2);
  outside << 2.0, 5.0;
  CHECK(square.dist(outside) == 4.0);  // max(1, 4), coordinatewise clamp

  CHECK(point.dim() == 2);
}

TEST_CASE("distance satisfies the triangle-type inequality") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> coord(-5.0, 5.0);
  Box lam(Vec::Constant(3, -0.5), Vec::Constant(3, 0.75));
  for (int trial = 0; trial < 500; ++trial) {
    Vec x(3), y(3);
    for (int i = 0; i < 3; ++i) {
      x[i] = coord(rng);
      y[i] = coord(rng);
    }
    CHECK(lam.dist(x) <= max_norm(x - y) + lam.dist(y) + 1e-12);
  }
}

TEST_CASE("max distance from a box to the target is exact") {
  Box gamma = Box::interval(-1.0, 1.0);
  Box lam = Box::point1d(0.0);
  CHECK(lam.max_dist_from(gamma) == 1.0);

  Box gamma2 = Box::interval(0.5, 1.0);
  CHECK(lam.max_dist_from(gamma2) == 1.0);
  CHECK(gamma2.max_dist_from(gamma2) == 0.0);

  Box lam2 = Box::interval(-0.25, 0.25);
  CHECK(lam2.max_dist_from(gamma) == 0.75);
}

TEST_CASE("grids cover boxes deterministically") {
  Box b = Box::interval(-1.0, 1.0);
  auto pts = grid_points(b, 201);
  REQUIRE(pts.size() == 201);
  CHECK(pts.front()[0] == -1.0);
  CHECK(pts.back()[0] == 1.0);
  for (const auto& p : pts) CHECK(b.contains(p));

  Box sq = Box::cube(2, 0.0, 1.0);
  auto grid2 = grid_points(sq, 3);
  REQUIRE(grid2.size() == 9);
  CHECK(grid2[1][1] == 0.5);  // row-major over axes

  Box pt = Box::point1d(2.0);
  CHECK(grid_points(pt, 100).size() == 1);
}

TEST_CASE("parallel_for is exception-safe and result-deterministic") {
  std::vector<double> a(1000), b(1000);
  parallel_for(a.size(), 1, [&](std::size_t i) { a[i] = std::sin(0.1 * static_cast<double>(i)); });
  parallel_for(b.size(), 8, [&](std::size_t i) { b[i] = std::sin(0.1 * static_cast<double>(i)); });
  CHECK(a == b);

  CHECK_THROWS_AS(parallel_for(10, 4,
                               [](std::size_t i) {
                                 if (i == 3) throw Error("boom");
                               }),
                  Error);
}

TEST_CASE("least-squares slope") {
  std::vector<double> x{1, 2, 3, 4};
  std::vector<double> y{2, 4, 6, 8};
  CHECK_THAT(fit_slope(x, y), Catch::Matchers::WithinAbs(2.0, 1e-14));
}

TEST_CASE("shortest round-trip double formatting") {
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(1e-3) == "0.001");
  double v = 0.1 + 0.2;
  CHECK(std::stod(format_double(v)) == v);
}
