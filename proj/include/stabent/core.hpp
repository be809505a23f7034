#pragma once

// Shared value types and small utilities: axis-aligned boxes in the max-norm,
// grid construction, error types, least-squares fitting and a deterministic
// parallel map helper.

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace stabent {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kBlowupLimit = 1e12;

inline double max_norm(const Vec& x) { return x.size() == 0 ? 0.0 : x.cwiseAbs().maxCoeff(); }

inline bool is_finite(const Vec& x) { return x.allFinite(); }

// ---------------------------------------------------------------------------
// Errors

struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Trajectory left the admissible region (a coordinate passed kBlowupLimit).
struct BlowupError : Error {
  double time;
  BlowupError(double t, const std::string& what) : Error(what), time(t) {}
};

// Feedback produced a control value outside the truncated control range.
struct RangeViolationError : Error {
  double time;
  Vec value;
  RangeViolationError(double t, Vec v, const std::string& what)
      : Error(what), time(t), value(std::move(v)) {}
};

// Some grid points cannot be covered by any candidate (r = infinity).
struct InfeasibleCoverError : Error {
  std::vector<int> uncovered;
  double horizon = 0.0;
  InfeasibleCoverError(std::vector<int> pts, const std::string& what)
      : Error(what), uncovered(std::move(pts)) {}
};

struct DiscriminantError : Error {
  using Error::Error;
};

struct SynthesisError : Error {
  using Error::Error;
};

struct NonAttractionError : Error {
  using Error::Error;
};

struct PreconditionError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  std::string field;
  ConfigError(std::string f, const std::string& what) : Error(what), field(std::move(f)) {}
};

// ---------------------------------------------------------------------------
// Axis-aligned boxes (the max-norm makes balls and boxes the same shape).

class Box {
 public:
  Box() = default;
  Box(Vec lo, Vec hi) : lo_(std::move(lo)), hi_(std::move(hi)) {
    if (lo_.size() != hi_.size()) throw PreconditionError("box bounds dimension mismatch");
    for (Eigen::Index i = 0; i < lo_.size(); ++i)
      if (lo_[i] > hi_[i]) throw PreconditionError("box has lo > hi on axis " + std::to_string(i));
  }

  static Box point(const Vec& p) { return Box(p, p); }
  static Box point1d(double p) { return point(Vec::Constant(1, p)); }
  static Box interval(double a, double b) {
    return Box(Vec::Constant(1, a), Vec::Constant(1, b));
  }
  static Box cube(int dim, double lo, double hi) {
    return Box(Vec::Constant(dim, lo), Vec::Constant(dim, hi));
  }

  int dim() const { return static_cast<int>(lo_.size()); }
  const Vec& lo() const { return lo_; }
  const Vec& hi() const { return hi_; }
  Vec side_lengths() const { return hi_ - lo_; }
  Vec center() const { return 0.5 * (lo_ + hi_); }
  bool is_point() const { return (hi_ - lo_).isZero(0.0); }
  bool is_bounded() const { return lo_.allFinite() && hi_.allFinite(); }

  bool contains(const Vec& x, double tol = 0.0) const {
    for (Eigen::Index i = 0; i < lo_.size(); ++i)
      if (x[i] < lo_[i] - tol || x[i] > hi_[i] + tol) return false;
    return true;
  }

  Vec clamp(const Vec& x) const { return x.cwiseMax(lo_).cwiseMin(hi_); }

  // Max-norm distance from x to the box, exact via coordinatewise clamping.
  double dist(const Vec& x) const {
    double d = 0.0;
    for (Eigen::Index i = 0; i < lo_.size(); ++i) {
      double gap = std::max({lo_[i] - x[i], x[i] - hi_[i], 0.0});
      d = std::max(d, gap);
    }
    return d;
  }

  // max_{y in other} dist(y, *this), exact for boxes in the max-norm.
  double max_dist_from(const Box& other) const {
    double d = 0.0;
    for (Eigen::Index i = 0; i < lo_.size(); ++i) {
      double gap = std::max({lo_[i] - other.lo_[i], other.hi_[i] - hi_[i], 0.0});
      d = std::max(d, gap);
    }
    return d;
  }

  Box inflate(double r) const {
    return Box(lo_.array() - r, hi_.array() + r);
  }

  Box intersect(const Box& other) const {
    Vec lo = lo_.cwiseMax(other.lo_);
    Vec hi = hi_.cwiseMin(other.hi_);
    for (Eigen::Index i = 0; i < lo.size(); ++i)
      if (lo[i] > hi[i]) throw PreconditionError("empty box intersection");
    return Box(lo, hi);
  }

 private:
  Vec lo_, hi_;
};

// Target set Lambda and initial set Gamma are boxes (a point is a degenerate box).
using TargetSet = Box;

inline double dist_to_target(const Vec& x, const TargetSet& target) { return target.dist(x); }

// ---------------------------------------------------------------------------
// Grids

inline std::vector<double> linspace(double a, double b, int n) {
  if (n < 1) throw PreconditionError("linspace needs n >= 1");
  std::vector<double> out(static_cast<std::size_t>(n));
  if (n == 1) {
    out[0] = 0.5 * (a + b);
    return out;
  }
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = a + (b - a) * i / (n - 1);
  return out;
}

// Uniform grid over a box, row-major over axes; degenerate axes get one point.
inline std::vector<Vec> grid_points(const Box& box, const std::vector<int>& per_axis) {
  if (static_cast<int>(per_axis.size()) != box.dim())
    throw PreconditionError("grid resolution dimension mismatch");
  std::vector<std::vector<double>> axes;
  axes.reserve(per_axis.size());
  for (int i = 0; i < box.dim(); ++i) {
    int n = box.hi()[i] == box.lo()[i] ? 1 : per_axis[static_cast<std::size_t>(i)];
    axes.push_back(linspace(box.lo()[i], box.hi()[i], n));
  }
  std::size_t total = 1;
  for (const auto& a : axes) total *= a.size();
  std::vector<Vec> pts;
  pts.reserve(total);
  std::vector<std::size_t> idx(axes.size(), 0);
  for (std::size_t k = 0; k < total; ++k) {
    Vec p(box.dim());
    for (int i = 0; i < box.dim(); ++i) p[i] = axes[static_cast<std::size_t>(i)][idx[static_cast<std::size_t>(i)]];
    pts.push_back(std::move(p));
    for (int i = box.dim() - 1; i >= 0; --i) {
      auto ui = static_cast<std::size_t>(i);
      if (++idx[ui] < axes[ui].size()) break;
      idx[ui] = 0;
    }
  }
  return pts;
}

inline std::vector<Vec> grid_points(const Box& box, int per_axis) {
  return grid_points(box, std::vector<int>(static_cast<std::size_t>(box.dim()), per_axis));
}

// A compact set together with its finite discretization.
struct GriddedSet {
  Box box;
  std::vector<Vec> points;
};

inline GriddedSet make_grid(const Box& box, const std::vector<int>& per_axis) {
  return GriddedSet{box, grid_points(box, per_axis)};
}

inline GriddedSet make_grid(const Box& box, int per_axis) {
  return GriddedSet{box, grid_points(box, per_axis)};
}

// ---------------------------------------------------------------------------
// Least squares slope of y against x.

inline double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw PreconditionError("fit_slope needs >= 2 points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) throw PreconditionError("fit_slope: degenerate abscissae");
  return sxy / sxx;
}

// ---------------------------------------------------------------------------
// Deterministic parallel map: results land in preassigned slots, so the output
// is independent of the worker count.

inline void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  jobs = std::max(1, jobs);
  std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::exception_ptr err;
  std::mutex err_mu;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        std::scoped_lock lk(err_mu);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

// ---------------------------------------------------------------------------
// Locale-free shortest round-trip formatting, used by every emitter.

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace stabent
