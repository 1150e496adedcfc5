#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace capres {

inline constexpr const char* kVersion = "capres 0.3.0";

// ---------------------------------------------------------------------------
// Errors

struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// Small point type, dimension 2..4 at runtime.

struct Pt {
  std::array<double, 4> c{0.0, 0.0, 0.0, 0.0};
  int n = 3;

  Pt() = default;
  Pt(double x, double y) : c{x, y, 0.0, 0.0}, n(2) {}
  Pt(double x, double y, double z) : c{x, y, z, 0.0}, n(3) {}
  Pt(std::initializer_list<double> xs) {
    n = static_cast<int>(xs.size());
    int i = 0;
    for (double v : xs) c[static_cast<size_t>(i++)] = v;
  }
  static Pt zero(int dim) {
    Pt p;
    p.n = dim;
    return p;
  }
  double& operator[](int i) { return c[static_cast<size_t>(i)]; }
  double operator[](int i) const { return c[static_cast<size_t>(i)]; }
};

inline Pt operator+(Pt a, const Pt& b) {
  for (int i = 0; i < a.n; ++i) a[i] += b[i];
  return a;
}
inline Pt operator-(Pt a, const Pt& b) {
  for (int i = 0; i < a.n; ++i) a[i] -= b[i];
  return a;
}
inline Pt operator*(double s, Pt a) {
  for (int i = 0; i < a.n; ++i) a[i] *= s;
  return a;
}

inline double dot(const Pt& a, const Pt& b) {
  double s = 0;
  for (int i = 0; i < a.n; ++i) s += a[i] * b[i];
  return s;
}
inline double norm2(const Pt& a) { return std::sqrt(dot(a, a)); }
inline double dist(const Pt& a, const Pt& b) { return norm2(a - b); }

// Lateral radius |(x_2, ..., x_n)| of z = (t, x).
inline double lateral_norm(const Pt& z) {
  double s = 0;
  for (int i = 1; i < z.n; ++i) s += z[i] * z[i];
  return std::sqrt(s);
}

// Scalar field with an analytic gradient.
struct ScalarField {
  std::function<double(const Pt&)> value;
  std::function<Pt(const Pt&)> grad;
  std::string name;

  double operator()(const Pt& x) const { return value(x); }
};

// ---------------------------------------------------------------------------
// Axis-aligned box.

struct BBox {
  Pt lo, hi;

  int dim() const { return lo.n; }
  bool contains(const Pt& p, double tol = 0.0) const {
    for (int i = 0; i < lo.n; ++i)
      if (p[i] < lo[i] - tol || p[i] > hi[i] + tol) return false;
    return true;
  }
  double extent(int axis) const { return hi[axis] - lo[axis]; }
  double volume() const {
    double v = 1;
    for (int i = 0; i < lo.n; ++i) v *= extent(i);
    return v;
  }
  static BBox of_ball(const Pt& x, double r) {
    BBox b{x, x};
    for (int i = 0; i < x.n; ++i) {
      b.lo[i] -= r;
      b.hi[i] += r;
    }
    return b;
  }
  static BBox hull(const BBox& a, const BBox& b) {
    BBox h = a;
    for (int i = 0; i < a.dim(); ++i) {
      h.lo[i] = std::min(a.lo[i], b.lo[i]);
      h.hi[i] = std::max(a.hi[i], b.hi[i]);
    }
    return h;
  }
};

// ---------------------------------------------------------------------------
// Deterministic pairwise summation (binary-counter scheme).  The reduction
// tree depends only on the push order, so sums are bitwise reproducible.

class PairwiseSum {
 public:
  void push(double x) {
    uint64_t mask = count_;
    ++count_;
    size_t lvl = 0;
    while (mask & 1u) {
      x += stack_[lvl];
      mask >>= 1;
      ++lvl;
    }
    if (lvl >= stack_.size()) stack_.resize(lvl + 1, 0.0);
    stack_[lvl] = x;
  }
  double value() const {
    double s = 0;
    uint64_t mask = count_;
    for (size_t lvl = 0; lvl < stack_.size(); ++lvl, mask >>= 1)
      if (mask & 1u) s += stack_[lvl];
    return s;
  }
  void reset() {
    count_ = 0;
    stack_.clear();
  }

 private:
  std::vector<double> stack_;
  uint64_t count_ = 0;
};

// ---------------------------------------------------------------------------
// Seeded RNG helpers.

class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}
  double uniform(double a, double b) {
    return std::uniform_real_distribution<double>(a, b)(eng_);
  }
  Pt in_box(const BBox& box) {
    Pt p = Pt::zero(box.dim());
    for (int i = 0; i < box.dim(); ++i) p[i] = uniform(box.lo[i], box.hi[i]);
    return p;
  }
  uint64_t next_u64() { return eng_(); }

 private:
  std::mt19937_64 eng_;
};

// ---------------------------------------------------------------------------
// 1D adaptive Simpson quadrature.

namespace detail {
inline double simpson(const std::function<double(double)>& f, double a,
                      double b, double fa, double fm, double fb) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

inline double adapt(const std::function<double(double)>& f, double a, double b,
                    double fa, double fm, double fb, double whole, double tol,
                    int depth) {
  double m = 0.5 * (a + b);
  double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  double flm = f(lm), frm = f(rm);
  double left = simpson(f, a, m, fa, flm, fm);
  double right = simpson(f, m, b, fm, frm, fb);
  double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) < 15.0 * tol)
    return left + right + delta / 15.0;
  return adapt(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         adapt(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}
}  // namespace detail

inline double integrate_1d(const std::function<double(double)>& f, double a,
                           double b, double tol = 1e-10, int max_depth = 40) {
  if (!(b > a)) return 0.0;
  double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  double whole = detail::simpson(f, a, b, fa, fm, fb);
  return detail::adapt(f, a, b, fa, fm, fb, whole, tol, max_depth);
}

// Integrate with interior breakpoints where the integrand has kinks.
inline double integrate_1d_pieces(const std::function<double(double)>& f,
                                  std::vector<double> breaks,
                                  double tol = 1e-10) {
  std::sort(breaks.begin(), breaks.end());
  double s = 0;
  for (size_t i = 0; i + 1 < breaks.size(); ++i) {
    if (breaks[i + 1] - breaks[i] < 1e-300) continue;
    s += integrate_1d(f, breaks[i], breaks[i + 1], tol);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Misc numeric helpers.

inline double sq(double x) { return x * x; }

inline double pow_int(double x, int k) {
  double r = 1;
  for (int i = 0; i < k; ++i) r *= x;
  return r;
}

// Surface measure of the unit sphere S^{n-1} in R^n.
inline double unit_sphere_area(int n) {
  // omega_{n-1} = 2 pi^{n/2} / Gamma(n/2)
  return 2.0 * std::pow(M_PI, 0.5 * n) / std::tgamma(0.5 * n);
}

// Volume of the unit ball in R^n.
inline double unit_ball_volume(int n) { return unit_sphere_area(n) / n; }

inline double relative_diff(double a, double b) {
  double den = std::max(std::abs(a), std::abs(b));
  if (den == 0) return 0;
  return std::abs(a - b) / den;
}

// Run f(i) for i in [0, nitems) on up to `jobs` workers.  Each item writes
// only its own output slot, so results do not depend on the worker count.
template <class F>
inline void parallel_for(int nitems, int jobs, F&& f) {
  jobs = std::max(1, std::min(jobs, nitems));
  if (jobs <= 1) {
    for (int i = 0; i < nitems; ++i) f(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::atomic<bool> failed{false};
  std::string first_error;
  std::mutex err_mx;
  for (int w = 0; w < jobs; ++w)
    pool.emplace_back([&]() {
      while (true) {
        int i = next.fetch_add(1);
        if (i >= nitems) break;
        try {
          f(i);
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lk(err_mx);
          if (!failed.exchange(true)) first_error = e.what();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failed) throw NumericalError("parallel_for: " + first_error);
}

// Least-squares line fit of y against x; returns {slope, intercept, r2}.
struct LineFit {
  double slope = 0, intercept = 0, r2 = 0;
};

inline LineFit fit_line(const std::vector<double>& x,
                        const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw ValidationError("fit_line: need >= 2 points");
  size_t m = x.size();
  double sx = 0, sy = 0;
  for (size_t i = 0; i < m; ++i) {
    sx += x[i];
    sy += y[i];
  }
  double mx = sx / m, my = sy / m;
  double sxx = 0, sxy = 0, syy = 0;
  for (size_t i = 0; i < m; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0) throw ValidationError("fit_line: degenerate abscissae");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = (syy == 0) ? 1.0 : (sxy * sxy) / (sxx * syy);
  return f;
}

}  // namespace capres
