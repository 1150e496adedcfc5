#pragma once

#include "capres/capsolve.hpp"
#include "capres/common.hpp"
#include "capres/extension.hpp"
#include "capres/geometry.hpp"

namespace capres::adm {

using geom::Condenser;
using geom::CuspFunction;
using geom::Domain;
using nlohmann::json;

using capres::ScalarField;

// ---------------------------------------------------------------------------
// The radial three-branch profile: 1 inside rho/4, linear ramp down to 0 at
// rho/2, 0 beyond.  Shared by the bump family and the radial test function.

inline double ramp_profile(double d, double r) {
  if (d < 0.25 * r) return 1.0;
  if (d <= 0.5 * r) return -4.0 / r * d + 2.0;
  return 0.0;
}

inline double ramp_slope(double d, double r) {
  return (d > 0.25 * r && d < 0.5 * r) ? -4.0 / r : 0.0;
}

// Exact p-energy of the ramp over the full ball B(x, r) in R^n.
inline double ramp_energy(int n, double p, double r) {
  double shell = unit_ball_volume(n) *
                 (std::pow(0.5 * r, n) - std::pow(0.25 * r, n));
  return std::pow(4.0 / r, p) * shell;
}

// ---------------------------------------------------------------------------

struct TestFunction {
  std::string family;
  json params;
  int n = 3;
  std::function<double(const Pt&)> value;
  std::function<Pt(const Pt&)> grad;
  // Pointwise gradient-magnitude bound of the family.
  std::function<double(const Pt&)> grad_bound;
  // Exact/quadrature p-energy over the ambient window.
  std::function<double(double)> energy;

  ScalarField field() const { return {value, grad, family}; }
};

inline TestFunction bump_u(const Pt& x, double r) {
  if (!(r > 0)) throw ValidationError("bump_u: r must be positive");
  TestFunction f;
  f.family = "bump_u";
  f.n = x.n;
  f.params = {{"r", r}};
  for (int i = 0; i < x.n; ++i) f.params["x"].push_back(x[i]);
  int n = x.n;
  f.value = [x, r](const Pt& y) { return ramp_profile(dist(y, x), r); };
  f.grad = [x, r](const Pt& y) {
    double d = dist(y, x);
    Pt g = Pt::zero(y.n);
    double s = ramp_slope(d, r);
    if (s != 0.0 && d > 0)
      for (int i = 0; i < y.n; ++i) g[i] = s * (y[i] - x[i]) / d;
    return g;
  };
  f.grad_bound = [r](const Pt&) { return 4.0 / r; };
  f.energy = [n, r](double p) { return ramp_energy(n, p, r); };
  return f;
}

inline TestFunction radial_v(double r, int n) {
  TestFunction f = bump_u(Pt::zero(n), r);
  f.family = "radial_v";
  f.params = {{"r", r}};
  return f;
}

// ---------------------------------------------------------------------------
// Meridian-plane quadrature for laterally symmetric fields on B(0,r):
// integrates g(t, s) * omega_{n-2} s^{n-2} over the half-plane section,
// with breakpoint lists in both variables.

inline double meridian_integral(const std::function<double(double, double)>& g,
                                int n, double t_lo, double t_hi,
                                std::vector<double> t_breaks,
                                const std::function<std::vector<double>(double)>&
                                    s_breaks_at,
                                double tol = 1e-9) {
  double ang = (n == 2) ? 2.0 : unit_sphere_area(n - 1);
  // n = 2: two meridian half-lines; n >= 3: omega_{n-2} * s^{n-2} measure.
  t_breaks.push_back(t_lo);
  t_breaks.push_back(t_hi);
  std::vector<double> tb;
  for (double t : t_breaks)
    if (t >= t_lo - 1e-300 && t <= t_hi + 1e-300) tb.push_back(t);
  auto outer = [&](double t) {
    std::vector<double> sb = s_breaks_at(t);
    std::sort(sb.begin(), sb.end());
    auto inner = [&](double s) {
      double w = (n == 2) ? 1.0 : std::pow(s, n - 2);
      return g(t, s) * w;
    };
    double acc = 0;
    for (size_t i = 0; i + 1 < sb.size(); ++i)
      if (sb[i + 1] > sb[i] + 1e-300)
        acc += integrate_1d(inner, sb[i], sb[i + 1], tol);
    return acc;
  };
  double acc = 0;
  std::sort(tb.begin(), tb.end());
  for (size_t i = 0; i + 1 < tb.size(); ++i)
    if (tb[i + 1] > tb[i] + 1e-300)
      acc += integrate_1d(outer, tb[i], tb[i + 1], std::sqrt(tol) * 1e-3);
  return ang * acc;
}

// ---------------------------------------------------------------------------
// Lateral cut-off times radial ramp: the test function for narrow-profile
// windows at the cusp tip (p < n-1 branch).

inline TestFunction cusp_v1(double r, const CuspFunction& w, int n) {
  if (!(r > 0 && r < 1)) throw ValidationError("cusp_v1: need 0 < r < 1");
  double w4 = w(0.25 * r), w2 = w(0.5 * r);
  if (!(w4 < w2)) throw ValidationError("cusp_v1: degenerate lateral cut");
  TestFunction f;
  f.family = "cusp_v1";
  f.n = n;
  f.params = {{"r", r}, {"w", w.to_json()}};

  auto lateral = [w4, w2](double s) {
    if (s < w4) return 1.0;
    if (s <= w2) return (w2 - s) / (w2 - w4);
    return 0.0;
  };
  auto lateral_slope = [w4, w2](double s) {
    return (s > w4 && s < w2) ? -1.0 / (w2 - w4) : 0.0;
  };

  f.value = [r, lateral](const Pt& z) {
    return ramp_profile(norm2(z), r) * lateral(lateral_norm(z));
  };
  f.grad = [r, lateral, lateral_slope](const Pt& z) {
    double rho = norm2(z), s = lateral_norm(z);
    double V = ramp_profile(rho, r), dV = ramp_slope(rho, r);
    double F = lateral(s), dF = lateral_slope(s);
    Pt g = Pt::zero(z.n);
    for (int i = 0; i < z.n; ++i) {
      double gi = 0;
      if (dV != 0.0 && rho > 0) gi += dV * (z[i] / rho) * F;
      if (dF != 0.0 && i >= 1 && s > 0) gi += V * dF * (z[i] / s);
      g[i] = gi;
    }
    return g;
  };
  double wr = w(r);
  double bound = 4.0 / r + 1.0 / (w2 - w4);
  f.grad_bound = [bound, wr](const Pt&) {
    static_cast<void>(wr);
    return bound;
  };
  f.energy = [f, n, r, w2](double p) {
    auto g2 = [&](double t, double s) {
      Pt z = Pt::zero(n);
      z[0] = t;
      z[1] = s;
      Pt gr = f.grad(z);
      double m2 = dot(gr, gr);
      return m2 == 0.0 ? 0.0 : std::pow(m2, 0.5 * p);
    };
    double r4 = 0.25 * r, r2 = 0.5 * r;
    return meridian_integral(
        g2, n, -r2, r2, {-r2, -r4, 0.0, r4, r2},
        [&](double t) {
          std::vector<double> sb{0.0, w2};
          double q2 = r2 * r2 - t * t, q4 = r4 * r4 - t * t;
          if (q2 > 0) sb.push_back(std::sqrt(q2));
          if (q4 > 0) sb.push_back(std::sqrt(q4));
          double top = std::sqrt(std::max(q2, 0.0));
          std::vector<double> out;
          for (double s : sb)
            if (s <= top + 1e-300) out.push_back(std::min(s, top));
          out.push_back(0.0);
          out.push_back(top);
          return out;
        });
  };
  return f;
}

// ---------------------------------------------------------------------------
// Logarithmic lateral cut combined with the logarithmic radial factor
// (the p = n-1 borderline family).

inline TestFunction cusp_logcut_v2(double r, const CuspFunction& w, int n) {
  if (!(r > 0 && r < 1)) throw ValidationError("cusp_logcut_v2: need 0 < r < 1");
  double w4 = w(0.25 * r);
  if (!(w4 < 0.25 * r))
    throw ValidationError("cusp_logcut_v2: lateral log cut degenerates");
  TestFunction f;
  f.family = "cusp_logcut_v2";
  f.n = n;
  f.params = {{"r", r}, {"w", w.to_json()}};

  double denom = std::log(4.0 * w4 / r);  // negative
  auto F2 = [r, w4, denom](double s) {
    if (s < w4) return 1.0;
    if (s <= 0.25 * r) return std::log(4.0 * s / r) / denom;
    return 0.0;
  };
  auto dF2 = [r, w4, denom](double s) {
    return (s > w4 && s < 0.25 * r) ? 1.0 / (s * denom) : 0.0;
  };
  const double ln_half = std::log(0.5);
  auto G = [r, ln_half](double rho) {
    if (rho < 0.25 * r) return 1.0;
    if (rho <= 0.5 * r) return std::log(2.0 * rho / r) / ln_half;
    return 0.0;
  };
  auto dG = [r, ln_half](double rho) {
    return (rho > 0.25 * r && rho < 0.5 * r) ? 1.0 / (rho * ln_half) : 0.0;
  };

  f.value = [F2, G](const Pt& z) {
    return F2(lateral_norm(z)) * G(norm2(z));
  };
  f.grad = [F2, dF2, G, dG](const Pt& z) {
    double s = lateral_norm(z), rho = norm2(z);
    double A = F2(s), dA = dF2(s), B = G(rho), dB = dG(rho);
    Pt g = Pt::zero(z.n);
    for (int i = 0; i < z.n; ++i) {
      double gi = 0;
      if (dB != 0.0 && rho > 0) gi += A * dB * z[i] / rho;
      if (dA != 0.0 && i >= 1 && s > 0) gi += B * dA * z[i] / s;
      g[i] = gi;
    }
    return g;
  };
  double wr = w(r);
  f.grad_bound = [r, wr](const Pt& z) {
    double s = std::max(lateral_norm(z), 1e-12);
    // C / (|x| log(r/w(r))) on the active slab
    double logf = std::log(r / wr);
    return 4.0 / (s * std::min(logf, std::abs(std::log(4.0 * 0.25)))) + 8.0 / r +
           2.0 / (s * logf);
  };
  f.energy = [f, n, r, w4](double p) {
    auto g2 = [&](double t, double s) {
      Pt z = Pt::zero(n);
      z[0] = t;
      z[1] = s;
      Pt gr = f.grad(z);
      double m2 = dot(gr, gr);
      return m2 == 0.0 ? 0.0 : std::pow(m2, 0.5 * p);
    };
    double r4 = 0.25 * r, r2 = 0.5 * r;
    return meridian_integral(
        g2, n, -r2, r2, {-r2, -r4, 0.0, r4, r2},
        [&](double t) {
          std::vector<double> sb{0.0, w4, 0.25 * r};
          double q2 = r2 * r2 - t * t, q4 = r4 * r4 - t * t;
          if (q2 > 0) sb.push_back(std::sqrt(q2));
          if (q4 > 0) sb.push_back(std::sqrt(q4));
          double top = std::sqrt(std::max(q2, 0.0));
          std::vector<double> out;
          for (double s : sb)
            if (s <= top + 1e-300) out.push_back(std::min(s, top));
          out.push_back(0.0);
          out.push_back(top);
          return out;
        });
  };
  return f;
}

// ---------------------------------------------------------------------------
// The decay test function on the Cantor-cylinder domain: the radial bump at
// x in E^{n-1} x (3/2, 2) times the extension of the constant-one function.
// The extension preserves constants, so the factor is verified to be 1 and
// the energy reduces to the bump's closed form.

inline TestFunction cantor_vF(const Pt& x, double r,
                              std::shared_ptr<geom::CantorCylinderSpec> spec) {
  if (!(r > 0 && r < 0.25)) throw ValidationError("cantor_vF: need 0 < r < 1/4");
  if (!(x[x.n - 1] > 1.5 && x[x.n - 1] < 2.0))
    throw ValidationError("cantor_vF: base point must lie on the exceptional set");
  if (!spec->obstacle || spec->obstacle->distance(x) > 1e-12)
    throw ValidationError("cantor_vF: base point must lie on the exceptional set");

  auto ext_op = std::make_shared<ext::CantorExtension>(spec);
  int m = spec->truncation_m;
  ScalarField one{[](const Pt&) { return 1.0; },
                  [](const Pt& y) { return Pt::zero(y.n); }, "one"};

  TestFunction f;
  f.family = "cantor_vF";
  f.n = x.n;
  f.params = {{"r", r}, {"spec", spec->to_json()}};
  for (int i = 0; i < x.n; ++i) f.params["x"].push_back(x[i]);
  int n = x.n;

  f.value = [x, r, ext_op, one, m](const Pt& y) {
    double fh = ramp_profile(dist(y, x), r);
    if (fh == 0.0) return 0.0;
    return fh * ext_op->eval(one, m, y);
  };
  f.grad = [x, r, ext_op, one, m](const Pt& y) {
    double d = dist(y, x);
    Pt g = Pt::zero(y.n);
    double s = ramp_slope(d, r);
    if (s != 0.0 && d > 0) {
      double e = ext_op->eval(one, m, y);
      Pt ge = ext_op->grad(one, m, y);
      double fh = ramp_profile(d, r);
      for (int i = 0; i < y.n; ++i)
        g[i] = s * (y[i] - x[i]) / d * e + fh * ge[i];
    }
    return g;
  };
  f.grad_bound = [r](const Pt&) { return 4.0 / r; };
  f.energy = [x, r, n, ext_op, one, m](double q) {
    // the extension of the constant must be exactly 1 across the window
    Rng rng(133);
    for (int i = 0; i < 200; ++i) {
      Pt y = x;
      double rad = r * std::pow(rng.uniform(0, 1), 1.0 / 3.0);
      double ct = rng.uniform(-1, 1), ph = rng.uniform(0, 2 * M_PI);
      double st = std::sqrt(1 - ct * ct);
      y[0] += rad * st * std::cos(ph);
      y[1] += rad * st * std::sin(ph);
      y[2] += rad * ct;
      double e = ext_op->eval(one, m, y);
      if (std::abs(e - 1.0) > 1e-12)
        throw NumericalError("cantor_vF: extension of the constant is not 1");
    }
    return ramp_energy(n, q, r);
  };
  return f;
}

// ---------------------------------------------------------------------------
// Admissibility check against a condenser: u >= 1 - tol on sampled E,
// u <= tol on sampled F.

inline void check_admissible(const TestFunction& f, const Condenser& c,
                             double tol = 1e-9, int samples = 300,
                             uint64_t seed = 23) {
  Rng rng(seed);
  for (int i = 0; i < samples; ++i) {
    Pt e = c.plateE.sample_inside(rng, 4000);
    if (f.value(e) < 1.0 - tol)
      throw ValidationError("admissibility: u < 1 on plate E at sample");
  }
  for (int i = 0; i < samples; ++i) {
    Pt q = c.plateF.sample_inside(rng, 4000);
    if (f.value(q) > tol)
      throw ValidationError("admissibility: u > 0 on plate F at sample");
  }
}

// Upper bound for the capacity from an admissible function's energy.
inline cap::CapacityEstimate upper_bound_from_admissible(const Condenser& c,
                                                         const TestFunction& f,
                                                         double tol = 1e-9) {
  check_admissible(f, c, tol);
  cap::CapacityEstimate est;
  est.kind = cap::EstimateKind::TestFunctionUpperBound;
  est.value = f.energy(c.p);
  est.resolution = {{"quadrature", "meridian_adaptive"}};
  return est;
}

}  // namespace capres::adm
