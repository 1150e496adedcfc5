#pragma once

#include "capres/admissible.hpp"
#include "capres/capsolve.hpp"
#include "capres/common.hpp"
#include "capres/extension.hpp"
#include "capres/geometry.hpp"

namespace capres::ana {

using adm::TestFunction;
using cap::CapacityEstimate;
using cap::SolverOptions;
using geom::Condenser;
using geom::CuspFunction;
using geom::Domain;
using grid::Lattice;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Window conventions (two ways to cut the plates around a point):
//   A: plates B(x, r/4) and A(x; r/2, 3r/4), ambient B(x, r)
//   B: plates B(x, t) and A(x; 2t, 3t), ambient B(x, 4t)

enum class WindowConvention { QuarterHalf, OneTwoThree };

struct Window {
  double inner, ann_lo, ann_hi, ambient;
  static Window make(WindowConvention c, double scale) {
    if (c == WindowConvention::QuarterHalf)
      return {0.25 * scale, 0.5 * scale, 0.75 * scale, scale};
    return {scale, 2.0 * scale, 3.0 * scale, 4.0 * scale};
  }
};

// Closed form for the ball-plate reference capacity of a window: the free
// region is the spherical shell between the inner plate and the annulus, so
// the concentric formula applies with r = inner, R = ann_lo.
inline double window_reference_capacity(int n, double p, const Window& w) {
  return cap::oracle_concentric_balls(n, p, w.inner, w.ann_lo);
}

// ---------------------------------------------------------------------------
// Meridian-plane (axially symmetric) condensers.  A rotationally invariant
// condenser in R^n reduces to the (t, s) half-plane with the measure factor
// omega_{n-2} s^{n-2}; plate geometry, solver and energies act on the 2D
// lattice with that cell weight.

struct MeridianProblem {
  Condenser cond2d;         // in (t, s) coordinates
  int n = 3;                // ambient dimension represented
  grid::CellWeight weight;  // omega_{n-2} s^{n-2}

  static grid::CellWeight rotation_weight(int n) {
    double ang = (n == 2) ? 2.0 : unit_sphere_area(n - 1);
    return [n, ang](const Pt& c) {
      double s = std::max(c[1], 0.0);
      return ang * ((n == 2) ? 1.0 : std::pow(s, n - 2));
    };
  }
};

// Membership of the outward cusp domain in meridian coordinates (tip at the
// origin, axis along t).
inline Domain meridian_cusp(const CuspFunction& w, double t_hi, double s_hi) {
  Pt lo{0.0, 0.0}, hi{std::min(t_hi, 2.0 + std::sqrt(2.0)), s_hi};
  json spec = {{"kind", "meridian_cusp"}, {"w", w.to_json()}};
  Domain d(2, BBox{lo, hi},
           [w](const Pt& z) {
             double t = z[0], s = z[1];
             if (s < 0) return false;
             if (t > 0.0 && t <= 1.0 && s < w(t)) return true;
             return sq(t - 2.0) + sq(s) < 2.0;
           },
           spec);
  d.set_sampler([w](Rng& rng) {
    double t = rng.uniform(1e-9, 1.0);
    return Pt{t, rng.uniform(0.0, w(t))};
  });
  return d;
}

// Unit ball seen from the boundary point (1,0,...,0): meridian coordinates
// (a, s) with a along the inward axis.  Membership: (1 - a)^2 + s^2 < 1
// rewritten so the base point is the origin: point = (a, s), domain center at
// a = 1.
inline Domain meridian_ball_at_boundary(double a_extent, double s_extent) {
  Pt lo{-a_extent, 0.0}, hi{a_extent, s_extent};
  json spec = {{"kind", "meridian_ball_boundary"}};
  return Domain(2, BBox{lo, hi},
                [](const Pt& z) {
                  return z[1] >= 0.0 && sq(z[0] - 1.0) + sq(z[1]) < 1.0;
                },
                spec);
}

inline Domain meridian_disk(const Pt& c, double r, bool keep_upper = true) {
  Pt lo{c[0] - r, keep_upper ? 0.0 : c[1] - r}, hi{c[0] + r, c[1] + r};
  json spec = {{"kind", "meridian_disk"}, {"r", r}};
  return Domain(2, BBox{lo, hi},
                [c, r](const Pt& z) {
                  return z[1] >= 0.0 && sq(z[0] - c[0]) + sq(z[1] - c[1]) < r * r;
                },
                spec);
}

inline Domain meridian_annulus(const Pt& c, double rin, double rout) {
  Pt lo{c[0] - rout, 0.0}, hi{c[0] + rout, c[1] + rout};
  json spec = {{"kind", "meridian_annulus"}, {"inner", rin}, {"outer", rout}};
  return Domain(2, BBox{lo, hi},
                [c, rin, rout](const Pt& z) {
                  double d2 = sq(z[0] - c[0]) + sq(z[1] - c[1]);
                  return z[1] >= 0.0 && d2 >= rin * rin && d2 < rout * rout;
                },
                spec);
}

// Lattice policy for tip windows.  Two regimes, fixed per sweep so every
// radius of a series is discretized the same way:
//  - resolved: the profile spans several cells; spacing follows the window.
//  - wire: the profile is below any affordable resolution; the spacing locks
//    to the profile width so the axis plate keeps an effective radius
//    proportional to the true one across the sweep.
inline constexpr int kTipDimsCap = 512;

inline bool tip_profile_resolved(double plate_width, double ambient_radius,
                                 int dims_cap = kTipDimsCap) {
  return plate_width >= 3.0 * (2.0 * ambient_radius / dims_cap);
}

inline Lattice tip_lattice(double ambient_radius, double profile_width,
                           bool resolved, int dims_cap = kTipDimsCap) {
  double h = resolved ? 2.0 * ambient_radius / dims_cap : 0.5 * profile_width;
  h = std::max(h, 2.0 * ambient_radius / 4096.0);
  int nt = static_cast<int>(std::ceil(2.0 * ambient_radius / h)) + 1;
  int ns = static_cast<int>(std::ceil(ambient_radius / h)) + 1;
  return Lattice(Pt{-ambient_radius, 0.0}, h, {nt, ns});
}

// Solve the capacity of (domain ∩ inner plate, F; ambient ball) for a
// meridian-symmetric configuration centered at the origin of the (t, s)
// chart.  When `intersect_annulus` is set the far plate is domain ∩ annulus,
// otherwise the full annulus.
struct TipCapacityResult {
  CapacityEstimate estimate;
  json config;
};

inline TipCapacityResult tip_capacity(const Domain& meridian_domain, int n,
                                      double p, const Window& win,
                                      bool intersect_annulus,
                                      const SolverOptions& opts,
                                      double profile_width, bool resolved,
                                      const Pt& center = Pt{0.0, 0.0}) {
  Condenser c;
  Domain inner = meridian_disk(center, win.inner);
  Domain annul = meridian_annulus(center, win.ann_lo, win.ann_hi);
  c.plateE = geom::intersect(meridian_domain, inner);
  c.plateF = intersect_annulus ? geom::intersect(meridian_domain, annul) : annul;
  c.ambient = meridian_disk(center, win.ambient);
  c.p = p;
  Lattice lat = tip_lattice(win.ambient, profile_width, resolved);
  // shift the lattice to the window center
  lat.origin[0] += center[0];
  grid::CellMask mask = grid::rasterize(c, lat, true);
  auto res = cap::solve_capacity_masked(c, mask, opts,
                                        MeridianProblem::rotation_weight(n));
  TipCapacityResult out;
  out.estimate = res.estimate;
  out.config = {{"n", n},          {"p", p},
                {"window", {win.inner, win.ann_lo, win.ann_hi, win.ambient}},
                {"lattice", lat.to_json()},
                {"intersect_annulus", intersect_annulus}};
  return out;
}

// ---------------------------------------------------------------------------
// log-log fitting.

struct FitResult {
  double slope = 0, intercept = 0, r2 = 0;
};

inline FitResult loglog_fit(const std::vector<double>& radii,
                            const std::vector<double>& values) {
  if (radii.size() != values.size() || radii.size() < 3)
    throw ValidationError("loglog_fit: need >= 3 points");
  std::vector<double> lx, ly;
  for (size_t i = 0; i < radii.size(); ++i) {
    if (!(values[i] > 0) || !(radii[i] > 0))
      throw ValidationError("loglog_fit: nonpositive data");
    lx.push_back(std::log(radii[i]));
    ly.push_back(std::log(values[i]));
  }
  LineFit f = fit_line(lx, ly);
  return {f.slope, f.intercept, f.r2};
}

// ---------------------------------------------------------------------------
// Scaling sweep at the cusp tip.

enum class CuspBranch { High, Borderline, Low };  // p > n-1, p = n-1, p < n-1

inline CuspBranch branch_of(int n, double p) {
  if (std::abs(p - (n - 1)) < 1e-12) return CuspBranch::Borderline;
  return p > n - 1 ? CuspBranch::High : CuspBranch::Low;
}

inline double predicted_tip_capacity(const CuspFunction& w, int n, double p,
                                     double r) {
  switch (branch_of(n, p)) {
    case CuspBranch::High:
      return std::pow(r, n - p);
    case CuspBranch::Borderline:
      return r / std::pow(std::log(r / w(r)), n - 2);
    case CuspBranch::Low:
      return r * std::pow(w(r), n - 1 - p);
  }
  return 0;
}

struct ScalingSeries {
  std::vector<double> radii;
  std::vector<CapacityEstimate> lower;  // solver values
  std::vector<CapacityEstimate> upper;  // admissible-function bounds
  std::vector<double> predicted;
  json config;
  bool partial = false;

  std::vector<double> lower_values() const {
    std::vector<double> v;
    for (auto& e : lower) v.push_back(e.value);
    return v;
  }
  std::vector<double> upper_values() const {
    std::vector<double> v;
    for (auto& e : upper) v.push_back(e.value);
    return v;
  }
};

inline TestFunction branch_test_function(const CuspFunction& w, int n, double p,
                                         double r) {
  switch (branch_of(n, p)) {
    case CuspBranch::High:
      return adm::radial_v(r, n);
    case CuspBranch::Borderline:
      return adm::cusp_logcut_v2(r, w, n);
    case CuspBranch::Low:
      return adm::cusp_v1(r, w, n);
  }
  throw ValidationError("branch_test_function: unreachable");
}

inline ScalingSeries scaling_sweep(const CuspFunction& w, int n, double p,
                                   const std::vector<double>& radii,
                                   WindowConvention conv,
                                   const SolverOptions& opts) {
  ScalingSeries S;
  S.config = {{"kind", "scaling_sweep"}, {"n", n}, {"p", p}, {"w", w.to_json()}};
  Domain dom = meridian_cusp(w, 4.0, 4.0);
  double r_min = *std::min_element(radii.begin(), radii.end());
  Window win_min = Window::make(conv, r_min);
  // Bulk branch: plate thinness does not drive the capacity and the
  // scale-proportional lattice makes the discrete problems exactly similar.
  bool resolved = (p > n - 1) || tip_profile_resolved(w(win_min.inner), win_min.ambient);
  S.config["resolved_profile"] = resolved;
  int m = static_cast<int>(radii.size());
  S.radii = radii;
  S.predicted.resize(radii.size());
  S.lower.resize(radii.size());
  S.upper.resize(radii.size());
  for (double r : radii)
    if (!(r > 0 && r < 1)) throw ValidationError("scaling_sweep: radii in (0,1)");
  parallel_for(m, opts.jobs, [&](int i) {
    double r = radii[static_cast<size_t>(i)];
    Window win = Window::make(conv, r);
    S.predicted[static_cast<size_t>(i)] = predicted_tip_capacity(w, n, p, r);
    try {
      auto tc =
          tip_capacity(dom, n, p, win, false, opts, w(win.ambient), resolved);
      S.lower[static_cast<size_t>(i)] = tc.estimate;
    } catch (const std::exception&) {
      S.lower[static_cast<size_t>(i)].converged = false;
      S.partial = true;
    }
    // admissible upper bound for the same condenser family
    TestFunction tf = branch_test_function(w, n, p, r);
    CapacityEstimate ub;
    ub.kind = cap::EstimateKind::TestFunctionUpperBound;
    ub.value = tf.energy(p);
    S.upper[static_cast<size_t>(i)] = ub;
  });
  return S;
}

// ---------------------------------------------------------------------------
// Fatness / capacitory-density diagnostics.

struct FatnessReport {
  std::vector<double> scales;           // t_i
  std::vector<double> ratio;            // thinness-window capacity ratio
  std::vector<double> summand;          // ratio^{1/(p-1)} ln 2
  std::vector<double> partial_sums;
  std::vector<double> density_ratio_cap;      // quarter-half window ratio
  std::vector<double> density_ratio_measure;  // |B ∩ Omega| / |B|
  std::string verdict = "inconclusive";
  double trend_slope = 0;
  json config;

  json to_json() const {
    return {{"scales", scales},
            {"ratio", ratio},
            {"partial_sums", partial_sums},
            {"density_ratio_cap", density_ratio_cap},
            {"density_ratio_measure", density_ratio_measure},
            {"verdict", verdict},
            {"trend_slope", trend_slope},
            {"config", config}};
  }
};

// |B(0,t) ∩ cusp| by meridian quadrature.
inline double cusp_ball_volume(const CuspFunction& w, int n, double t) {
  double ang = (n == 2) ? 2.0 : unit_sphere_area(n - 1);
  auto f = [&](double tau) {
    double chord = std::sqrt(std::max(t * t - tau * tau, 0.0));
    double lat = std::min(w(std::min(tau, 1.0)), chord);
    return std::pow(lat, n - 1) / (n - 1);
  };
  return ang * integrate_1d(f, 0.0, std::min(t, 1.0), 1e-12);
}

inline FatnessReport wiener_diagnostic(const CuspFunction& w, int n, double p,
                                       const std::vector<double>& scales,
                                       const SolverOptions& opts,
                                       double fat_slope_threshold = 0.2) {
  FatnessReport R;
  R.config = {{"kind", "wiener_diagnostic"}, {"n", n}, {"p", p},
              {"w", w.to_json()}, {"fat_slope_threshold", fat_slope_threshold}};
  Domain dom = meridian_cusp(w, 16.0, 16.0);
  double t_min = *std::min_element(scales.begin(), scales.end());
  bool resolved = tip_profile_resolved(
      w(0.5 * t_min), Window::make(WindowConvention::OneTwoThree, t_min).ambient);
  R.config["resolved_profile"] = resolved;
  size_t ns = scales.size();
  R.scales = scales;
  R.ratio.resize(ns);
  R.summand.resize(ns);
  R.partial_sums.resize(ns);
  R.density_ratio_cap.resize(ns);
  R.density_ratio_measure.resize(ns);
  parallel_for(static_cast<int>(ns), opts.jobs, [&](int idx) {
    size_t i = static_cast<size_t>(idx);
    double t = scales[i];
    Window win = Window::make(WindowConvention::OneTwoThree, t);
    auto tc = tip_capacity(dom, n, p, win, false, opts, w(win.inner), resolved);
    double denom = window_reference_capacity(n, std::max(p, 1.0 + opts.p1_delta),
                                             win);
    double ratio = tc.estimate.value / denom;
    R.ratio[i] = ratio;
    if (p > 1.0) {
      R.summand[i] = std::pow(ratio, 1.0 / (p - 1.0)) * std::log(2.0);
    } else {
      R.summand[i] = t * tc.estimate.value / (unit_ball_volume(n) * std::pow(t, n));
    }
    // quarter-half window density ratio at scale r = 4t (same ambient size)
    Window winA = Window::make(WindowConvention::QuarterHalf, 4.0 * t);
    auto tcA =
        tip_capacity(dom, n, p, winA, true, opts, w(winA.ambient), resolved);
    double denomA = window_reference_capacity(
        n, std::max(p, 1.0 + opts.p1_delta), winA);
    R.density_ratio_cap[i] = tcA.estimate.value / denomA;
    R.density_ratio_measure[i] =
        cusp_ball_volume(w, n, t) / (unit_ball_volume(n) * std::pow(t, n));
  });
  double running = 0;
  for (size_t i = 0; i < ns; ++i) {
    running += R.summand[i];
    R.partial_sums[i] = running;
  }
  // Trend test: slope of log(partial sums) against log(scale index), fitted
  // over the later half; saturation (thin) gives slope near 0.
  size_t mfit = R.partial_sums.size();
  if (mfit >= 3) {
    std::vector<double> xs, ys;
    for (size_t i = mfit / 3; i < mfit; ++i) {
      xs.push_back(std::log(static_cast<double>(i + 1)));
      ys.push_back(std::log(std::max(R.partial_sums[i], 1e-300)));
    }
    R.trend_slope = fit_line(xs, ys).slope;
    R.verdict = R.trend_slope >= fat_slope_threshold ? "fat-trend" : "thin-trend";
  }
  return R;
}

// ---------------------------------------------------------------------------
// Density checks (per-radius table with the assembled inequalities).

struct DensityRow {
  double r = 0;
  double ball_volume = 0;       // |B(x, r)|
  double domain_volume = 0;     // |B(x, r) ∩ Omega|
  double cap_q = 0;             // capacity in the quarter-half window
  bool cap_is_upper_bound = false;
  double phi_lb = 0;            // set-function lower bound (when available)
  double snu_C = 0;             // the bump-norm constant r ||u|| / |B∩Ω|^{1/p}
  double capden_lhs = 0, capden_rhs = 0;  // assembled chain inequality
  double meade_lhs = 0, meade_rhs = 0;
  double remark_ratio = 0;      // cap / t^{n-q} (one-two-three window, q > n-1)
};

// Ball domain at a boundary point: density table.
inline std::vector<DensityRow> density_checks_ball(int n, double q,
                                                   const std::vector<double>& radii,
                                                   const SolverOptions& opts) {
  std::vector<DensityRow> rows(radii.size());
  Domain dom = meridian_ball_at_boundary(2.0, 2.0);
  parallel_for(static_cast<int>(radii.size()), opts.jobs, [&](int idx) {
    double t = radii[static_cast<size_t>(idx)];
    DensityRow row;
    row.r = t;
    row.ball_volume = unit_ball_volume(n) * std::pow(t, n);
    // exact spherical-cap volume of B(0,t) ∩ B((1,0),1):
    // distance between centers d = 1, radii t and 1.
    {
      double d = 1.0, R1 = t, R2 = 1.0;
      double v = M_PI * sq(R1 + R2 - d) *
                 (d * d + 2 * d * (R1 + R2) - 3 * sq(R1 - R2)) / (12 * d);
      row.domain_volume = v;
    }
    Window winB = Window::make(WindowConvention::OneTwoThree, t);
    auto tc = tip_capacity(dom, n, q, winB, true, opts, t, true);
    row.remark_ratio = tc.estimate.value / std::pow(t, n - q);
    Window winA = Window::make(WindowConvention::QuarterHalf, t);
    auto tcA = tip_capacity(dom, n, q, winA, true, opts, t, true);
    row.cap_q = tcA.estimate.value;
    rows[static_cast<size_t>(idx)] = row;
  });
  return rows;
}

inline std::vector<DensityRow> density_checks_cusp(const CuspFunction& w, int n,
                                                   double q,
                                                   const std::vector<double>& radii,
                                                   const SolverOptions& opts) {
  std::vector<DensityRow> rows;
  Domain dom = meridian_cusp(w, 16.0, 16.0);
  double t_min = *std::min_element(radii.begin(), radii.end());
  bool resolved = tip_profile_resolved(
      w(0.5 * t_min), Window::make(WindowConvention::OneTwoThree, t_min).ambient);
  rows.resize(radii.size());
  parallel_for(static_cast<int>(radii.size()), opts.jobs, [&](int idx) {
    double t = radii[static_cast<size_t>(idx)];
    DensityRow row;
    row.r = t;
    row.ball_volume = unit_ball_volume(n) * std::pow(t, n);
    row.domain_volume = cusp_ball_volume(w, n, t);
    Window winB = Window::make(WindowConvention::OneTwoThree, t);
    auto tc = tip_capacity(dom, n, q, winB, false, opts, w(winB.inner), resolved);
    row.remark_ratio = tc.estimate.value / std::pow(t, n - q);
    Window winA = Window::make(WindowConvention::QuarterHalf, t);
    auto tcA =
        tip_capacity(dom, n, q, winA, true, opts, w(winA.ambient), resolved);
    row.cap_q = tcA.estimate.value;
    rows[static_cast<size_t>(idx)] = row;
  });
  return rows;
}

// Full chain table on the Cantor-cylinder domain at a boundary point of the
// exceptional set.  The capacity term uses the extension-admissible energy:
// the plates are far below any attainable lattice resolution there, which the
// solver reports as an under-resolution error; the table flags the estimate
// kind accordingly.
inline std::vector<DensityRow> density_checks_cantor(
    const ext::CantorExtension& E, const ext::ExtensionParams& par, const Pt& x,
    const std::vector<double>& radii) {
  std::vector<DensityRow> rows;
  for (double r : radii) {
    DensityRow row;
    row.r = r;
    int n = 3;
    row.ball_volume = unit_ball_volume(n) * std::pow(r, n);
    row.domain_volume = E.ball_domain_volume(x, r, par.m);
    TestFunction bump = adm::bump_u(x, r);
    ScalarField u = bump.field();
    double G_q = E.grad_Em_Lq_ball_q(u, par.m, par.q, x, r);
    double S = E.norm_W1p_ball_domain(u, par.p, x, r, par.m);
    row.cap_q = G_q;  // admissible-energy upper bound for the window capacity
    row.cap_is_upper_bound = true;
    row.phi_lb = std::pow(std::pow(G_q, 1.0 / par.q) / S, par.kappa());
    row.snu_C = r * S / std::pow(row.domain_volume, 1.0 / par.p);
    row.capden_lhs = std::pow(row.phi_lb, par.p - par.q) *
                     std::pow(row.domain_volume, par.q);
    row.capden_rhs = std::pow(r / row.snu_C, par.p * par.q) *
                     std::pow(row.cap_q, par.p);
    row.meade_lhs = row.capden_lhs;
    row.meade_rhs = std::pow(row.ball_volume, par.p);
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Decay table for the Cantor-cylinder capacity bound.

struct DecayRow {
  double r = 0;
  double energy = 0;   // admissible-function energy (capacity upper bound)
  double h_r = 0;      // h(r)
  double over_rh = 0;  // energy / (r h(r))
  double over_h = 0;   // energy / h(r)
};

inline std::vector<DecayRow> thm110_decay(
    std::shared_ptr<geom::CantorCylinderSpec> spec, const Pt& x, double q,
    const std::vector<double>& radii) {
  std::vector<DecayRow> rows;
  for (double r : radii) {
    if (!(r < 0.25))
      throw ValidationError("thm110_decay: radii must satisfy r < 1/4");
    TestFunction v = adm::cantor_vF(x, r, spec);
    DecayRow row;
    row.r = r;
    row.energy = v.energy(q);
    row.h_r = spec->h(r);
    row.over_rh = row.energy / (r * row.h_r);
    row.over_h = row.energy / row.h_r;
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Admissible (p, q) regions of the power-log cusp and its wedge products.

struct AdmissibleRange {
  int n = 3;
  double s = 2.0;
  int k = 0;  // 0: the cusp itself; 1..n-2: wedge product with R^{n-k-1}

  // effective lateral dimension parameter
  int kk() const { return k == 0 ? n - 1 : k; }

  double branch_point() const {
    int K = kk();
    // for the cusp: ((n-1) + (n-1)^2 s)/n ; for wedges: (k + k^2 s)/(k+1)
    return (K + K * K * s) / (K + 1.0);
  }
  double p_min() const {
    int K = kk();
    return (1.0 + K * s) / (2.0 + (K - 1.0) * s);
  }
  double q_max(double p) const {
    int K = kk();
    double p2 = branch_point();
    if (p < p_min() - 1e-12) return 0.0;  // inadmissible
    if (p <= p2) return (1.0 + K * s) * p / (1.0 + K * s + (s - 1.0) * p);
    return (K + 1.0) * p / (1.0 + K * s);
  }
  bool admissible(double p, double q) const {
    if (q < 1.0) return false;
    double qm = q_max(p);
    return qm > 0.0 && q <= qm + 1e-12;
  }
};

inline AdmissibleRange mazya_poborchi_range(int n, double s, int k = 0) {
  if (!(s > 1.0)) throw ValidationError("mazya_poborchi_range: need s > 1");
  if (n < 2) throw ValidationError("mazya_poborchi_range: need n >= 2");
  if (k != 0 && (k < 1 || k > n - 2))
    throw ValidationError("mazya_poborchi_range: need 1 <= k <= n-2");
  return AdmissibleRange{n, s, k};
}

}  // namespace capres::ana
