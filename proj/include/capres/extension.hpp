#pragma once

#include "capres/common.hpp"
#include "capres/geometry.hpp"

namespace capres::ext {

using geom::CantorCylinderSpec;
using geom::WhitneyCube;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Parameter formulas.

inline double lambda_o(int n, double p, double q) {
  if (n < 3) throw ValidationError("lambda_o: need n >= 3");
  if (!(q >= 1.0 && q < n - 1)) throw ValidationError("lambda_o: need 1 <= q < n-1");
  if (!(p > (n - 1) * q / (n - 1 - q)))
    throw ValidationError("lambda_o: need p > (n-1)q/(n-1-q)");
  double b1 = (n - 1 - p) / sq(static_cast<double>(n - 1));
  double den = (n - 1) * (p - q) - p * q;
  if (den <= 0) throw ValidationError("lambda_o: inadmissible (p, q) pair");
  double b2 = (p - q) / den;
  return std::max(b1, b2);
}

struct ExtensionParams {
  double p = 4.0, q = 1.0;
  double lambda = 0.0;
  int m = 3;  // truncation level

  double kappa() const { return p * q / (p - q); }
  void validate(int n) const {
    if (!(q < p)) throw ValidationError("extension params: need q < p");
    double lo = lambda_o(n, p, q);
    if (!(lambda > lo))
      throw ValidationError("extension params: lambda must exceed lambda_o");
  }
  json to_json() const {
    return {{"p", p}, {"q", q}, {"lambda", lambda}, {"m", m}};
  }
};

// ---------------------------------------------------------------------------
// Cut-off pair on the normalized annular collar s in (rk/2, rk), axial
// xi in [0, 1), with the corner wedge at the gluing plane xi = 0.
// lo is maintained as 1 - li so the partition identity is bit-exact.

struct CutoffPair {
  double rk = 0;

  bool in_corner(double s, double xi) const {
    return xi < 0.5 * rk && s < rk - xi;
  }
  bool in_collar(double s, double xi) const {
    return s > 0.5 * rk && s < rk && xi >= 0.0 && xi < 1.0;
  }

  double li(double s, double xi) const {
    if (in_corner(s, xi)) {
      double d = s - 0.5 * rk;
      double den = xi + d;
      if (den <= 0.0) return 0.0;  // singular circle: axial limit
      return xi / den;
    }
    return std::clamp(2.0 - 2.0 * s / rk, 0.0, 1.0);
  }
  double lo(double s, double xi) const { return 1.0 - li(s, xi); }

  // d(li)/ds, d(li)/dxi
  void grad_li(double s, double xi, double& dls, double& dlxi) const {
    if (in_corner(s, xi)) {
      double d = s - 0.5 * rk;
      double den = sq(xi + d);
      if (den <= 0.0) {
        dls = dlxi = 0.0;
        return;
      }
      dls = -xi / den;
      dlxi = d / den;
      return;
    }
    dls = -2.0 / rk;
    dlxi = 0.0;
  }

  // Gradient-magnitude bound: C/rk on the collar away from the corner,
  // C/sqrt((s-rk/2)^2 + xi^2) in the corner wedge (C = 2 and C = 1 resp.).
  double grad_bound(double s, double xi) const {
    if (in_corner(s, xi))
      return 1.0 / std::sqrt(sq(s - 0.5 * rk) + sq(xi));
    return 2.0 / rk;
  }
};

// ---------------------------------------------------------------------------
// Reflections.  R1 flips the upper box onto the cube through the gluing
// plane at height 1; R2 reflects the collar into the inner cylinder in the
// lateral radial coordinate.

inline Pt reflect_R1(const Pt& x) {
  Pt y = x;
  y[x.n - 1] = 2.0 - x[x.n - 1];
  return y;
}

// Pull back a gradient through R1: (d1, d2, -d3).
inline Pt pullback_R1(const Pt& grad_at_image) {
  Pt g = grad_at_image;
  g[g.n - 1] = -g[g.n - 1];
  return g;
}

struct CylinderFrame {
  Pt center;   // lateral center (n-1 coords used)
  double rk;   // full cylinder radius

  // lateral radius of x relative to the center
  double s_of(const Pt& x) const {
    double s2 = 0;
    for (int i = 0; i < x.n - 1; ++i) s2 += sq(x[i] - center[i]);
    return std::sqrt(s2);
  }
  // R2: s -> 3rk/4 - s/2 at fixed angle and height
  Pt reflect_R2(const Pt& x) const {
    double s = s_of(x);
    double s2 = 0.75 * rk - 0.5 * s;
    Pt y = x;
    if (s > 0) {
      double f = s2 / s;
      for (int i = 0; i < x.n - 1; ++i) y[i] = center[i] + f * (x[i] - center[i]);
    }
    return y;
  }
  // Pull back a gradient through R2 at base point x (image y = R2 x):
  // radial direction scales by -1/2, tangential by s'/s, axial unchanged.
  Pt pullback_R2(const Pt& x, const Pt& grad_at_image) const {
    double s = s_of(x);
    Pt g = grad_at_image;
    if (s <= 0) return g;
    double s2 = 0.75 * rk - 0.5 * s;
    Pt om = Pt::zero(x.n);
    for (int i = 0; i < x.n - 1; ++i) om[i] = (x[i] - center[i]) / s;
    double radial = 0;
    for (int i = 0; i < x.n - 1; ++i) radial += grad_at_image[i] * om[i];
    Pt out = Pt::zero(x.n);
    for (int i = 0; i < x.n - 1; ++i)
      out[i] = (-0.5) * radial * om[i] +
               (s2 / s) * (grad_at_image[i] - radial * om[i]);
    out[x.n - 1] = grad_at_image[x.n - 1];
    return out;
  }
  // Jacobian determinant magnitude of R2 at lateral radius s (n = 3).
  double jacobian_R2(double s) const {
    double s2 = 0.75 * rk - 0.5 * s;
    return 0.5 * s2 / s;
  }
};

// ---------------------------------------------------------------------------
// Region classification within the tall box C_o = (0,1)^{n-1} x (0,2).

enum class Region { Cube, Cylinder, Collar, Upper, Outside };

struct RegionInfo {
  Region region = Region::Outside;
  int cube_id = -1;  // whitney cube id when region is Cylinder/Collar
};

// Quadrature resolutions for the region-decomposed norms.
struct QuadOptions {
  int cube_n = 40;       // tensor nodes per axis on the unit cube
  int box_n = 40;        // upper box
  int cyl_rho = 6, cyl_th = 10, cyl_xi = 40;
  int col_s = 6, col_th = 10, col_xi = 40;
  int cor_l = 10, cor_phi = 8;
  int sliver_a = 6, sliver_b = 6;
};

// ---------------------------------------------------------------------------
// The truncated extension operator on the Cantor-cylinder domain.

class CantorExtension {
 public:
  explicit CantorExtension(std::shared_ptr<CantorCylinderSpec> spec)
      : spec_(std::move(spec)) {
    if (!spec_->whitney) throw ValidationError("extension: spec not built");
    index_ = geom::CylinderIndex::build(*spec_->whitney, spec_->truncation_m);
    n_ = spec_->n;
  }

  const CantorCylinderSpec& spec() const { return *spec_; }
  int max_m() const { return spec_->truncation_m; }

  std::vector<int> nonempty_generations() const {
    std::vector<int> gens;
    for (auto& [k, ids] : spec_->whitney->by_generation)
      if (k >= 1 && k <= spec_->truncation_m && !ids.empty()) gens.push_back(k);
    return gens;
  }

  RegionInfo classify(const Pt& x, int m) const {
    double xn = x[n_ - 1];
    bool lateral_in = true;
    for (int i = 0; i < n_ - 1; ++i)
      if (x[i] <= 0.0 || x[i] >= 1.0) lateral_in = false;
    if (!lateral_in || xn <= 0.0 || xn >= 2.0) return {Region::Outside, -1};
    if (xn < 1.0) return {Region::Cube, -1};
    // upper half: locate the candidate cylinder
    for (const auto& g : index_.gens) {
      if (g.k > m) break;
      int64_t i0 = static_cast<int64_t>(std::floor(x[0] * g.inv_edge));
      int64_t i1 = static_cast<int64_t>(std::floor(x[1] * g.inv_edge));
      auto it = g.cube_of_cell.find(geom::CylinderIndex::pack(i0, i1));
      if (it == g.cube_of_cell.end()) continue;
      const auto& c = spec_->whitney->cubes[static_cast<size_t>(it->second)];
      double rk = spec_->radii[static_cast<size_t>(g.k)];
      double dx = x[0] - c.center[0], dy = x[1] - c.center[1];
      double s2 = dx * dx + dy * dy;
      if (s2 < sq(0.5 * rk)) return {Region::Cylinder, it->second};
      if (s2 < sq(rk)) return {Region::Collar, it->second};
    }
    return {Region::Upper, -1};
  }

  CylinderFrame frame(int cube_id) const {
    const auto& c = spec_->whitney->cubes[static_cast<size_t>(cube_id)];
    return {c.center, spec_->radii[static_cast<size_t>(c.generation)]};
  }

  // E^m(u)(x); u must be evaluable on the cube and the kept cylinders.
  double eval(const ScalarField& u, int m, const Pt& x) const {
    RegionInfo ri = classify(x, m);
    switch (ri.region) {
      case Region::Cube:
      case Region::Cylinder:
        return u.value(x);
      case Region::Upper:
        return u.value(reflect_R1(x));
      case Region::Collar: {
        CylinderFrame fr = frame(ri.cube_id);
        CutoffPair cut{fr.rk};
        double s = fr.s_of(x), xi = x[n_ - 1] - 1.0;
        double li = cut.li(s, xi);
        double a = u.value(fr.reflect_R2(x));
        double b = u.value(reflect_R1(x));
        return li * a + (1.0 - li) * b;
      }
      case Region::Outside:
        throw ValidationError("extension: point outside the target box");
    }
    return 0.0;
  }

  Pt grad(const ScalarField& u, int m, const Pt& x) const {
    RegionInfo ri = classify(x, m);
    switch (ri.region) {
      case Region::Cube:
      case Region::Cylinder:
        return u.grad(x);
      case Region::Upper:
        return pullback_R1(u.grad(reflect_R1(x)));
      case Region::Collar: {
        CylinderFrame fr = frame(ri.cube_id);
        CutoffPair cut{fr.rk};
        double s = fr.s_of(x), xi = x[n_ - 1] - 1.0;
        double li = cut.li(s, xi);
        double dls, dlxi;
        cut.grad_li(s, xi, dls, dlxi);
        Pt ys = fr.reflect_R2(x), yr = reflect_R1(x);
        double a = u.value(ys), b = u.value(yr);
        Pt ga = fr.pullback_R2(x, u.grad(ys));
        Pt gb = pullback_R1(u.grad(yr));
        Pt g = Pt::zero(n_);
        // gradient of li in Cartesian coordinates
        Pt sdir = Pt::zero(n_);
        if (s > 0)
          for (int i = 0; i < n_ - 1; ++i) sdir[i] = (x[i] - fr.center[i]) / s;
        for (int i = 0; i < n_; ++i) {
          double dli = (i < n_ - 1 ? dls * sdir[i] : dlxi);
          g[i] = dli * (a - b) + li * ga[i] + (1.0 - li) * gb[i];
        }
        return g;
      }
      case Region::Outside:
        throw ValidationError("extension: point outside the target box");
    }
    return Pt::zero(n_);
  }

  // -------------------------------------------------------------------------
  // Region-decomposed Sobolev norms.  All integrals accumulate |f|^e and
  // |grad f|^e separately; norm = val^{1/e} + grad^{1/e}.

  struct NormParts {
    double val = 0, grd = 0;
    double norm(double e) const {
      return std::pow(val, 1.0 / e) + std::pow(grd, 1.0 / e);
    }
  };

  // || u ||-parts over the cube (0,1)^{n-1} x (0,1).
  NormParts cube_parts(const ScalarField& u, double e,
                       const QuadOptions& qo = {}) const {
    NormParts out;
    PairwiseSum sv, sg;
    int N = qo.cube_n;
    double h = 1.0 / N;
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j)
        for (int k = 0; k < N; ++k) {
          Pt p{(i + 0.5) * h, (j + 0.5) * h, (k + 0.5) * h};
          double v = u.value(p);
          Pt g = u.grad(p);
          sv.push(std::pow(std::abs(v), e) * h * h * h);
          sg.push(std::pow(dot(g, g), 0.5 * e) * h * h * h);
        }
    out.val = sv.value();
    out.grd = sg.value();
    return out;
  }

  // || f ||-parts over the upper box (0,1)^{n-1} x (1,2) for f = u o R1.
  NormParts upper_box_parts(const ScalarField& u, double e,
                            const QuadOptions& qo = {}) const {
    NormParts out;
    PairwiseSum sv, sg;
    int N = qo.box_n;
    double h = 1.0 / N;
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j)
        for (int k = 0; k < N; ++k) {
          Pt p{(i + 0.5) * h, (j + 0.5) * h, 1.0 + (k + 0.5) * h};
          Pt y = reflect_R1(p);
          double v = u.value(y);
          Pt g = pullback_R1(u.grad(y));
          sv.push(std::pow(std::abs(v), e) * h * h * h);
          sg.push(std::pow(dot(g, g), 0.5 * e) * h * h * h);
        }
    out.val = sv.value();
    out.grd = sg.value();
    return out;
  }

  // Integrand hook: f(x) value and gradient at a point of a given region.
  using FieldEval = std::function<void(const Pt&, double&, Pt&)>;

  // Integrate |f|^e, |grad f|^e over the inner cylinder of cube_id
  // (radius factor `rad_scale` in (0, 1]), heights (1, 2).
  NormParts cylinder_parts(const FieldEval& f, double e, int cube_id,
                           double rad_scale, const QuadOptions& qo = {}) const {
    CylinderFrame fr = frame(cube_id);
    double R = fr.rk * rad_scale;
    NormParts out;
    PairwiseSum sv, sg;
    int NR = qo.cyl_rho, NT = qo.cyl_th, NX = qo.cyl_xi;
    double dr = R / NR, dt = 2.0 * M_PI / NT, dx = 1.0 / NX;
    for (int ir = 0; ir < NR; ++ir) {
      double rho = (ir + 0.5) * dr;
      for (int it = 0; it < NT; ++it) {
        double th = (it + 0.5) * dt;
        double cx = fr.center[0] + rho * std::cos(th);
        double cy = fr.center[1] + rho * std::sin(th);
        for (int ix = 0; ix < NX; ++ix) {
          Pt p{cx, cy, 1.0 + (ix + 0.5) * dx};
          double v;
          Pt g;
          f(p, v, g);
          double meas = rho * dr * dt * dx;
          sv.push(std::pow(std::abs(v), e) * meas);
          sg.push(std::pow(dot(g, g), 0.5 * e) * meas);
        }
      }
    }
    out.val = sv.value();
    out.grd = sg.value();
    return out;
  }

  // Integrate over the collar A = {rk/2 < s < rk} x (1,2) of cube_id,
  // splitting the corner wedge (polar) and the sliver from the straight zone.
  NormParts collar_parts(const FieldEval& f, double e, int cube_id,
                         const QuadOptions& qo = {}) const {
    CylinderFrame fr = frame(cube_id);
    double rk = fr.rk;
    NormParts out;
    PairwiseSum sv, sg;
    auto emit = [&](const Pt& p, double meas) {
      double v;
      Pt g;
      f(p, v, g);
      sv.push(std::pow(std::abs(v), e) * meas);
      sg.push(std::pow(dot(g, g), 0.5 * e) * meas);
    };
    int NT = qo.col_th;
    double dt = 2.0 * M_PI / NT;
    // (a) straight zone: xi in (rk/2, 1), s in (rk/2, rk)
    {
      int NS = qo.col_s, NX = qo.col_xi;
      double ds = 0.5 * rk / NS;
      double x0 = 0.5 * rk, x1 = 1.0;
      double dx = (x1 - x0) / NX;
      for (int is = 0; is < NS; ++is) {
        double s = 0.5 * rk + (is + 0.5) * ds;
        for (int it = 0; it < NT; ++it) {
          double th = (it + 0.5) * dt;
          double cx = fr.center[0] + s * std::cos(th);
          double cy = fr.center[1] + s * std::sin(th);
          for (int ix = 0; ix < NX; ++ix)
            emit(Pt{cx, cy, 1.0 + x0 + (ix + 0.5) * dx}, s * ds * dt * dx);
        }
      }
    }
    // (b) corner wedge in polar coordinates about the singular circle
    {
      int NL = qo.cor_l, NP = qo.cor_phi;
      double dphi = 0.5 * M_PI / NP;
      for (int ip = 0; ip < NP; ++ip) {
        double phi = (ip + 0.5) * dphi;
        double lmax = 0.5 * rk / (std::cos(phi) + std::sin(phi));
        double dl = lmax / NL;
        for (int il = 0; il < NL; ++il) {
          double l = (il + 0.5) * dl;
          double s = 0.5 * rk + l * std::cos(phi);
          double xi = l * std::sin(phi);
          for (int it = 0; it < NT; ++it) {
            double th = (it + 0.5) * dt;
            double cx = fr.center[0] + s * std::cos(th);
            double cy = fr.center[1] + s * std::sin(th);
            emit(Pt{cx, cy, 1.0 + xi}, s * l * dl * dphi * dt);
          }
        }
      }
    }
    // (c) sliver: xi in (0, rk/2), s in (rk - xi, rk)
    {
      int NA = qo.sliver_a, NB = qo.sliver_b;
      double dxi = 0.5 * rk / NA;
      for (int ia = 0; ia < NA; ++ia) {
        double xi = (ia + 0.5) * dxi;
        double slo = rk - xi;
        double ds = (rk - slo) / NB;
        for (int ib = 0; ib < NB; ++ib) {
          double s = slo + (ib + 0.5) * ds;
          for (int it = 0; it < NT; ++it) {
            double th = (it + 0.5) * dt;
            double cx = fr.center[0] + s * std::cos(th);
            double cy = fr.center[1] + s * std::sin(th);
            emit(Pt{cx, cy, 1.0 + xi}, s * ds * dt * dxi);
          }
        }
      }
    }
    out.val = sv.value();
    out.grd = sg.value();
    return out;
  }

  // Field evaluators for the three upper-region formulas.
  FieldEval eval_restriction(const ScalarField& u) const {
    return [&u](const Pt& p, double& v, Pt& g) {
      v = u.value(p);
      g = u.grad(p);
    };
  }
  FieldEval eval_reflected(const ScalarField& u) const {
    return [&u](const Pt& p, double& v, Pt& g) {
      Pt y = reflect_R1(p);
      v = u.value(y);
      g = pullback_R1(u.grad(y));
    };
  }
  FieldEval eval_blend(const ScalarField& u, int cube_id) const {
    CylinderFrame fr = frame(cube_id);
    int n = n_;
    return [this, &u, fr, n](const Pt& p, double& v, Pt& g) {
      CutoffPair cut{fr.rk};
      double s = fr.s_of(p), xi = p[n - 1] - 1.0;
      double li = cut.li(s, xi);
      double dls, dlxi;
      cut.grad_li(s, xi, dls, dlxi);
      Pt ys = fr.reflect_R2(p), yr = reflect_R1(p);
      double a = u.value(ys), b = u.value(yr);
      Pt ga = fr.pullback_R2(p, u.grad(ys));
      Pt gb = pullback_R1(u.grad(yr));
      v = li * a + (1.0 - li) * b;
      g = Pt::zero(n);
      Pt sdir = Pt::zero(n);
      if (s > 0)
        for (int i = 0; i < n - 1; ++i) sdir[i] = (p[i] - fr.center[i]) / s;
      for (int i = 0; i < n; ++i) {
        double dli = (i < n - 1 ? dls * sdir[i] : dlxi);
        g[i] = dli * (a - b) + li * ga[i] + (1.0 - li) * gb[i];
      }
    };
  }
  // Difference of the blend and the reflected formula: li * (uoR2 - uoR1).
  FieldEval eval_blend_minus_reflected(const ScalarField& u, int cube_id) const {
    CylinderFrame fr = frame(cube_id);
    int n = n_;
    return [this, &u, fr, n](const Pt& p, double& v, Pt& g) {
      CutoffPair cut{fr.rk};
      double s = fr.s_of(p), xi = p[n - 1] - 1.0;
      double li = cut.li(s, xi);
      double dls, dlxi;
      cut.grad_li(s, xi, dls, dlxi);
      Pt ys = fr.reflect_R2(p), yr = reflect_R1(p);
      double a = u.value(ys), b = u.value(yr);
      Pt ga = fr.pullback_R2(p, u.grad(ys));
      Pt gb = pullback_R1(u.grad(yr));
      v = li * (a - b);
      g = Pt::zero(n);
      Pt sdir = Pt::zero(n);
      if (s > 0)
        for (int i = 0; i < n - 1; ++i) sdir[i] = (p[i] - fr.center[i]) / s;
      for (int i = 0; i < n; ++i) {
        double dli = (i < n - 1 ? dls * sdir[i] : dlxi);
        g[i] = dli * (a - b) + li * (ga[i] - gb[i]);
      }
    };
  }
  FieldEval eval_difference(const ScalarField& u) const {
    // u - u o R1 (cylinder region difference between consecutive truncations)
    return [&u](const Pt& p, double& v, Pt& g) {
      Pt y = reflect_R1(p);
      v = u.value(p) - u.value(y);
      Pt gu = u.grad(p);
      Pt gr = pullback_R1(u.grad(y));
      g = gu - gr;
    };
  }

  // -------------------------------------------------------------------------
  // Per-generation contribution tables for || E^m(u_m) ||_{W^{1,q}(C_o)};
  // combining prefix sums over k gives every truncation level cheaply.

  struct GenTable {
    NormParts cube;          // E = u on the unit cube
    NormParts box;           // u o R1 over the whole upper box
    std::vector<NormParts> cyl, col, corr;  // per generation k (index 0 unused)
  };

  GenTable norm_table(const ScalarField& u, double e,
                      const QuadOptions& qo = {}) const {
    GenTable T;
    T.cube = cube_parts(u, e, qo);
    T.box = upper_box_parts(u, e, qo);
    int M = spec_->truncation_m;
    T.cyl.assign(static_cast<size_t>(M + 1), {});
    T.col.assign(static_cast<size_t>(M + 1), {});
    T.corr.assign(static_cast<size_t>(M + 1), {});
    for (int k = 1; k <= M; ++k) {
      auto it = spec_->whitney->by_generation.find(k);
      if (it == spec_->whitney->by_generation.end()) continue;
      for (int id : it->second) {
        auto add = [](NormParts& a, const NormParts& b) {
          a.val += b.val;
          a.grd += b.grd;
        };
        add(T.cyl[static_cast<size_t>(k)],
            cylinder_parts(eval_restriction(u), e, id, 0.5, qo));
        add(T.col[static_cast<size_t>(k)],
            collar_parts(eval_blend(u, id), e, id, qo));
        // the upper-box integral counts u o R1 on the full cylinder; remove it
        add(T.corr[static_cast<size_t>(k)],
            cylinder_parts(eval_reflected(u), e, id, 1.0, qo));
      }
    }
    return T;
  }

  double norm_W1q_from_table(const GenTable& T, int m, double q) const {
    double val = T.cube.val + T.box.val;
    double grd = T.cube.grd + T.box.grd;
    for (int k = 1; k <= m; ++k) {
      val += T.cyl[static_cast<size_t>(k)].val + T.col[static_cast<size_t>(k)].val -
             T.corr[static_cast<size_t>(k)].val;
      grd += T.cyl[static_cast<size_t>(k)].grd + T.col[static_cast<size_t>(k)].grd -
             T.corr[static_cast<size_t>(k)].grd;
    }
    val = std::max(val, 0.0);
    grd = std::max(grd, 0.0);
    return std::pow(val, 1.0 / q) + std::pow(grd, 1.0 / q);
  }

  double norm_W1q_Co(const ScalarField& u, int m, double q,
                     const QuadOptions& qo = {}) const {
    return norm_W1q_from_table(norm_table(u, q, qo), m, q);
  }

  // || u ||_{W^{1,p}} over the thin-cylinder domain with all computed
  // generations included.
  double norm_W1p_domain(const ScalarField& u, double p,
                         const QuadOptions& qo = {}) const {
    NormParts acc = cube_parts(u, p, qo);
    for (int k = 1; k <= spec_->truncation_m; ++k) {
      auto it = spec_->whitney->by_generation.find(k);
      if (it == spec_->whitney->by_generation.end()) continue;
      for (int id : it->second) {
        NormParts c = cylinder_parts(eval_restriction(u), p, id, 0.5, qo);
        acc.val += c.val;
        acc.grd += c.grd;
      }
    }
    return acc.norm(p);
  }

  // || E^m(u_m) - E^{m'}(u_{m'}) ||_{W^{1,q}(C_o)} for m < m': supported on
  // the generation k in (m, m'] cylinders.
  double cauchy_diff_W1q(const ScalarField& u, int m1, int m2, double q,
                         const QuadOptions& qo = {}) const {
    if (m1 > m2) std::swap(m1, m2);
    double val = 0, grd = 0;
    for (int k = m1 + 1; k <= m2; ++k) {
      auto it = spec_->whitney->by_generation.find(k);
      if (it == spec_->whitney->by_generation.end()) continue;
      for (int id : it->second) {
        NormParts a = cylinder_parts(eval_difference(u), q, id, 0.5, qo);
        NormParts b = collar_parts(eval_blend_minus_reflected(u, id), q, id, qo);
        val += a.val + b.val;
        grd += a.grd + b.grd;
      }
    }
    return std::pow(val, 1.0 / q) + std::pow(grd, 1.0 / q);
  }

  // -------------------------------------------------------------------------
  // Ball-window integrals.  For a window B(x, r) contained in the upper box,
  // cylinder and collar integrals clip the axial range to the exact chord
  // |xi_c - (x_n - 1)| < sqrt(r^2 - d^2) at lateral offset d.

  // Visit lateral sample points of the (scaled) disk of cube_id that lie
  // within lateral distance r of x; callback gets (point2d, lateral measure,
  // axial interval [a, b] inside the ball, in xi coordinates).
  template <class F>
  void clipped_cylinder_visit(int cube_id, double rad_scale, const Pt& x,
                              double r, int NR, int NT, F&& f) const {
    CylinderFrame fr = frame(cube_id);
    double R = fr.rk * rad_scale;
    double xc = x[n_ - 1] - 1.0;  // ball center height in xi coordinates
    double dr = R / NR, dt = 2.0 * M_PI / NT;
    for (int ir = 0; ir < NR; ++ir) {
      double rho = (ir + 0.5) * dr;
      for (int it = 0; it < NT; ++it) {
        double th = (it + 0.5) * dt;
        double px = fr.center[0] + rho * std::cos(th);
        double py = fr.center[1] + rho * std::sin(th);
        double d2 = sq(px - x[0]) + sq(py - x[1]);
        if (d2 >= r * r) continue;
        double half = std::sqrt(r * r - d2);
        double a = std::max(0.0, xc - half), b = std::min(1.0, xc + half);
        if (b <= a) continue;
        f(px, py, rho * dr * dt, a, b);
      }
    }
  }

  NormParts cylinder_parts_in_ball(const FieldEval& f, double e, int cube_id,
                                   double rad_scale, const Pt& x, double r,
                                   int NR = 6, int NT = 10, int NX = 24) const {
    PairwiseSum sv, sg;
    clipped_cylinder_visit(
        cube_id, rad_scale, x, r, NR, NT,
        [&](double px, double py, double lat_meas, double a, double b) {
          double dx = (b - a) / NX;
          for (int ix = 0; ix < NX; ++ix) {
            Pt p{px, py, 1.0 + a + (ix + 0.5) * dx};
            double v;
            Pt g;
            f(p, v, g);
            sv.push(std::pow(std::abs(v), e) * lat_meas * dx);
            sg.push(std::pow(dot(g, g), 0.5 * e) * lat_meas * dx);
          }
        });
    return {sv.value(), sg.value()};
  }

  // Collar integral clipped to the ball.  The window sits far above the
  // corner wedge (x_n - 1 - r >= 1/4 in all uses), so the straight-zone
  // formula applies throughout; the corner wedge is clipped away.
  NormParts collar_parts_in_ball(const FieldEval& f, double e, int cube_id,
                                 const Pt& x, double r, int NS = 6, int NT = 10,
                                 int NX = 24) const {
    CylinderFrame fr = frame(cube_id);
    double rk = fr.rk;
    double xc = x[n_ - 1] - 1.0;
    PairwiseSum sv, sg;
    double ds = 0.5 * rk / NS, dt = 2.0 * M_PI / NT;
    for (int is = 0; is < NS; ++is) {
      double s = 0.5 * rk + (is + 0.5) * ds;
      for (int it = 0; it < NT; ++it) {
        double th = (it + 0.5) * dt;
        double px = fr.center[0] + s * std::cos(th);
        double py = fr.center[1] + s * std::sin(th);
        double d2 = sq(px - x[0]) + sq(py - x[1]);
        if (d2 >= r * r) continue;
        double half = std::sqrt(r * r - d2);
        double a = std::max(0.0, xc - half), b = std::min(1.0, xc + half);
        if (b <= a) continue;
        double dx = (b - a) / NX;
        for (int ix = 0; ix < NX; ++ix) {
          Pt p{px, py, 1.0 + a + (ix + 0.5) * dx};
          double v;
          Pt g;
          f(p, v, g);
          sv.push(std::pow(std::abs(v), e) * s * ds * dt * dx);
          sg.push(std::pow(dot(g, g), 0.5 * e) * s * ds * dt * dx);
        }
      }
    }
    return {sv.value(), sg.value()};
  }

  // |B(x, r) \cap domain| for the truncated thin/full cylinder domain.
  double ball_domain_volume(const Pt& x, double r, int m,
                            double rad_scale = 0.5) const {
    if (x[n_ - 1] - r < 1.0)
      throw ValidationError("ball_domain_volume: window must sit above the cube");
    PairwiseSum vol;
    for (int k = 1; k <= m; ++k) {
      auto it = spec_->whitney->by_generation.find(k);
      if (it == spec_->whitney->by_generation.end()) continue;
      for (int id : it->second)
        clipped_cylinder_visit(id, rad_scale, x, r, 8, 16,
                               [&](double, double, double lm, double a,
                                   double b) { vol.push(lm * (b - a)); });
    }
    return vol.value();
  }

  // || grad E^m(u) ||_{L^q(B(x,r))}^q by region decomposition.  The window
  // must sit strictly above the cube.
  double grad_Em_Lq_ball_q(const ScalarField& u, int m, double q, const Pt& x,
                           double r) const {
    if (x[n_ - 1] - r < 1.0)
      throw ValidationError("grad_Em_Lq_ball_q: window must sit above the cube");
    double acc = 0;
    // upper region: u o R1 over the ball, minus full cylinders (k <= m federation)
    acc += ball_integral_grad_q(eval_reflected(u), x, r, q);
    for (int k = 1; k <= m; ++k) {
      auto it = spec_->whitney->by_generation.find(k);
      if (it == spec_->whitney->by_generation.end()) continue;
      for (int id : it->second) {
        acc -= cylinder_parts_in_ball(eval_reflected(u), q, id, 1.0, x, r).grd;
        acc += cylinder_parts_in_ball(eval_restriction(u), q, id, 0.5, x, r).grd;
        acc += collar_parts_in_ball(eval_blend(u, id), q, id, x, r).grd;
      }
    }
    return std::max(acc, 0.0);
  }

  // || u ||_{W^{1,p}(B(x,r) \cap domain)} (thin cylinders).
  double norm_W1p_ball_domain(const ScalarField& u, double p, const Pt& x,
                              double r, int m) const {
    double val = 0, grd = 0;
    for (int k = 1; k <= m; ++k) {
      auto it = spec_->whitney->by_generation.find(k);
      if (it == spec_->whitney->by_generation.end()) continue;
      for (int id : it->second) {
        NormParts np = cylinder_parts_in_ball(eval_restriction(u), p, id, 0.5,
                                              x, r, 8, 12, 32);
        val += np.val;
        grd += np.grd;
      }
    }
    return std::pow(val, 1.0 / p) + std::pow(grd, 1.0 / p);
  }

  // Set-function lower bound: max over the family of
  // (||grad E(u)||_{L^q(U)} / ||u||_{W^{1,p}(U cap domain)})^kappa.
  // Family members must vanish on the domain outside U.
  double phi_lower_bound(const std::vector<ScalarField>& family,
                         const ExtensionParams& par, const Pt& x, double r,
                         uint64_t seed = 41) const {
    if (family.empty()) throw ValidationError("phi_lower_bound: empty family");
    geom::Domain dom = geom::build_cantor_domain(*spec_, true);
    Rng rng(seed);
    double best = 0;
    for (const auto& u : family) {
      // support condition: u = 0 on the domain outside the window
      for (int i = 0; i < 200; ++i) {
        Pt ps = dom.sample_inside(rng, 4000);
        if (dist(ps, x) >= r && std::abs(u.value(ps)) > 1e-12)
          throw ValidationError("phi_lower_bound: family member not supported in U");
      }
      double g = std::pow(grad_Em_Lq_ball_q(u, par.m, par.q, x, r), 1.0 / par.q);
      double s = norm_W1p_ball_domain(u, par.p, x, r, par.m);
      if (s <= 0) continue;
      best = std::max(best, std::pow(g / s, par.kappa()));
    }
    return best;
  }

 private:
  // Integral of |grad f|^q over the full ball via spherical midpoint rule.
  double ball_integral_grad_q(const FieldEval& f, const Pt& x, double r,
                              double q, int NR = 24, int NT = 16,
                              int NP = 32) const {
    PairwiseSum sum;
    double dr = r / NR, dth = M_PI / NT, dph = 2.0 * M_PI / NP;
    for (int ir = 0; ir < NR; ++ir) {
      double rho = (ir + 0.5) * dr;
      for (int it = 0; it < NT; ++it) {
        double th = (it + 0.5) * dth;
        for (int ip = 0; ip < NP; ++ip) {
          double ph = (ip + 0.5) * dph;
          Pt p{x[0] + rho * std::sin(th) * std::cos(ph),
               x[1] + rho * std::sin(th) * std::sin(ph),
               x[2] + rho * std::cos(th)};
          double v;
          Pt g;
          f(p, v, g);
          sum.push(std::pow(dot(g, g), 0.5 * q) * rho * rho * std::sin(th) * dr *
                   dth * dph);
        }
      }
    }
    return sum.value();
  }

  std::shared_ptr<CantorCylinderSpec> spec_;
  geom::CylinderIndex index_;
  int n_ = 3;
};

}  // namespace capres::ext
