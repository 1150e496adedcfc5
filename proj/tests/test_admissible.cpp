#include <catch2/catch.hpp>

#include "capres/admissible.hpp"

using namespace capres;
using namespace capres::geom;
using namespace capres::adm;

namespace {

// central difference quotient of a scalar field
double diff_quotient(const std::function<double(const Pt&)>& f, const Pt& x,
                     double step) {
  double s2 = 0;
  for (int a = 0; a < x.n; ++a) {
    Pt u = x, v = x;
    u[a] += step;
    v[a] -= step;
    s2 += sq((f(u) - f(v)) / (2 * step));
  }
  return std::sqrt(s2);
}

}  // namespace

TEST_CASE("bump profile endpoints and slope") {
  Pt x{0.3, -0.1, 0.2};
  double r = 0.4;
  auto u = bump_u(x, r);
  Pt on_quarter = x;
  on_quarter[0] += 0.25 * r;
  CHECK(u.value(on_quarter) == Approx(1.0));
  Pt mid = x;
  mid[1] += 0.375 * r;
  CHECK(u.value(mid) == Approx(0.5));
  Pt out = x;
  out[2] += 0.55 * r;
  CHECK(u.value(out) == 0.0);
}

TEST_CASE("radial profile: branch endpoints and exact energy scaling") {
  int n = 3;
  auto v1 = radial_v(1.0, n);
  CHECK(v1.value(Pt{0.25, 0.0, 0.0}) == Approx(1.0));
  CHECK(v1.value(Pt{0.5, 0.0, 0.0}) == 0.0);
  for (double p : {1.5, 2.0, 3.0}) {
    auto va = radial_v(0.2, n), vb = radial_v(0.4, n);
    CHECK(vb.energy(p) / va.energy(p) ==
          Approx(std::pow(2.0, n - p)).epsilon(1e-12));
  }
}

TEST_CASE("radial energy matches an independent 1d quadrature") {
  int n = 3;
  double r = 0.37;
  auto v = radial_v(r, n);
  for (double p : {1.5, 2.0, 2.5}) {
    // independent oracle: radial shell integral of (4/r)^p
    auto f = [&](double rho) {
      return std::pow(4.0 / r, p) * unit_sphere_area(n) * std::pow(rho, n - 1);
    };
    double oracle = integrate_1d(f, 0.25 * r, 0.5 * r, 1e-12);
    CHECK(v.energy(p) == Approx(oracle).epsilon(1e-9));
  }
}

TEST_CASE("bump norm bound: W^{1,p}(B cap Omega) <= (C/r)|B cap Omega|^{1/p}") {
  // ball domain, base point on the boundary; C must stay bounded across r
  int n = 3;
  double p = 2.0;
  Pt center{1.0, 0.0, 0.0};  // on the unit sphere
  Domain ball = make_ball(Pt::zero(3), 1.0);
  static_cast<void>(n);
  double worst_c = 0;
  for (int i = 2; i <= 6; ++i) {
    double r = std::pow(2.0, -i);
    auto u = bump_u(center, r);
    // Monte Carlo over B(center, r) ∩ ball
    Rng rng(77 + static_cast<uint64_t>(i));
    BBox box = BBox::of_ball(center, r);
    int64_t N = 200000, hits = 0;
    PairwiseSum val, grd;
    for (int64_t k = 0; k < N; ++k) {
      Pt y = rng.in_box(box);
      if (dist(y, center) >= r || !ball.contains(y)) continue;
      ++hits;
      val.push(std::pow(std::abs(u.value(y)), p));
      Pt g = u.grad(y);
      grd.push(std::pow(dot(g, g), 0.5 * p));
    }
    double cellv = box.volume() / static_cast<double>(N);
    double vol = cellv * static_cast<double>(hits);
    double norm = std::pow(cellv * val.value() + cellv * grd.value(), 1.0 / p);
    double c = r * norm / std::pow(vol, 1.0 / p);
    worst_c = std::max(worst_c, c);
  }
  CHECK(worst_c < 6.0);  // (1 + 4^p)^{1/p} = sqrt(17) ~ 4.12 plus sampling slack
}

TEST_CASE("lateral-cut test function: plate values and gradient bound") {
  CuspFunction w = CuspFunction::quadratic();
  int n = 3;
  double r = 0.25;
  auto v1 = cusp_v1(r, w, n);

  // inside the narrow core
  double w4 = w(r / 4);
  CHECK(v1.value(Pt{0.05, 0.5 * w4, 0.0}) == Approx(1.0));
  // outside the lateral support
  CHECK(v1.value(Pt{0.05, 1.2 * w(r / 2), 0.0}) == 0.0);
  // outside the radial support
  CHECK(v1.value(Pt{0.6 * r, 0.0, 0.0}) == 0.0);

  // sampled difference quotients against the family bound
  Rng rng(3);
  for (int i = 0; i < 400; ++i) {
    Pt z{rng.uniform(-0.6 * r, 0.6 * r), rng.uniform(-2 * w(r), 2 * w(r)),
         rng.uniform(-2 * w(r), 2 * w(r))};
    double dq = diff_quotient(v1.value, z, 1e-7);
    CHECK(dq <= 1.05 * v1.grad_bound(z) + 1e-6);
  }
}

TEST_CASE("lateral-cut energies follow r w(r)^{n-1-p}") {
  CuspFunction w = CuspFunction::quadratic();
  int n = 3;
  double p = 1.5;
  std::vector<double> ratios;
  for (int i = 3; i <= 8; ++i) {
    double r = std::pow(2.0, -i);
    auto v1 = cusp_v1(r, w, n);
    double e = v1.energy(p);
    ratios.push_back(e / (r * std::pow(w(r), n - 1 - p)));
  }
  double lo = *std::min_element(ratios.begin(), ratios.end());
  double hi = *std::max_element(ratios.begin(), ratios.end());
  CHECK(lo > 0);
  CHECK(hi / lo < 3.0);
}

TEST_CASE("log-cut test function: values, degeneracy, energy normalization") {
  CuspFunction w = CuspFunction::quadratic();
  int n = 3;
  double r = 1.0 / 8.0;
  auto v2 = cusp_logcut_v2(r, w, n);
  double w4 = w(r / 4);
  CHECK(v2.value(Pt{0.02, 0.5 * w4, 0.0}) == Approx(1.0));
  // on the lateral edge |x| = r/4 the cut vanishes
  CHECK(v2.value(Pt{0.01, 0.25 * r, 0.0}) == Approx(0.0).margin(1e-12));

  // degenerate when w(r/4) >= r/4
  auto wide = CuspFunction::tabulated({{1.0, 1.0}});  // w(t) = t
  CHECK_THROWS_AS(cusp_logcut_v2(r, wide, n), ValidationError);

  // energy * log^{n-2}(r/w(r)) / r bounded above and below
  std::vector<double> norm;
  for (int i = 3; i <= 7; ++i) {
    double rr = std::pow(2.0, -i);
    auto v = cusp_logcut_v2(rr, w, n);
    double e = v.energy(n - 1.0);
    norm.push_back(e * std::pow(std::log(rr / w(rr)), n - 2) / rr);
  }
  double lo = *std::min_element(norm.begin(), norm.end());
  double hi = *std::max_element(norm.begin(), norm.end());
  CHECK(lo > 0);
  CHECK(hi / lo < 2.5);
}

TEST_CASE("admissibility: upper-bound role and rejection paths") {
  int n = 3;
  double r = 0.8;
  Condenser c;
  Pt o = Pt::zero(n);
  c.plateE = make_ball(o, 0.25 * r);
  c.plateF = make_annulus(o, 0.5 * r, 0.75 * r);
  c.ambient = make_ball(o, r);
  c.p = 2.0;

  auto v = radial_v(r, n);
  auto est = upper_bound_from_admissible(c, v);
  CHECK(est.kind == cap::EstimateKind::TestFunctionUpperBound);
  // infimum below any admissible energy
  double exact = cap::oracle_concentric_balls(n, 2.0, 0.25 * r, 0.5 * r);
  CHECK(est.value >= exact);

  // constant one fails on the far plate
  TestFunction one = v;
  one.value = [](const Pt&) { return 1.0; };
  CHECK_THROWS_AS(upper_bound_from_admissible(c, one), ValidationError);

  // solver value stays under the admissible bound with slack
  grid::Lattice lat = grid::Lattice::covering(c.ambient.bbox(), 48);
  auto solved = cap::solve_capacity(c, lat);
  CHECK(solved.estimate.value <= est.value * 1.10);
}
