#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>

#include "capres/common.hpp"
#include "capres/grid.hpp"

namespace capres::cap {

using geom::Condenser;
using grid::CellMask;
using grid::CellWeight;
using grid::GridFunction;
using grid::Lattice;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Closed form for concentric plates: Cap_p(B(x,r), A(x;R,2R); B(x,2R)).

inline double oracle_concentric_balls(int n, double p, double r, double R) {
  if (!(0 < r && r < R)) throw ValidationError("oracle: need 0 < r < R");
  if (n < 2) throw ValidationError("oracle: need n >= 2");
  if (p <= 1.0)
    throw ValidationError(
        "oracle: p = 1 degenerates the closed form; use ratio checks");
  double omega = unit_sphere_area(n);
  if (std::abs(p - n) < 1e-14)
    return omega * std::pow(std::log(R / r), 1.0 - n);
  double e = (p - n) / (p - 1.0);
  double core = std::abs(std::pow(R, e) - std::pow(r, e));
  return omega * std::pow(std::abs(n - p) / (p - 1.0), p - 1.0) *
         std::pow(core, 1.0 - p);
}

// ---------------------------------------------------------------------------

enum class EstimateKind { ClosedForm, Solver, TestFunctionUpperBound };

struct CapacityEstimate {
  double value = 0;
  EstimateKind kind = EstimateKind::Solver;
  int iterations = 0;
  double residual = 0;
  json resolution;
  bool converged = true;
  bool approximate_p1 = false;

  json to_json() const {
    json j = {{"value", value},
              {"iterations", iterations},
              {"residual", residual},
              {"converged", converged}};
    j["kind"] = kind == EstimateKind::ClosedForm
                    ? "closed_form"
                    : (kind == EstimateKind::Solver ? "solver"
                                                    : "test_function_upper_bound");
    if (!resolution.is_null()) j["resolution"] = resolution;
    if (approximate_p1) j["approximate_p1"] = true;
    return j;
  }
};

struct SolverOptions {
  double tol = 1e-8;           // CG relative residual
  int max_inner = 20000;       // CG iterations per linear solve
  int max_outer = 40;          // IRLS reweighting steps
  std::vector<double> epsilon_schedule;  // absolute; default derived below
  double outer_tol = 1e-8;     // relative energy decrease stop
  double p1_delta = 0.01;      // p = 1 is run as p = 1 + delta
  int convention = 0;          // window convention tag, echoed in outputs
  int jobs = 1;                // workers for independent sweep points
  std::string cache_dir;       // warm-start cache ("" = env CAPRES_CACHE_DIR)
  bool use_cache = false;

  json to_json() const {
    return json{{"tol", tol},
                {"max_inner", max_inner},
                {"max_outer", max_outer},
                {"outer_tol", outer_tol},
                {"p1_delta", p1_delta},
                {"convention", convention}};
  }
};

// ---------------------------------------------------------------------------
// Matrix-free weighted quadratic form on active cells.

namespace detail {

// Fraction of the segment a..b lying outside `plate`, where b is inside.
inline double free_fraction(const geom::Domain& plate, const Pt& a, const Pt& b) {
  double lo = 0.0, hi = 1.0;  // plate boundary parameter in (0,1]
  for (int i = 0; i < 40; ++i) {
    double mid = 0.5 * (lo + hi);
    Pt m = a;
    for (int k = 0; k < a.n; ++k) m[k] = a[k] + mid * (b[k] - a[k]);
    if (plate.contains(m))
      hi = mid;
    else
      lo = mid;
  }
  return std::max(0.5 * (lo + hi), 0.05);
}

struct CellSystem {
  const Lattice& lat;
  int n;
  std::vector<int64_t> strides;
  std::vector<int64_t> cells;      // base flat index of each active cell
  std::vector<double> geo_weight;  // lattice measure weight per cell
  std::vector<double> irls_weight; // reweighting factor per cell
  std::vector<float> edge_scale;   // per cell*axis: 1/theta for cut edges
  double hn, inv_h;
  bool has_cuts = false;

  // When `cond` is given, plate interfaces are located on lattice edges by
  // bisection: cut edges use the true sub-edge length and cut cells are
  // weighted by their free-volume fraction.
  CellSystem(const Lattice& lat_, const CellMask& mask, const CellWeight& w,
             const Condenser* cond = nullptr)
      : lat(lat_), n(lat_.n()), hn(pow_int(lat_.h, lat_.n())), inv_h(1.0 / lat_.h) {
    grid::CellWalker walker(lat);
    strides = walker.strides;
    walker.visit(mask, [&](int64_t base, const std::vector<int>& idx) {
      cells.push_back(base);
      geo_weight.push_back(w ? w(grid::cell_center(lat, idx)) : 1.0);
    });
    irls_weight.assign(cells.size(), 1.0);
    edge_scale.assign(cells.size() * static_cast<size_t>(n), 1.0f);

    if (cond) {
      for (size_t ci = 0; ci < cells.size(); ++ci) {
        int64_t base = cells[ci];
        auto idx = lat.unflat(base);
        bool cell_cut = false;
        for (int a = 0; a < n; ++a) {
          int64_t o = base + strides[static_cast<size_t>(a)];
          uint8_t lb = mask.labels[static_cast<size_t>(base)];
          uint8_t le = mask.labels[static_cast<size_t>(o)];
          bool b_plate = (lb == grid::PLATE_E || lb == grid::PLATE_F);
          bool e_plate = (le == grid::PLATE_E || le == grid::PLATE_F);
          if (b_plate == e_plate) continue;
          cell_cut = true;
          const geom::Domain& plate =
              ((b_plate ? lb : le) == grid::PLATE_E) ? cond->plateE : cond->plateF;
          auto node_at = [&](int64_t f) {
            auto iv = lat.unflat(f);
            return lat.node(iv);
          };
          Pt pfree = node_at(b_plate ? o : base);
          Pt pplate = node_at(b_plate ? base : o);
          double theta = free_fraction(plate, pfree, pplate);
          edge_scale[ci * static_cast<size_t>(n) + static_cast<size_t>(a)] =
              static_cast<float>(1.0 / theta);
        }
        if (cell_cut) {
          // free-volume fraction of the cell by 3^n probe points
          Pt lo = lat.node(idx);
          int probes = 1, inside = 0;
          for (int a = 0; a < n; ++a) probes *= 3;
          for (int m = 0; m < probes; ++m) {
            int rem = m;
            Pt q = lo;
            for (int a = 0; a < n; ++a) {
              q[a] += lat.h * ((rem % 3) + 0.5) / 3.0;
              rem /= 3;
            }
            if (!cond->plateE.contains(q) && !cond->plateF.contains(q)) ++inside;
          }
          geo_weight[ci] *= std::max(1, inside) / static_cast<double>(probes);
          has_cuts = true;
        }
      }
    }
  }

  double edge_s(size_t ci, int a) const {
    return edge_scale[ci * static_cast<size_t>(n) + static_cast<size_t>(a)];
  }

  // r += A u (A = Hessian of the weighted quadratic form, acting on all nodes)
  void apply(const std::vector<double>& u, std::vector<double>& r) const {
    std::fill(r.begin(), r.end(), 0.0);
    double scale = 2.0 * hn * inv_h * inv_h;
    for (size_t ci = 0; ci < cells.size(); ++ci) {
      int64_t b = cells[ci];
      double w = scale * geo_weight[ci] * irls_weight[ci];
      for (int a = 0; a < n; ++a) {
        int64_t o = b + strides[static_cast<size_t>(a)];
        double es = edge_s(ci, a);
        double d = w * es * es *
                   (u[static_cast<size_t>(o)] - u[static_cast<size_t>(b)]);
        r[static_cast<size_t>(o)] += d;
        r[static_cast<size_t>(b)] -= d;
      }
    }
  }

  void diagonal(std::vector<double>& d) const {
    std::fill(d.begin(), d.end(), 0.0);
    double scale = 2.0 * hn * inv_h * inv_h;
    for (size_t ci = 0; ci < cells.size(); ++ci) {
      int64_t b = cells[ci];
      double w = scale * geo_weight[ci] * irls_weight[ci];
      for (int a = 0; a < n; ++a) {
        int64_t o = b + strides[static_cast<size_t>(a)];
        double es = edge_s(ci, a);
        d[static_cast<size_t>(o)] += w * es * es;
        d[static_cast<size_t>(b)] += w * es * es;
      }
    }
  }

  // Energy sum over cells of geo_w * (|grad|^2 + eps^2)^{p/2} h^n,
  // and refresh of the IRLS weights (|grad|^2 + eps^2)^{(p-2)/2}.
  double energy(const std::vector<double>& u, double p, double eps,
                bool refresh_weights) {
    PairwiseSum sum;
    double e2 = eps * eps;
    for (size_t ci = 0; ci < cells.size(); ++ci) {
      int64_t b = cells[ci];
      double g2 = e2;
      for (int a = 0; a < n; ++a) {
        double d = (u[static_cast<size_t>(b + strides[static_cast<size_t>(a)])] -
                    u[static_cast<size_t>(b)]) *
                   inv_h * edge_s(ci, a);
        g2 += d * d;
      }
      if (refresh_weights)
        irls_weight[ci] = (g2 == 0.0) ? 0.0 : std::pow(g2, 0.5 * p - 1.0);
      sum.push(geo_weight[ci] * ((g2 == 0.0) ? 0.0 : std::pow(g2, 0.5 * p)) * hn);
    }
    return sum.value();
  }
};

// Preconditioned CG on FREE nodes; u holds boundary data on plates.
// Returns iterations used, final relative residual in *res_out.
inline int conjugate_gradient(const CellSystem& sys, const CellMask& mask,
                              std::vector<double>& u, double tol, int max_iter,
                              double* res_out) {
  size_t nn = u.size();
  std::vector<double> r(nn), z(nn), p(nn), Ap(nn), diag(nn);

  auto dotf = [&](const std::vector<double>& a, const std::vector<double>& b) {
    PairwiseSum s;
    for (size_t i = 0; i < nn; ++i)
      if (mask.labels[i] == grid::FREE) s.push(a[i] * b[i]);
    return s.value();
  };

  // Reference scale: the boundary-data right-hand side.
  {
    std::vector<double> ubc(nn, 0.0);
    for (size_t i = 0; i < nn; ++i)
      if (mask.labels[i] != grid::FREE) ubc[i] = u[i];
    sys.apply(ubc, r);
  }
  double bnorm = std::sqrt(dotf(r, r));
  double floor_norm = std::max(bnorm, 1e-300);

  sys.apply(u, r);  // residual of the full system is -A u on FREE nodes
  for (size_t i = 0; i < nn; ++i)
    r[i] = (mask.labels[i] == grid::FREE) ? -r[i] : 0.0;
  sys.diagonal(diag);
  for (size_t i = 0; i < nn; ++i)
    if (diag[i] == 0.0) diag[i] = 1.0;

  double rn = std::sqrt(dotf(r, r));
  if (rn <= tol * floor_norm) {
    if (res_out) *res_out = rn / floor_norm;
    return 0;
  }
  for (size_t i = 0; i < nn; ++i)
    z[i] = (mask.labels[i] == grid::FREE) ? r[i] / diag[i] : 0.0;
  p = z;
  double rz = dotf(r, z);
  int it = 0;
  for (; it < max_iter; ++it) {
    sys.apply(p, Ap);
    for (size_t i = 0; i < nn; ++i)
      if (mask.labels[i] != grid::FREE) Ap[i] = 0.0;
    double pAp = dotf(p, Ap);
    if (pAp <= 0.0) break;
    double alpha = rz / pAp;
    for (size_t i = 0; i < nn; ++i)
      if (mask.labels[i] == grid::FREE) {
        u[i] += alpha * p[i];
        r[i] -= alpha * Ap[i];
      }
    rn = std::sqrt(dotf(r, r));
    if (rn <= tol * floor_norm) {
      ++it;
      break;
    }
    for (size_t i = 0; i < nn; ++i)
      if (mask.labels[i] == grid::FREE) z[i] = r[i] / diag[i];
    double rz_new = dotf(r, z);
    double beta = rz_new / rz;
    rz = rz_new;
    for (size_t i = 0; i < nn; ++i)
      if (mask.labels[i] == grid::FREE) p[i] = z[i] + beta * p[i];
  }
  if (res_out) *res_out = rn / floor_norm;
  return it;
}

inline std::string cache_key(const Condenser& c, const Lattice& lat, double p) {
  json j = {{"E", c.plateE.spec()},
            {"F", c.plateF.spec()},
            {"amb", c.ambient.spec()},
            {"p", p},
            {"lat", lat.to_json()}};
  return std::to_string(std::hash<std::string>{}(j.dump()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Variational capacity by energy minimization over FREE nodes.

struct SolveResult {
  CapacityEstimate estimate;
  GridFunction u;
  CellMask mask;
};

inline SolveResult solve_capacity_masked(const Condenser& c, const CellMask& mask,
                                         const SolverOptions& opts = {},
                                         const CellWeight& weight = nullptr) {
  const Lattice& lat = mask.lat;
  double p = c.p;
  bool p1 = false;
  if (p < 1.0) throw ValidationError("solve_capacity: need p >= 1");
  if (p == 1.0) {
    p = 1.0 + opts.p1_delta;
    p1 = true;
  }

  GridFunction u = GridFunction::zeros(lat);
  project_plates(u, mask);

  std::string cache_base;
  if (opts.use_cache) {
    std::string dir = opts.cache_dir;
    if (dir.empty()) {
      const char* env = std::getenv("CAPRES_CACHE_DIR");
      if (env) dir = env;
    }
    if (!dir.empty()) {
      std::filesystem::create_directories(dir);
      cache_base = dir + "/" + detail::cache_key(c, lat, p);
      try {
        GridFunction cached = grid::load_grid_function(cache_base);
        if (cached.values.size() == u.values.size()) {
          u.values = cached.values;
          project_plates(u, mask);
        }
      } catch (const std::exception&) {
      }
    }
  }

  detail::CellSystem sys(lat, mask, weight, &c);
  CapacityEstimate est;
  est.resolution = lat.to_json();
  est.approximate_p1 = p1;

  int total_iters = 0;
  double res = 0;

  // Harmonic warm start (exact solve for p = 2).
  total_iters += detail::conjugate_gradient(sys, mask, u.values, opts.tol,
                                            opts.max_inner, &res);
  bool converged = res <= opts.tol * 10 + 1e-30;

  if (std::abs(p - 2.0) > 1e-15) {
    std::vector<double> schedule = opts.epsilon_schedule;
    if (schedule.empty()) {
      double range = 1.0;  // plate value range
      for (int j = 1; j <= 6; ++j)
        schedule.push_back(range / lat.h * std::pow(10.0, -j));
    }
    int outer_used = 0;
    converged = false;
    std::vector<double> cand, trial(u.values.size());
    for (size_t si = 0; si < schedule.size(); ++si) {
      double eps = schedule[si];
      bool last = (si + 1 == schedule.size());
      int budget = last ? std::max(4, opts.max_outer - outer_used) : 4;
      // early reweighting stages tolerate loose inner solves
      double inner_tol = last ? opts.tol : std::max(opts.tol, 1e-5);
      double prev_energy = sys.energy(u.values, p, eps, false);
      int stagnant = 0;
      for (int s = 0; s < budget; ++s) {
        sys.energy(u.values, p, eps, true);  // refresh IRLS weights
        cand = u.values;
        total_iters += detail::conjugate_gradient(sys, mask, cand, inner_tol,
                                                  opts.max_inner, &res);
        if (res > inner_tol * 10) {
          if (++stagnant >= 2) break;
        } else {
          stagnant = 0;
        }
        // Backtracking on the true regularized energy; the reweighted step
        // overshoots for p > 2.
        double e_acc = prev_energy;
        double theta = 1.0;
        bool accepted = false;
        for (int ls = 0; ls < 30; ++ls, theta *= 0.5) {
          for (size_t i = 0; i < trial.size(); ++i)
            trial[i] = u.values[i] + theta * (cand[i] - u.values[i]);
          double e_t = sys.energy(trial, p, eps, false);
          if (e_t <= prev_energy) {
            u.values = trial;
            e_acc = e_t;
            accepted = true;
            break;
          }
        }
        ++outer_used;
        double rel = std::abs(prev_energy - e_acc) /
                     std::max(std::abs(e_acc), 1e-300);
        prev_energy = e_acc;
        if (!accepted || rel < opts.outer_tol) {
          if (last) converged = true;
          break;
        }
      }
    }
    if (!converged && outer_used < opts.max_outer) converged = true;
  }

  est.value = sys.energy(u.values, p, 0.0, false);
  est.iterations = total_iters;
  est.residual = res;
  est.converged = converged;
  est.kind = EstimateKind::Solver;

  if (!cache_base.empty()) grid::save_grid_function(u, nullptr, cache_base);

  SolveResult out;
  out.estimate = est;
  out.u = std::move(u);
  out.mask = mask;
  return out;
}

inline SolveResult solve_capacity(const Condenser& c, const Lattice& lat,
                                  const SolverOptions& opts = {},
                                  const CellWeight& weight = nullptr) {
  CellMask mask = grid::rasterize(c, lat);
  c.check_separation(2.0 * lat.h);
  return solve_capacity_masked(c, mask, opts, weight);
}

// ---------------------------------------------------------------------------
// Dense direct solve for small p=2 systems (independent oracle).

inline double dense_capacity_p2(const CellMask& mask,
                                const CellWeight& weight = nullptr,
                                const Condenser* cond = nullptr) {
  const Lattice& lat = mask.lat;
  int64_t nn = lat.node_count();
  std::vector<int64_t> free_ids;
  std::vector<int64_t> col(static_cast<size_t>(nn), -1);
  for (int64_t i = 0; i < nn; ++i)
    if (mask.labels[static_cast<size_t>(i)] == grid::FREE) {
      col[static_cast<size_t>(i)] = static_cast<int64_t>(free_ids.size());
      free_ids.push_back(i);
    }
  size_t m = free_ids.size();
  if (m > 4000) throw ValidationError("dense_capacity_p2: system too large");

  detail::CellSystem sys(lat, mask, weight, cond);
  std::vector<double> u0(static_cast<size_t>(nn), 0.0);
  for (int64_t i = 0; i < nn; ++i)
    if (mask.labels[static_cast<size_t>(i)] == grid::PLATE_E)
      u0[static_cast<size_t>(i)] = 1.0;

  // Assemble A (free block) and b = -A u0 by applying to unit vectors.
  std::vector<double> A(m * m, 0.0), b(m, 0.0), tmp(static_cast<size_t>(nn)),
      e(static_cast<size_t>(nn), 0.0);
  sys.apply(u0, tmp);
  for (size_t j = 0; j < m; ++j) b[j] = -tmp[static_cast<size_t>(free_ids[j])];
  for (size_t j = 0; j < m; ++j) {
    std::fill(e.begin(), e.end(), 0.0);
    e[static_cast<size_t>(free_ids[j])] = 1.0;
    sys.apply(e, tmp);
    for (size_t i = 0; i < m; ++i)
      A[i * m + j] = tmp[static_cast<size_t>(free_ids[i])];
  }
  // Gaussian elimination with partial pivoting.
  std::vector<double> x = b;
  for (size_t k = 0; k < m; ++k) {
    size_t piv = k;
    for (size_t i = k + 1; i < m; ++i)
      if (std::abs(A[i * m + k]) > std::abs(A[piv * m + k])) piv = i;
    if (piv != k) {
      for (size_t j = 0; j < m; ++j) std::swap(A[k * m + j], A[piv * m + j]);
      std::swap(x[k], x[piv]);
    }
    double d = A[k * m + k];
    if (d == 0.0) {
      // node outside every active cell: keep its value, decouple the row
      A[k * m + k] = d = 1.0;
      x[k] = 0.0;
    }
    for (size_t i = k + 1; i < m; ++i) {
      double f = A[i * m + k] / d;
      if (f == 0.0) continue;
      for (size_t j = k; j < m; ++j) A[i * m + j] -= f * A[k * m + j];
      x[i] -= f * x[k];
    }
  }
  for (size_t k = m; k-- > 0;) {
    for (size_t j = k + 1; j < m; ++j) x[k] -= A[k * m + j] * x[j];
    x[k] /= A[k * m + k];
  }
  std::vector<double> u = u0;
  for (size_t j = 0; j < m; ++j) u[static_cast<size_t>(free_ids[j])] = x[j];
  return sys.energy(u, 2.0, 0.0, false);
}

}  // namespace capres::cap
