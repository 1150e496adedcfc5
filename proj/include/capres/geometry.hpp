#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "capres/common.hpp"

namespace capres::geom {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Cusp profile functions w on [0,1]: w(0)=0, strictly increasing, doubling.

class CuspFunction {
 public:
  enum class Kind { PowerLog, LogLinear, Quadratic, Tabulated };

  static CuspFunction power_log(double s, double alpha) {
    CuspFunction w;
    w.kind_ = Kind::PowerLog;
    w.s_ = s;
    w.alpha_ = alpha;
    w.validate();
    return w;
  }
  // w(t) = t / log^beta(e/t)
  static CuspFunction log_linear(double beta) {
    CuspFunction w;
    w.kind_ = Kind::LogLinear;
    w.beta_ = beta;
    w.validate();
    return w;
  }
  static CuspFunction quadratic() { return power_log(2.0, 0.0); }

  // Monotone piecewise-linear interpolation of user samples (t_i, w_i).
  static CuspFunction tabulated(std::vector<std::pair<double, double>> tab) {
    CuspFunction w;
    w.kind_ = Kind::Tabulated;
    std::sort(tab.begin(), tab.end());
    if (tab.empty() || tab.front().first > 0.0)
      tab.insert(tab.begin(), {0.0, 0.0});
    w.table_ = std::move(tab);
    w.validate();
    return w;
  }

  double operator()(double t) const {
    if (t <= 0) return 0.0;
    switch (kind_) {
      case Kind::PowerLog:
        return std::pow(t, s_) * std::pow(std::log(M_E / t), alpha_);
      case Kind::LogLinear:
        return t / std::pow(std::log(M_E / t), beta_);
      case Kind::Quadratic:
        return t * t;
      case Kind::Tabulated: {
        auto it = std::lower_bound(
            table_.begin(), table_.end(), t,
            [](const std::pair<double, double>& a, double v) { return a.first < v; });
        if (it == table_.end()) return table_.back().second;
        if (it == table_.begin()) return it->second;
        auto prev = std::prev(it);
        double u = (t - prev->first) / (it->first - prev->first);
        return prev->second + u * (it->second - prev->second);
      }
    }
    return 0.0;
  }

  Kind kind() const { return kind_; }
  double power() const { return s_; }
  double log_exponent() const { return kind_ == Kind::LogLinear ? beta_ : alpha_; }
  double doubling_constant() const { return doubling_c_; }

  json to_json() const {
    json j;
    switch (kind_) {
      case Kind::PowerLog:
        j = {{"kind", "power_log"}, {"s", s_}, {"alpha", alpha_}};
        break;
      case Kind::LogLinear:
        j = {{"kind", "log_linear"}, {"beta", beta_}};
        break;
      case Kind::Quadratic:
        j = {{"kind", "quadratic"}};
        break;
      case Kind::Tabulated: {
        j["kind"] = "tabulated";
        for (auto& [t, v] : table_) j["table"].push_back({t, v});
        break;
      }
    }
    return j;
  }

  static CuspFunction from_json(const json& j) {
    std::string k = j.at("kind");
    if (k == "power_log") return power_log(j.at("s"), j.at("alpha"));
    if (k == "log_linear") return log_linear(j.at("beta"));
    if (k == "quadratic") return quadratic();
    if (k == "tabulated") {
      std::vector<std::pair<double, double>> tab;
      for (auto& e : j.at("table")) tab.emplace_back(e[0], e[1]);
      return tabulated(tab);
    }
    throw ValidationError("CuspFunction: unknown kind " + k);
  }

 private:
  void validate() {
    const auto& w = *this;
    if (std::abs(w(0.0)) > 0)
      throw ValidationError("cusp function: w(0) != 0");
    double prev = 0.0;
    double worst_doubling = 1.0;
    for (int i = 1; i <= 400; ++i) {
      double t = i / 400.0;
      double v = w(t);
      if (!(v > prev))
        throw ValidationError("cusp function: not strictly increasing at t=" +
                              std::to_string(t));
      if (v > t + 1e-12)
        throw ValidationError("cusp function: w(t) > t at t=" +
                              std::to_string(t));
      prev = v;
      if (t <= 0.5) {
        double c = w(2.0 * t) / v;
        worst_doubling = std::max(worst_doubling, c);
      }
    }
    // Sample small scales for the doubling constant as well.
    for (int i = 1; i <= 40; ++i) {
      double t = std::pow(2.0, -i / 2.0 - 1.0);
      worst_doubling = std::max(worst_doubling, w(2.0 * t) / w(t));
    }
    doubling_c_ = worst_doubling;
  }

  Kind kind_ = Kind::Quadratic;
  double s_ = 2.0, alpha_ = 0.0, beta_ = 0.0;
  double doubling_c_ = 1.0;
  std::vector<std::pair<double, double>> table_;
};

// ---------------------------------------------------------------------------
// Implicit domains: membership predicate + bounding box.

class Domain {
 public:
  Domain() = default;
  Domain(int n, BBox box, std::function<bool(const Pt&)> inside, json spec)
      : n_(n), box_(box), inside_(std::move(inside)), spec_(std::move(spec)) {}

  bool contains(const Pt& p) const {
    if (!box_.contains(p, 1e-14)) return false;
    return inside_(p);
  }
  int dim() const { return n_; }
  const BBox& bbox() const { return box_; }
  const json& spec() const { return spec_; }

  // Optional interior point sampler (used for thin domains where rejection
  // sampling in the bounding box is hopeless).
  void set_sampler(std::function<Pt(Rng&)> s) { sampler_ = std::move(s); }
  const std::function<Pt(Rng&)>& sampler() const { return sampler_; }
  Pt sample_inside(Rng& rng, int max_tries = 100000) const {
    if (sampler_) {
      for (int i = 0; i < max_tries; ++i) {
        Pt p = sampler_(rng);
        if (contains(p)) return p;
      }
    }
    for (int i = 0; i < max_tries; ++i) {
      Pt p = rng.in_box(box_);
      if (inside_(p)) return p;
    }
    throw NumericalError("sample_inside: no interior point found");
  }

  bool valid() const { return static_cast<bool>(inside_); }

 private:
  int n_ = 3;
  BBox box_;
  std::function<bool(const Pt&)> inside_;
  std::function<Pt(Rng&)> sampler_;
  json spec_;
};

inline Domain make_ball(const Pt& x, double r) {
  json spec = {{"kind", "ball"}, {"radius", r}};
  for (int i = 0; i < x.n; ++i) spec["center"].push_back(x[i]);
  return Domain(x.n, BBox::of_ball(x, r),
                [x, r](const Pt& p) { return dist(p, x) < r; }, spec);
}

inline Domain make_annulus(const Pt& x, double s, double t) {
  if (!(0 < s && s < t)) throw ValidationError("annulus: need 0 < s < t");
  json spec = {{"kind", "annulus"}, {"inner", s}, {"outer", t}};
  for (int i = 0; i < x.n; ++i) spec["center"].push_back(x[i]);
  return Domain(x.n, BBox::of_ball(x, t),
                [x, s, t](const Pt& p) {
                  double d = dist(p, x);
                  return d >= s && d < t;
                },
                spec);
}

inline Domain make_box(const BBox& b) {
  json spec = {{"kind", "box"}};
  for (int i = 0; i < b.dim(); ++i) {
    spec["lo"].push_back(b.lo[i]);
    spec["hi"].push_back(b.hi[i]);
  }
  return Domain(b.dim(), b, [b](const Pt& p) { return b.contains(p); }, spec);
}

// Half-space {x . normal > offset}, clipped to a bounding box.
inline Domain make_halfspace(const Pt& normal, double offset, const BBox& clip) {
  json spec = {{"kind", "halfspace"}, {"offset", offset}};
  for (int i = 0; i < normal.n; ++i) spec["normal"].push_back(normal[i]);
  return Domain(normal.n, clip,
                [normal, offset, clip](const Pt& p) {
                  return clip.contains(p) && dot(p, normal) > offset;
                },
                spec);
}

inline Domain intersect(const Domain& a, const Domain& b) {
  BBox box = a.bbox();
  for (int i = 0; i < box.dim(); ++i) {
    box.lo[i] = std::max(box.lo[i], b.bbox().lo[i]);
    box.hi[i] = std::min(box.hi[i], b.bbox().hi[i]);
    if (box.lo[i] > box.hi[i]) box.hi[i] = box.lo[i];
  }
  json spec = {{"kind", "intersection"}, {"a", a.spec()}, {"b", b.spec()}};
  Domain d(a.dim(), box,
           [a, b](const Pt& p) { return a.contains(p) && b.contains(p); }, spec);
  if (a.sampler()) d.set_sampler(a.sampler());
  return d;
}

inline Domain unite(const Domain& a, const Domain& b) {
  json spec = {{"kind", "union"}, {"a", a.spec()}, {"b", b.spec()}};
  Domain d(a.dim(), BBox::hull(a.bbox(), b.bbox()),
           [a, b](const Pt& p) { return a.contains(p) || b.contains(p); }, spec);
  if (a.sampler()) d.set_sampler(a.sampler());
  return d;
}

inline Domain subtract(const Domain& a, const Domain& b) {
  json spec = {{"kind", "difference"}, {"a", a.spec()}, {"b", b.spec()}};
  Domain d(a.dim(), a.bbox(),
           [a, b](const Pt& p) { return a.contains(p) && !b.contains(p); }, spec);
  if (a.sampler()) d.set_sampler(a.sampler());
  return d;
}

// ---------------------------------------------------------------------------
// Outward cusp domain: the horn {0 < t <= 1, |x| < w(t)} glued to the ball
// B^n((2,0,...,0), sqrt(2)).

inline Domain make_cusp(const CuspFunction& w, int n) {
  if (n < 2) throw ValidationError("cusp domain: need n >= 2");
  Pt lo = Pt::zero(n), hi = Pt::zero(n);
  lo[0] = 0.0;
  hi[0] = 2.0 + std::sqrt(2.0);
  for (int i = 1; i < n; ++i) {
    lo[i] = -std::sqrt(2.0);
    hi[i] = std::sqrt(2.0);
  }
  Pt ball_center = Pt::zero(n);
  ball_center[0] = 2.0;
  const double ball_r = std::sqrt(2.0);
  json spec = {{"kind", "cusp"}, {"n", n}, {"w", w.to_json()}};
  Domain d(
      n, BBox{lo, hi},
      [w, ball_center, ball_r](const Pt& z) {
        double t = z[0];
        if (t > 0.0 && t <= 1.0 && lateral_norm(z) < w(t)) return true;
        return dist(z, ball_center) < ball_r;
      },
      spec);
  // Parametric sampler for the thin horn plus the ball.
  d.set_sampler([w, n, ball_center, ball_r](Rng& rng) {
    if (rng.uniform(0, 1) < 0.5) {
      double t = rng.uniform(1e-9, 1.0);
      double rad = w(t) * std::pow(rng.uniform(0, 1), 1.0 / (n - 1));
      Pt p = Pt::zero(n);
      p[0] = t;
      // random direction in the lateral (n-1)-space
      double s2 = 0;
      for (int i = 1; i < n; ++i) {
        p[i] = rng.uniform(-1, 1);
        s2 += p[i] * p[i];
      }
      double sc = (s2 > 0) ? rad / std::sqrt(s2) : 0.0;
      for (int i = 1; i < n; ++i) p[i] *= sc;
      return p;
    }
    Pt p = Pt::zero(n);
    for (int i = 0; i < n; ++i)
      p[i] = ball_center[i] + rng.uniform(-ball_r, ball_r);
    return p;
  });
  return d;
}

inline bool cusp_membership(const CuspFunction& w, const Pt& z, int n) {
  if (z.n != n) throw ValidationError("cusp_membership: dimension mismatch");
  static_cast<void>(n);
  double t = z[0];
  if (t > 0.0 && t <= 1.0 && lateral_norm(z) < w(t)) return true;
  Pt ball_center = Pt::zero(z.n);
  ball_center[0] = 2.0;
  return dist(z, ball_center) < std::sqrt(2.0);
}

// ---------------------------------------------------------------------------
// Condenser: plates E, F inside (the closure of) an ambient open set.

struct Condenser {
  Domain plateE, plateF, ambient;
  double p = 2.0;

  // Sampled plate separation check. Plates must keep a positive distance;
  // the caller-supplied minimum is typically 2 grid cells.
  void check_separation(double min_dist, uint64_t seed = 17,
                        int samples = 200) const {
    Rng rng(seed);
    std::vector<Pt> es, fs;
    for (int i = 0; i < samples; ++i) {
      try {
        es.push_back(plateE.sample_inside(rng, 2000));
      } catch (const NumericalError&) {
        break;
      }
    }
    for (int i = 0; i < samples; ++i) {
      try {
        fs.push_back(plateF.sample_inside(rng, 2000));
      } catch (const NumericalError&) {
        break;
      }
    }
    for (const auto& e : es)
      for (const auto& f : fs)
        if (dist(e, f) < min_dist)
          throw ValidationError("condenser: plates closer than resolution floor");
  }
};

// ---------------------------------------------------------------------------
// Smith-Volterra-Cantor set at a finite level: at step j remove the open
// middle interval of length 4^{-j} from each of the 2^{j-1} survivors.
// All endpoints are dyadic rationals, exactly representable.

class SvcSet {
 public:
  static SvcSet build(int level) {
    if (level < 0) throw ValidationError("svc_build: level must be >= 0");
    SvcSet s;
    s.level_ = level;
    s.intervals_ = {{0.0, 1.0}};
    for (int j = 1; j <= level; ++j) {
      std::vector<std::pair<double, double>> next;
      double remove = std::pow(2.0, -2.0 * j);  // 4^{-j}, exact
      next.reserve(s.intervals_.size() * 2);
      for (auto& [a, b] : s.intervals_) {
        double mid = 0.5 * (a + b);
        next.push_back({a, mid - 0.5 * remove});
        next.push_back({mid + 0.5 * remove, b});
      }
      s.intervals_ = std::move(next);
    }
    return s;
  }

  static SvcSet empty_set() {
    SvcSet s;
    s.level_ = std::numeric_limits<int>::max();
    s.intervals_.clear();
    return s;
  }

  int level() const { return level_; }
  const std::vector<std::pair<double, double>>& intervals() const {
    return intervals_;
  }

  double total_length() const {
    double s = 0;
    for (auto& [a, b] : intervals_) s += b - a;
    return s;
  }

  // 1 - sum_{j=1..k} 2^{j-1} 4^{-j}
  static double expected_length(int level) {
    double s = 0;
    for (int j = 1; j <= level; ++j)
      s += std::pow(2.0, j - 1.0) * std::pow(2.0, -2.0 * j);
    return 1.0 - s;
  }

  bool contains(double x) const { return distance(x) == 0.0; }

  // Exact distance from x to the level-k set.
  double distance(double x) const {
    if (intervals_.empty()) return std::numeric_limits<double>::infinity();
    auto it = std::lower_bound(
        intervals_.begin(), intervals_.end(), x,
        [](const std::pair<double, double>& iv, double v) { return iv.second < v; });
    double best = std::numeric_limits<double>::infinity();
    if (it != intervals_.end()) {
      if (x >= it->first && x <= it->second) return 0.0;
      best = std::min(best, std::abs(it->first - x));
    }
    if (it != intervals_.begin()) {
      auto pv = std::prev(it);
      best = std::min(best, std::abs(x - pv->second));
    }
    return best;
  }

  // Minimal distance from the interval [a,b] to the set.
  double distance_interval(double a, double b) const {
    if (a > b) std::swap(a, b);
    if (intervals_.empty()) return std::numeric_limits<double>::infinity();
    auto it = std::lower_bound(
        intervals_.begin(), intervals_.end(), a,
        [](const std::pair<double, double>& iv, double v) { return iv.second < v; });
    if (it != intervals_.end() && it->first <= b) return 0.0;
    return std::min(distance(a), distance(b));
  }

 private:
  int level_ = 0;
  std::vector<std::pair<double, double>> intervals_;
};

// Product E^{d} of d copies of an SVC approximation, living in [0,1]^d.
class SvcProduct {
 public:
  SvcProduct(SvcSet svc, int d) : svc_(std::move(svc)), d_(d) {}

  int dim() const { return d_; }
  int level() const { return svc_.level(); }
  const SvcSet& factor() const { return svc_; }

  double distance(const Pt& p) const {
    double s2 = 0;
    for (int i = 0; i < d_; ++i) s2 += sq(svc_.distance(p[i]));
    return std::sqrt(s2);
  }

  // Exact distance from an axis-aligned cube to the product set: coordinate
  // minima separate across factors.
  double distance_box(const Pt& lo, const Pt& hi) const {
    double s2 = 0;
    for (int i = 0; i < d_; ++i) {
      double di = svc_.distance_interval(lo[i], hi[i]);
      if (std::isinf(di)) return di;
      s2 += sq(di);
    }
    return std::sqrt(s2);
  }

 private:
  SvcSet svc_;
  int d_;
};

// ---------------------------------------------------------------------------
// Whitney cubes of (0,1)^{d} \ E^{d}: dyadic subdivision, a cube is accepted
// once diam(Q) <= dist(Q, E^d); the first-accept rule then gives
// diam <= dist <= 4 diam.  Generation k holds edge lengths in [2^{-k-1}, 2^{-k}).

struct WhitneyCube {
  Pt center;       // in (0,1)^{d}
  double edge = 0; // 2^{-g} for dyadic level g
  int generation = 0;
  int index = 0;   // position in the lexicographic numbering of its generation

  double diam() const { return edge * std::sqrt(static_cast<double>(center.n)); }
  Pt lo() const {
    Pt p = center;
    for (int i = 0; i < p.n; ++i) p[i] -= 0.5 * edge;
    return p;
  }
  Pt hi() const {
    Pt p = center;
    for (int i = 0; i < p.n; ++i) p[i] += 0.5 * edge;
    return p;
  }
};

struct WhitneyDecomposition {
  std::vector<WhitneyCube> cubes;                 // all accepted cubes
  std::map<int, std::vector<int>> by_generation;  // generation -> cube ids
  int max_generation = 0;

  int count(int k) const {
    auto it = by_generation.find(k);
    return it == by_generation.end() ? 0 : static_cast<int>(it->second.size());
  }
};

inline void whitney_recurse(const SvcProduct& E, const Pt& lo, const Pt& hi,
                            int dyadic_level, int max_level,
                            std::vector<WhitneyCube>& out) {
  double edge = hi[0] - lo[0];
  double diam = edge * std::sqrt(static_cast<double>(E.dim()));
  double d = E.distance_box(lo, hi);
  if (d >= diam && d > 0.0) {
    WhitneyCube c;
    c.center = lo;
    for (int i = 0; i < E.dim(); ++i) c.center[i] += 0.5 * edge;
    c.center.n = E.dim();
    c.edge = edge;
    out.push_back(c);
    return;
  }
  if (dyadic_level >= max_level) return;
  int d_ = E.dim();
  int corners = 1 << d_;
  for (int m = 0; m < corners; ++m) {
    Pt clo = lo, chi = hi;
    for (int i = 0; i < d_; ++i) {
      double mid = 0.5 * (lo[i] + hi[i]);
      if (m & (1 << i))
        clo[i] = mid;
      else
        chi[i] = mid;
    }
    whitney_recurse(E, clo, chi, dyadic_level + 1, max_level, out);
  }
}

inline WhitneyDecomposition whitney_decompose(const SvcProduct& E,
                                              int max_generation) {
  if (E.level() < max_generation)
    throw ValidationError(
        "whitney_decompose: SVC level too coarse for requested generation");
  WhitneyDecomposition W;
  W.max_generation = max_generation;
  Pt lo = Pt::zero(E.dim()), hi = Pt::zero(E.dim());
  for (int i = 0; i < E.dim(); ++i) hi[i] = 1.0;
  // Generation k cubes have edge 2^{-k-1}; descend one extra dyadic level.
  whitney_recurse(E, lo, hi, 0, max_generation + 1, W.cubes);
  // Keep cubes up to the requested generation, order lexicographically.
  // Edge 2^{-g-1} belongs to generation g; the root cube (empty obstacle
  // convention) gets generation -1.
  std::vector<WhitneyCube> kept;
  for (auto& c : W.cubes) {
    int g = static_cast<int>(std::lround(-std::log2(c.edge))) - 1;
    if (g <= max_generation) {
      c.generation = g;
      kept.push_back(c);
    }
  }
  std::sort(kept.begin(), kept.end(),
            [](const WhitneyCube& a, const WhitneyCube& b) {
              if (a.generation != b.generation) return a.generation < b.generation;
              for (int i = 0; i < a.center.n; ++i)
                if (a.center[i] != b.center[i]) return a.center[i] < b.center[i];
              return false;
            });
  W.cubes = std::move(kept);
  for (size_t i = 0; i < W.cubes.size(); ++i) {
    auto& c = W.cubes[i];
    c.index = static_cast<int>(W.by_generation[c.generation].size());
    W.by_generation[c.generation].push_back(static_cast<int>(i));
  }
  return W;
}

// ---------------------------------------------------------------------------
// Cantor-cylinder construction: unit cube Q_o = (0,1)^n with thin vertical
// cylinders over Whitney-cube centers attached above, glued at x_n = 1.

enum class HKind { Lambda, Identity, User };

struct CantorCylinderSpec {
  int n = 3;
  double q = 1.0;
  double lambda = 0.0;  // used when hkind == Lambda
  HKind hkind = HKind::Lambda;
  std::function<double(double)> h_user;  // used when hkind == User
  int truncation_m = 3;                  // cylinder generations kept (paper index k)
  int svc_level = 8;

  std::shared_ptr<WhitneyDecomposition> whitney;
  std::shared_ptr<SvcProduct> obstacle;
  std::vector<double> radii;  // r_k indexed by generation k (entry 0 unused)

  double h(double t) const;
  void build();

  json to_json() const {
    json j = {{"kind", "cantor_cylinder"},
              {"n", n},
              {"q", q},
              {"m", truncation_m},
              {"svc_level", svc_level}};
    if (hkind == HKind::Lambda) {
      j["h"] = "h_lambda";
      j["lambda"] = lambda;
    } else if (hkind == HKind::Identity) {
      j["h"] = "t";
    } else {
      j["h"] = "user";
    }
    return j;
  }
};

// h_lambda evaluated on the dyadic sequence t = 8^{-k}; k is bound from t
// when not supplied (t must then be a positive power of 1/8 up to rounding).
inline double h_lambda(double t, int k, int n, double q, double lambda) {
  if (k <= 0) throw ValidationError("h_lambda: k must be >= 1");
  if (!(t > 0) || !(t < 1)) throw ValidationError("h_lambda: need 0 < t < 1");
  double expo =
      ((1.0 - lambda * (n - 1 - q)) * (n - 1) * (k + 1) + k) / (3.0 * k);
  return std::pow(1.0 / t, expo);
}

inline double h_lambda_continuous(double t, int n, double q, double lambda) {
  if (!(t > 0) || !(t < 1))
    throw ValidationError("h_lambda_continuous: need 0 < t < 1");
  double k = std::log(1.0 / t) / std::log(8.0);
  double expo =
      ((1.0 - lambda * (n - 1 - q)) * (n - 1) * (k + 1) + k) / (3.0 * k);
  return std::pow(1.0 / t, expo);
}

inline double radii_rk(int n, double q, const std::function<double(double)>& h,
                       int k) {
  if (!(q >= 1.0 && q < n - 1))
    throw ValidationError("radii_rk: need 1 <= q < n-1");
  double t = std::pow(8.0, -k);
  double base = std::pow(2.0, -static_cast<double>((n - 1) * (k + 1) + k)) * h(t);
  return std::pow(base, 1.0 / (n - 1 - q));
}

// Alternative radii of the well-separated-scales variant, as log2(r_k);
// the raw values underflow past k = 2.
inline double alt_radii_log2(int k) {
  return -(k + 2.0) - std::exp(std::pow(2.0, k)) / std::log(2.0);
}

inline double CantorCylinderSpec::h(double t) const {
  switch (hkind) {
    case HKind::Lambda:
      return h_lambda_continuous(t, n, q, lambda);
    case HKind::Identity:
      return t;
    case HKind::User:
      return h_user(t);
  }
  return t;
}

inline void CantorCylinderSpec::build() {
  if (n != 3)
    throw ValidationError("cantor construction: rasterizable build is n=3 only");
  if (!(q >= 1.0 && q < n - 1))
    throw ValidationError("cantor construction: need 1 <= q < n-1");
  if (truncation_m > svc_level)
    throw ValidationError("cantor construction: truncation exceeds decomposition depth");
  obstacle = std::make_shared<SvcProduct>(SvcSet::build(svc_level), n - 1);
  whitney = std::make_shared<WhitneyDecomposition>(
      whitney_decompose(*obstacle, truncation_m));
  radii.assign(truncation_m + 1, 0.0);
  for (int k = 1; k <= truncation_m; ++k) {
    double hv = (hkind == HKind::Lambda)
                    ? h_lambda(std::pow(8.0, -k), k, n, q, lambda)
                    : h(std::pow(8.0, -k));
    double base =
        std::pow(2.0, -static_cast<double>((n - 1) * (k + 1) + k)) * hv;
    radii[k] = std::pow(base, 1.0 / (n - 1 - q));
    // The construction requires the disk D_k^j inside its Whitney cube.
    double edge = std::pow(2.0, -(k + 1));
    if (radii[k] >= 0.5 * edge)
      throw ValidationError("cantor construction: disk exceeds Whitney cube at k=" +
                            std::to_string(k));
  }
}

// Fast cylinder lookup: a disk of generation k lies strictly inside its
// Whitney cube of edge 2^{-k-1}, so the dyadic cell index of a point
// identifies the only candidate cube.
struct CylinderIndex {
  struct Gen {
    int k = 0;
    double inv_edge = 0;
    std::map<int64_t, int> cube_of_cell;  // packed (i0,i1) -> cube id
  };
  std::vector<Gen> gens;

  static int64_t pack(int64_t i, int64_t j) { return (i << 24) | j; }

  static CylinderIndex build(const WhitneyDecomposition& W, int m) {
    CylinderIndex ix;
    for (int k = 1; k <= m; ++k) {
      Gen g;
      g.k = k;
      g.inv_edge = std::pow(2.0, k + 1);
      auto it = W.by_generation.find(k);
      if (it != W.by_generation.end()) {
        for (int id : it->second) {
          const auto& c = W.cubes[static_cast<size_t>(id)];
          int64_t i0 = static_cast<int64_t>(std::floor(c.center[0] * g.inv_edge));
          int64_t i1 = static_cast<int64_t>(std::floor(c.center[1] * g.inv_edge));
          g.cube_of_cell[pack(i0, i1)] = id;
        }
      }
      ix.gens.push_back(std::move(g));
    }
    return ix;
  }

  // Returns cube id or -1.
  int find(const WhitneyDecomposition& W, const std::vector<double>& radii,
           double scale, double x0, double x1) const {
    for (const auto& g : gens) {
      int64_t i0 = static_cast<int64_t>(std::floor(x0 * g.inv_edge));
      int64_t i1 = static_cast<int64_t>(std::floor(x1 * g.inv_edge));
      auto it = g.cube_of_cell.find(pack(i0, i1));
      if (it == g.cube_of_cell.end()) continue;
      const auto& c = W.cubes[static_cast<size_t>(it->second)];
      double r = radii[static_cast<size_t>(g.k)] * scale;
      double dx = x0 - c.center[0], dy = x1 - c.center[1];
      if (dx * dx + dy * dy < r * r) return it->second;
    }
    return -1;
  }
};

// Membership domain for the truncated construction.  half_radius=true gives
// the thin-cylinder domain (radius r_k/2), false the full-radius one.
inline Domain build_cantor_domain(const CantorCylinderSpec& spec,
                                  bool half_radius = true) {
  if (!spec.whitney)
    throw ValidationError("build_cantor_domain: spec not built");
  int n = spec.n;
  Pt lo = Pt::zero(n), hi = Pt::zero(n);
  for (int i = 0; i < n - 1; ++i) hi[i] = 1.0;
  hi[n - 1] = 2.0;
  auto whitney = spec.whitney;
  auto radii = spec.radii;
  int m = spec.truncation_m;
  double scale = half_radius ? 0.5 : 1.0;
  auto index = std::make_shared<CylinderIndex>(CylinderIndex::build(*whitney, m));

  json spec_json = spec.to_json();
  spec_json["half_radius"] = half_radius;

  Domain d(
      n, BBox{lo, hi},
      [whitney, radii, m, scale, index](const Pt& p) {
        double xn = p[p.n - 1];
        bool in_base = true;
        for (int i = 0; i < p.n - 1; ++i)
          if (p[i] <= 0.0 || p[i] >= 1.0) in_base = false;
        if (in_base && xn > 0.0 && xn < 1.0) return true;
        if (!in_base || xn < 1.0 || xn >= 2.0) return false;
        return index->find(*whitney, radii, scale, p[0], p[1]) >= 0;
      },
      spec_json);
  d.set_sampler([whitney, radii, m, scale, n](Rng& rng) {
    // mostly the cube; occasionally a cylinder
    if (rng.uniform(0, 1) < 0.9 || whitney->cubes.empty()) {
      Pt p = Pt::zero(n);
      for (int i = 0; i < n - 1; ++i) p[i] = rng.uniform(0, 1);
      p[n - 1] = rng.uniform(0, 1);
      return p;
    }
    const auto& c = whitney->cubes[static_cast<size_t>(
        rng.uniform(0, static_cast<double>(whitney->cubes.size())))];
    double r = radii[std::max(1, std::min(c.generation, m))] * scale;
    double ang = rng.uniform(0, 2 * M_PI);
    double rad = r * std::sqrt(rng.uniform(0, 1));
    Pt p = Pt::zero(n);
    p[0] = c.center[0] + rad * std::cos(ang);
    p[1] = c.center[1] + rad * std::sin(ang);
    p[n - 1] = rng.uniform(1.0, 2.0);
    return p;
  });
  return d;
}

// ---------------------------------------------------------------------------
// Volume estimation: midpoint-grid counting or seeded Monte Carlo.

struct VolumeEstimate {
  double volume = 0;
  double stderr_ = 0;
};

enum class VolumeMethod { Grid, MonteCarlo };

inline VolumeEstimate volume_estimate(const Domain& domain, const Domain& window,
                                      VolumeMethod method, int64_t n_or_grid,
                                      uint64_t seed = 7) {
  const BBox& box = window.bbox();
  double bv = box.volume();
  if (!(bv > 0)) throw ValidationError("volume_estimate: zero-volume window");
  int dim = window.dim();
  if (method == VolumeMethod::Grid) {
    int g = static_cast<int>(n_or_grid);
    auto count_at = [&](int gg) {
      int64_t hits = 0;
      std::vector<int> idx(static_cast<size_t>(dim), 0);
      int64_t total = 1;
      for (int i = 0; i < dim; ++i) total *= gg;
      for (int64_t m = 0; m < total; ++m) {
        int64_t rem = m;
        Pt p = Pt::zero(dim);
        for (int i = 0; i < dim; ++i) {
          int64_t k = rem % gg;
          rem /= gg;
          p[i] = box.lo[i] + (k + 0.5) * box.extent(i) / gg;
        }
        if (window.contains(p) && domain.contains(p)) ++hits;
      }
      return bv * static_cast<double>(hits) / static_cast<double>(total);
    };
    double v = count_at(g);
    double v2 = count_at(std::max(2, g / 2));
    return {v, std::abs(v - v2)};
  }
  Rng rng(seed);
  int64_t hits = 0;
  for (int64_t i = 0; i < n_or_grid; ++i) {
    Pt p = rng.in_box(box);
    if (window.contains(p) && domain.contains(p)) ++hits;
  }
  double frac = static_cast<double>(hits) / static_cast<double>(n_or_grid);
  double se = bv * std::sqrt(std::max(frac * (1 - frac), 1e-300) /
                             static_cast<double>(n_or_grid));
  return {bv * frac, se};
}

}  // namespace capres::geom
