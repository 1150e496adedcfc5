#pragma once

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "capres/common.hpp"
#include "capres/geometry.hpp"

namespace capres::grid {

using nlohmann::json;
using geom::Condenser;
using geom::Domain;

// ---------------------------------------------------------------------------

struct Lattice {
  Pt origin;
  double h = 0;
  std::vector<int> dims;  // nodes per axis

  static inline int64_t memory_cap_nodes = int64_t(1) << 26;  // ~67M nodes

  Lattice() = default;
  Lattice(Pt origin_, double h_, std::vector<int> dims_)
      : origin(origin_), h(h_), dims(std::move(dims_)) {
    if (!(h > 0)) throw ValidationError("lattice: spacing must be positive");
    if (node_count() > memory_cap_nodes)
      throw ValidationError("lattice: node count exceeds memory cap");
  }

  // Lattice covering a box with n nodes on the longest axis; spacing is
  // uniform, shorter axes get proportionally fewer nodes.
  static Lattice covering(const BBox& box, int nodes_longest) {
    double longest = 0;
    for (int i = 0; i < box.dim(); ++i) longest = std::max(longest, box.extent(i));
    double h = longest / (nodes_longest - 1);
    std::vector<int> dims(static_cast<size_t>(box.dim()));
    for (int i = 0; i < box.dim(); ++i)
      dims[static_cast<size_t>(i)] =
          std::max(2, static_cast<int>(std::ceil(box.extent(i) / h)) + 1);
    return Lattice(box.lo, h, dims);
  }

  int n() const { return static_cast<int>(dims.size()); }
  int64_t node_count() const {
    int64_t c = 1;
    for (int d : dims) c *= d;
    return c;
  }
  int64_t cell_count() const {
    int64_t c = 1;
    for (int d : dims) c *= (d - 1);
    return c;
  }
  Pt node(const std::vector<int>& idx) const {
    Pt p = origin;
    p.n = n();
    for (int i = 0; i < n(); ++i) p[i] += h * idx[static_cast<size_t>(i)];
    return p;
  }
  int64_t flat(const std::vector<int>& idx) const {
    int64_t f = 0;
    for (int i = n() - 1; i >= 0; --i)
      f = f * dims[static_cast<size_t>(i)] + idx[static_cast<size_t>(i)];
    return f;
  }
  std::vector<int> unflat(int64_t f) const {
    std::vector<int> idx(static_cast<size_t>(n()));
    for (int i = 0; i < n(); ++i) {
      idx[static_cast<size_t>(i)] = static_cast<int>(f % dims[static_cast<size_t>(i)]);
      f /= dims[static_cast<size_t>(i)];
    }
    return idx;
  }
  // Stride of axis i in flat index space.
  int64_t stride(int axis) const {
    int64_t s = 1;
    for (int i = 0; i < axis; ++i) s *= dims[static_cast<size_t>(i)];
    return s;
  }

  json to_json() const {
    json j = {{"spacing", h}, {"dims", dims}};
    for (int i = 0; i < n(); ++i) j["origin"].push_back(origin[i]);
    return j;
  }
};

enum Label : uint8_t { FREE = 0, PLATE_E = 1, PLATE_F = 2, EXTERIOR = 3 };

struct CellMask {
  Lattice lat;
  std::vector<uint8_t> labels;
  int64_t count[4] = {0, 0, 0, 0};

  uint8_t at(int64_t flat) const { return labels[static_cast<size_t>(flat)]; }
};

struct GridError : std::runtime_error {
  explicit GridError(const std::string& m) : std::runtime_error(m) {}
};

// ---------------------------------------------------------------------------
// Rasterize a condenser: node labels by membership of node coordinates.
// Plate labels take precedence (E over F) over FREE.

inline CellMask rasterize(const Condenser& c, const Lattice& lat,
                          bool enforce_band = true) {
  CellMask m;
  m.lat = lat;
  int64_t nn = lat.node_count();
  m.labels.assign(static_cast<size_t>(nn), EXTERIOR);

  int n = lat.n();
  std::vector<int> idx(static_cast<size_t>(n), 0);
  for (int64_t f = 0; f < nn; ++f) {
    Pt p = lat.origin;
    p.n = n;
    {
      int64_t rem = f;
      for (int i = 0; i < n; ++i) {
        int k = static_cast<int>(rem % lat.dims[static_cast<size_t>(i)]);
        rem /= lat.dims[static_cast<size_t>(i)];
        p[i] += lat.h * k;
      }
    }
    uint8_t lab = EXTERIOR;
    if (c.plateE.contains(p))
      lab = PLATE_E;
    else if (c.plateF.contains(p))
      lab = PLATE_F;
    else if (c.ambient.contains(p))
      lab = FREE;
    m.labels[static_cast<size_t>(f)] = lab;
    ++m.count[lab];
  }

  if (m.count[PLATE_E] == 0)
    throw GridError("rasterize: plate E has no nodes (under-resolved)");
  if (m.count[PLATE_F] == 0)
    throw GridError("rasterize: plate F has no nodes (under-resolved)");

  if (enforce_band) {
    // Reject when any E node is within 2 cells (Chebyshev) of an F node.
    int64_t nnodes = nn;
    for (int64_t f = 0; f < nnodes; ++f) {
      if (m.labels[static_cast<size_t>(f)] != PLATE_E) continue;
      auto idx0 = lat.unflat(f);
      std::vector<int> d(static_cast<size_t>(n), -2);
      while (true) {
        bool ok = true;
        std::vector<int> j(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
          j[static_cast<size_t>(i)] = idx0[static_cast<size_t>(i)] + d[static_cast<size_t>(i)];
          if (j[static_cast<size_t>(i)] < 0 ||
              j[static_cast<size_t>(i)] >= lat.dims[static_cast<size_t>(i)])
            ok = false;
        }
        if (ok && m.labels[static_cast<size_t>(lat.flat(j))] == PLATE_F)
          throw GridError("rasterize: plates adjacent, no FREE band (under-resolved)");
        int axis = 0;
        while (axis < n) {
          if (++d[static_cast<size_t>(axis)] <= 2) break;
          d[static_cast<size_t>(axis)] = -2;
          ++axis;
        }
        if (axis == n) break;
      }
    }
  }
  return m;
}

// ---------------------------------------------------------------------------

struct GridFunction {
  Lattice lat;
  std::vector<double> values;

  static GridFunction zeros(const Lattice& lat) {
    GridFunction u;
    u.lat = lat;
    u.values.assign(static_cast<size_t>(lat.node_count()), 0.0);
    return u;
  }
  static GridFunction sample(const Lattice& lat,
                             const std::function<double(const Pt&)>& f) {
    GridFunction u = zeros(lat);
    int n = lat.n();
    for (int64_t i = 0; i < lat.node_count(); ++i) {
      Pt p = lat.origin;
      p.n = n;
      int64_t rem = i;
      for (int a = 0; a < n; ++a) {
        int k = static_cast<int>(rem % lat.dims[static_cast<size_t>(a)]);
        rem /= lat.dims[static_cast<size_t>(a)];
        p[a] += lat.h * k;
      }
      u.values[static_cast<size_t>(i)] = f(p);
    }
    return u;
  }
};

// Pin plate values: 1 on PLATE_E, 0 on PLATE_F and EXTERIOR.
inline void project_plates(GridFunction& u, const CellMask& m) {
  for (size_t i = 0; i < u.values.size(); ++i) {
    if (m.labels[i] == PLATE_E) u.values[i] = 1.0;
    if (m.labels[i] == PLATE_F || m.labels[i] == EXTERIOR) u.values[i] = 0.0;
  }
}

// ---------------------------------------------------------------------------
// Cell iteration: a cell is "active" when all 2^n corner nodes are
// non-EXTERIOR.  Gradients are forward differences from the cell's base
// corner, one per axis.

struct CellWalker {
  const Lattice& lat;
  int n;
  std::vector<int64_t> strides;
  std::vector<int64_t> corner_offsets;

  explicit CellWalker(const Lattice& lat_) : lat(lat_), n(lat_.n()) {
    strides.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) strides[static_cast<size_t>(i)] = lat.stride(i);
    int corners = 1 << n;
    for (int m = 0; m < corners; ++m) {
      int64_t off = 0;
      for (int i = 0; i < n; ++i)
        if (m & (1 << i)) off += strides[static_cast<size_t>(i)];
      corner_offsets.push_back(off);
    }
  }

  // Visit all active cells: f(base_flat, cell_index_vector).
  template <class F>
  void visit(const CellMask& mask, F&& f) const {
    std::vector<int> idx(static_cast<size_t>(n), 0);
    while (true) {
      int64_t base = 0;
      for (int i = 0; i < n; ++i)
        base += idx[static_cast<size_t>(i)] * strides[static_cast<size_t>(i)];
      bool active = true;
      for (int64_t off : corner_offsets)
        if (mask.labels[static_cast<size_t>(base + off)] == EXTERIOR) {
          active = false;
          break;
        }
      if (active) f(base, idx);
      int axis = 0;
      while (axis < n) {
        if (++idx[static_cast<size_t>(axis)] < lat.dims[static_cast<size_t>(axis)] - 1)
          break;
        idx[static_cast<size_t>(axis)] = 0;
        ++axis;
      }
      if (axis == n) break;
    }
  }
};

// Forward-difference gradient of u on the cell with base node `base`.
inline void cell_gradient(const GridFunction& u, const CellWalker& w,
                          int64_t base, double* g) {
  for (int i = 0; i < w.n; ++i)
    g[i] = (u.values[static_cast<size_t>(base + w.strides[static_cast<size_t>(i)])] -
            u.values[static_cast<size_t>(base)]) /
           u.lat.h;
}

// Optional positive cell weight (e.g. the rotational measure factor of a
// meridian-plane lattice).  Receives the cell center.
using CellWeight = std::function<double(const Pt&)>;

inline Pt cell_center(const Lattice& lat, const std::vector<int>& idx) {
  Pt p = lat.origin;
  p.n = lat.n();
  for (int i = 0; i < lat.n(); ++i)
    p[i] += lat.h * (idx[static_cast<size_t>(i)] + 0.5);
  return p;
}

// Discrete p-energy: sum over active cells of (|grad|^2 + eps^2)^{p/2} h^n.
inline double p_energy(const GridFunction& u, const CellMask& mask, double p,
                       double eps = 0.0, const CellWeight& weight = nullptr) {
  if (!(p >= 1.0)) throw ValidationError("p_energy: need p >= 1");
  CellWalker w(u.lat);
  double hn = pow_int(u.lat.h, u.lat.n());
  PairwiseSum sum;
  double g[4];
  w.visit(mask, [&](int64_t base, const std::vector<int>& idx) {
    cell_gradient(u, w, base, g);
    double g2 = eps * eps;
    for (int i = 0; i < w.n; ++i) g2 += g[i] * g[i];
    double wgt = weight ? weight(cell_center(u.lat, idx)) : 1.0;
    double val = (g2 == 0.0) ? 0.0 : std::pow(g2, 0.5 * p);
    sum.push(val * hn * wgt);
  });
  return sum.value();
}

// Discrete W^{1,p} norm: ||u||_{L^p} + ||grad u||_{L^p} over the
// non-EXTERIOR region (cell-averaged values for the zeroth-order term).
inline double sobolev_norm(const GridFunction& u, const CellMask& mask,
                           double p, const CellWeight& weight = nullptr) {
  if (!(p >= 1.0)) throw ValidationError("sobolev_norm: need p >= 1");
  CellWalker w(u.lat);
  double hn = pow_int(u.lat.h, u.lat.n());
  PairwiseSum val_sum, grad_sum;
  double g[4];
  w.visit(mask, [&](int64_t base, const std::vector<int>& idx) {
    cell_gradient(u, w, base, g);
    double g2 = 0;
    for (int i = 0; i < w.n; ++i) g2 += g[i] * g[i];
    double avg = 0;
    for (int64_t off : w.corner_offsets)
      avg += u.values[static_cast<size_t>(base + off)];
    avg /= static_cast<double>(w.corner_offsets.size());
    double wgt = weight ? weight(cell_center(u.lat, idx)) : 1.0;
    val_sum.push(std::pow(std::abs(avg), p) * hn * wgt);
    grad_sum.push((g2 == 0 ? 0.0 : std::pow(g2, 0.5 * p)) * hn * wgt);
  });
  return std::pow(val_sum.value(), 1.0 / p) + std::pow(grad_sum.value(), 1.0 / p);
}

// ---------------------------------------------------------------------------
// Flat binary + JSON header import/export.

inline void mask_rle(const CellMask& m, json& out) {
  // run-length encoding of labels
  json runs = json::array();
  size_t i = 0;
  while (i < m.labels.size()) {
    size_t j = i;
    while (j < m.labels.size() && m.labels[j] == m.labels[i]) ++j;
    runs.push_back({static_cast<int>(m.labels[i]), j - i});
    i = j;
  }
  out["mask_rle"] = runs;
}

inline void save_grid_function(const GridFunction& u, const CellMask* mask,
                               const std::string& base_path) {
  json header = u.lat.to_json();
  header["format"] = "float64";
  header["count"] = u.values.size();
  if (mask) mask_rle(*mask, header);
  std::ofstream hf(base_path + ".json");
  hf << header.dump(2) << "\n";
  std::ofstream bf(base_path + ".f64", std::ios::binary);
  bf.write(reinterpret_cast<const char*>(u.values.data()),
           static_cast<std::streamsize>(u.values.size() * sizeof(double)));
}

inline GridFunction load_grid_function(const std::string& base_path,
                                       CellMask* mask_out = nullptr) {
  std::ifstream hf(base_path + ".json");
  if (!hf) throw ValidationError("load_grid_function: missing header");
  json header;
  hf >> header;
  Pt origin;
  origin.n = static_cast<int>(header["origin"].size());
  for (int i = 0; i < origin.n; ++i) origin[i] = header["origin"][static_cast<size_t>(i)];
  Lattice lat(origin, header["spacing"], header["dims"].get<std::vector<int>>());
  GridFunction u = GridFunction::zeros(lat);
  std::ifstream bf(base_path + ".f64", std::ios::binary);
  if (!bf) throw ValidationError("load_grid_function: missing payload");
  bf.read(reinterpret_cast<char*>(u.values.data()),
          static_cast<std::streamsize>(u.values.size() * sizeof(double)));
  if (mask_out && header.contains("mask_rle")) {
    mask_out->lat = lat;
    mask_out->labels.clear();
    for (auto& run : header["mask_rle"]) {
      uint8_t lab = static_cast<uint8_t>(run[0].get<int>());
      size_t len = run[1];
      mask_out->labels.insert(mask_out->labels.end(), len, lab);
      mask_out->count[lab] += static_cast<int64_t>(len);
    }
  }
  return u;
}

// Voxel mask export: flat binary of labels + JSON header.
inline void save_voxel_mask(const CellMask& m, const std::string& base_path) {
  json header = m.lat.to_json();
  header["format"] = "uint8";
  std::ofstream hf(base_path + ".json");
  hf << header.dump(2) << "\n";
  std::ofstream bf(base_path + ".u8", std::ios::binary);
  bf.write(reinterpret_cast<const char*>(m.labels.data()),
           static_cast<std::streamsize>(m.labels.size()));
}

}  // namespace capres::grid
