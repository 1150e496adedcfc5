#pragma once

#include <cstdio>
#include <optional>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "capres/common.hpp"

namespace capres::io {

using nlohmann::json;

inline std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Dyadic range "2^-a..2^-b" (inclusive, either direction); also accepts a
// comma list of plain reals.
inline std::vector<double> parse_dyadic_range(const std::string& s) {
  std::vector<double> out;
  auto parse_pow = [](const std::string& tok) -> std::optional<int> {
    if (tok.rfind("2^", 0) != 0) return std::nullopt;
    return std::stoi(tok.substr(2));
  };
  auto dots = s.find("..");
  if (dots != std::string::npos) {
    auto a = parse_pow(s.substr(0, dots));
    auto b = parse_pow(s.substr(dots + 2));
    if (!a || !b) throw ValidationError("range: expected 2^-a..2^-b, got " + s);
    int lo = *a, hi = *b;
    int step = (hi >= lo) ? 1 : -1;
    for (int e = lo;; e += step) {
      out.push_back(std::pow(2.0, e));
      if (e == hi) break;
    }
    return out;
  }
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    if (auto e = parse_pow(tok))
      out.push_back(std::pow(2.0, *e));
    else
      out.push_back(std::stod(tok));
  }
  if (out.empty()) throw ValidationError("range: no values in " + s);
  return out;
}

// ---------------------------------------------------------------------------
// CSV with embedded provenance comments.  Formatting is fixed so identical
// configurations produce byte-identical files.

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> columns)
      : columns_(std::move(columns)) {}

  void add_row(const std::vector<double>& vals) {
    if (vals.size() != columns_.size())
      throw ValidationError("csv: column count mismatch");
    rows_.push_back(vals);
  }

  void write(const std::string& path, const json& config) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("csv: cannot open " + path);
    f << "# " << kVersion << "\n";
    f << "# config " << config.dump() << "\n";
    for (size_t i = 0; i < columns_.size(); ++i)
      f << columns_[i] << (i + 1 < columns_.size() ? "," : "\n");
    for (const auto& row : rows_) {
      for (size_t i = 0; i < row.size(); ++i)
        f << fmt_g17(row[i]) << (i + 1 < row.size() ? "," : "\n");
    }
  }

 private:
  std::vector<std::string> columns_;
  std::vector<std::vector<double>> rows_;
};

inline void write_json(const std::string& path, json j) {
  j["version"] = kVersion;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("json: cannot open " + path);
  f << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Self-contained log-log SVG plot (one polyline per series).

struct SvgSeries {
  std::string label;
  std::vector<double> x, y;
};

inline void svg_loglog(const std::string& path,
                       const std::vector<SvgSeries>& series,
                       const std::string& title = "") {
  double lxmin = 1e300, lxmax = -1e300, lymin = 1e300, lymax = -1e300;
  for (const auto& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (!(s.x[i] > 0) || !(s.y[i] > 0)) continue;
      lxmin = std::min(lxmin, std::log10(s.x[i]));
      lxmax = std::max(lxmax, std::log10(s.x[i]));
      lymin = std::min(lymin, std::log10(s.y[i]));
      lymax = std::max(lymax, std::log10(s.y[i]));
    }
  if (lxmax <= lxmin) lxmax = lxmin + 1;
  if (lymax <= lymin) lymax = lymin + 1;
  const double W = 640, H = 480, M = 60;
  auto X = [&](double v) {
    return M + (std::log10(v) - lxmin) / (lxmax - lxmin) * (W - 2 * M);
  };
  auto Y = [&](double v) {
    return H - M - (std::log10(v) - lymin) / (lymax - lymin) * (H - 2 * M);
  };
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"};
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("svg: cannot open " + path);
  f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='"
    << H << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
  f << "<text x='" << W / 2 << "' y='24' text-anchor='middle' font-size='14'>"
    << title << "</text>\n";
  // axes
  f << "<line x1='" << M << "' y1='" << H - M << "' x2='" << W - M << "' y2='"
    << H - M << "' stroke='black'/>\n";
  f << "<line x1='" << M << "' y1='" << M << "' x2='" << M << "' y2='" << H - M
    << "' stroke='black'/>\n";
  int ci = 0;
  for (const auto& s : series) {
    std::ostringstream pts;
    for (size_t i = 0; i < s.x.size(); ++i)
      if (s.x[i] > 0 && s.y[i] > 0) pts << X(s.x[i]) << "," << Y(s.y[i]) << " ";
    const char* col = colors[ci % 5];
    f << "<polyline fill='none' stroke='" << col << "' stroke-width='1.5' points='"
      << pts.str() << "'/>\n";
    for (size_t i = 0; i < s.x.size(); ++i)
      if (s.x[i] > 0 && s.y[i] > 0)
        f << "<circle cx='" << X(s.x[i]) << "' cy='" << Y(s.y[i])
          << "' r='3' fill='" << col << "'/>\n";
    f << "<text x='" << W - M + 4 << "' y='" << M + 16 * ci
      << "' font-size='12' fill='" << col << "'>" << s.label << "</text>\n";
    ++ci;
  }
  f << "</svg>\n";
}

}  // namespace capres::io
