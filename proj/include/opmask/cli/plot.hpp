#pragma once

// Static SVG figures from analysis JSON. Output depends only on the input
// documents, so the same JSON always gives byte-identical files.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "opmask/core/error.hpp"
#include "opmask/synthdata/dataset.hpp"

namespace opmask::cli {

class SchemaError : public FormatError {
 public:
  using FormatError::FormatError;
};

namespace plot_detail {

using nlohmann::json;

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

inline const char* colour(const std::string& variant) {
  if (variant == "opmask") return "#d62728";
  if (variant == "baseline") return "#1f77b4";
  if (variant == "cls_only") return "#7f7f7f";
  return "#2ca02c";
}

// Field access that names the offending path on mismatch.
struct Checker {
  std::string where;

  const json& field(const json& j, const std::string& key, const std::string& path) const {
    if (!j.is_object() || !j.contains(key)) throw SchemaError(where + path + "." + key + ": missing field");
    return j.at(key);
  }
  double number(const json& j, const std::string& key, const std::string& path) const {
    const auto& v = field(j, key, path);
    if (!v.is_number()) throw SchemaError(where + path + "." + key + ": expected a number");
    return v.get<double>();
  }
  std::optional<double> number_or_null(const json& j, const std::string& key, const std::string& path) const {
    const auto& v = field(j, key, path);
    if (v.is_null()) return std::nullopt;
    if (!v.is_number()) throw SchemaError(where + path + "." + key + ": expected a number or null");
    return v.get<double>();
  }
  std::string string(const json& j, const std::string& key, const std::string& path) const {
    const auto& v = field(j, key, path);
    if (!v.is_string()) throw SchemaError(where + path + "." + key + ": expected a string");
    return v.get<std::string>();
  }
  const json& array(const json& j, const std::string& key, const std::string& path) const {
    const auto& v = field(j, key, path);
    if (!v.is_array()) throw SchemaError(where + path + "." + key + ": expected a list");
    return v;
  }
  const json& object(const json& j, const std::string& key, const std::string& path) const {
    const auto& v = field(j, key, path);
    if (!v.is_object()) throw SchemaError(where + path + "." + key + ": expected a mapping");
    return v;
  }
};

// A fixed 480x360 canvas with a plot area and linear axes.
class Canvas {
 public:
  static constexpr double W = 480, H = 360, L = 60, R = 20, T = 40, B = 50;

  Canvas(const std::string& title, double x0, double x1, double y0, double y1) : x0_(x0), x1_(x1), y0_(y0), y1_(y1) {
    if (!(x1_ > x0_)) x1_ = x0_ + 1;
    if (!(y1_ > y0_)) y1_ = y0_ + 1;
    os_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 "
        << W << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os_ << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    os_ << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
        << "</text>\n";
  }

  double px(double x) const { return L + (x - x0_) / (x1_ - x0_) * (W - L - R); }
  double py(double y) const { return H - B - (y - y0_) / (y1_ - y0_) * (H - T - B); }

  void axes(const std::string& xlabel, const std::string& ylabel, bool x_ticks = true) {
    os_ << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
        << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
      const double yv = y0_ + (y1_ - y0_) * i / 4.0;
      os_ << "<text x=\"" << num(L - 6) << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">" << label(yv)
          << "</text>\n";
      if (x_ticks) {
        const double xv = x0_ + (x1_ - x0_) * i / 4.0;
        os_ << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(H - B + 16) << "\" text-anchor=\"middle\">"
            << label(xv) << "</text>\n";
      }
    }
    os_ << "<text x=\"" << num(L + (W - L - R) / 2) << "\" y=\"" << num(H - 10) << "\" text-anchor=\"middle\">"
        << escape(xlabel) << "</text>\n";
    os_ << "<text x=\"14\" y=\"" << num(T + (H - T - B) / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
        << num(T + (H - T - B) / 2) << ")\">" << escape(ylabel) << "</text>\n";
  }

  std::ostringstream& raw() { return os_; }

  std::string finish() {
    os_ << "</svg>\n";
    return os_.str();
  }

 private:
  double x0_, x1_, y0_, y1_;
  std::ostringstream os_;
};

inline std::pair<double, double> padded(double lo, double hi) {
  if (!(hi > lo)) return {lo - 0.5, hi + 0.5};
  const double pad = 0.08 * (hi - lo);
  return {lo - pad, hi + pad};
}

inline std::string overlap_figure(const json& j, const Checker& ck) {
  const std::string variant = ck.string(j, "variant", "");
  const auto& pts = ck.array(j, "points", "");
  std::vector<std::tuple<int, double, double>> xs;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const std::string p = ".points[" + std::to_string(i) + "]";
    const auto& id = ck.field(pts[i], "class_id", p);
    if (!id.is_number_integer()) throw SchemaError(ck.where + p + ".class_id: expected an integer");
    xs.emplace_back(id.get<int>(), ck.number(pts[i], "overlap", p), ck.number(pts[i], "ap", p));
  }
  const auto& reg = ck.field(j, "regression", "");
  std::optional<std::pair<double, double>> line;
  if (!reg.is_null()) line = std::make_pair(ck.number(reg, "slope", ".regression"), ck.number(reg, "intercept", ".regression"));

  double xlo = 1e300, xhi = -1e300, ylo = 0, yhi = 0;
  for (const auto& [c, x, y] : xs) {
    xlo = std::min(xlo, x);
    xhi = std::max(xhi, x);
    yhi = std::max(yhi, y);
  }
  if (xs.empty()) xlo = 0, xhi = 1;
  auto [a0, a1] = padded(xlo, xhi);
  if (line)
    for (double x : {a0, a1}) {
      yhi = std::max(yhi, line->second + line->first * x);
      ylo = std::min(ylo, line->second + line->first * x);
    }
  if (yhi <= ylo) yhi = ylo + 1;
  Canvas cv("Overlap vs mask AP (" + variant + ")", a0, a1, ylo, yhi * 1.05);
  cv.axes("mean per-class overlap (box IoU)", "mask AP");
  auto& os = cv.raw();
  for (const auto& [c, x, y] : xs) {
    os << "<circle cx=\"" << num(cv.px(x)) << "\" cy=\"" << num(cv.py(y)) << "\" r=\"4\" fill=\"" << colour(variant)
       << "\"/>\n";
    os << "<text x=\"" << num(cv.px(x) + 6) << "\" y=\"" << num(cv.py(y) - 6) << "\">c" << c << "</text>\n";
  }
  if (line) {
    os << "<line class=\"fit\" data-slope=\"" << nlohmann::json(line->first).dump() << "\" data-intercept=\""
       << nlohmann::json(line->second).dump() << "\" x1=\"" << num(cv.px(a0)) << "\" y1=\""
       << num(cv.py(line->second + line->first * a0)) << "\" x2=\"" << num(cv.px(a1)) << "\" y2=\""
       << num(cv.py(line->second + line->first * a1)) << "\" stroke=\"black\" stroke-dasharray=\"5,3\"/>\n";
    os << "<text x=\"" << num(Canvas::W - Canvas::R - 4) << "\" y=\"" << num(Canvas::T + 14)
       << "\" text-anchor=\"end\">slope " << label(line->first) << "</text>\n";
  }
  return cv.finish();
}

inline std::string sweep_figure(const json& j, const Checker& ck) {
  const auto& vars = ck.object(j, "variants", "");
  struct Series {
    std::string name;
    std::vector<std::pair<double, double>> weak, all;
  };
  std::vector<Series> series;
  double xlo = 1e300, xhi = -1e300, yhi = 0;
  for (auto it = vars.begin(); it != vars.end(); ++it) {
    const std::string p = ".variants." + it.key();
    if (!it.value().is_array()) throw SchemaError(ck.where + p + ": expected a list");
    Series s{it.key(), {}, {}};
    for (std::size_t i = 0; i < it.value().size(); ++i) {
      const auto& e = it.value()[i];
      const std::string q = p + "[" + std::to_string(i) + "]";
      const double k = ck.number(e, "count", q);
      xlo = std::min(xlo, k);
      xhi = std::max(xhi, k);
      if (auto w = ck.number_or_null(e, "weak_ap_mean", q)) {
        s.weak.emplace_back(k, *w);
        yhi = std::max(yhi, *w);
      }
      if (auto a = ck.number_or_null(e, "all_ap_mean", q)) {
        s.all.emplace_back(k, *a);
        yhi = std::max(yhi, *a);
      }
    }
    series.push_back(std::move(s));
  }
  if (xlo > xhi) xlo = 0, xhi = 1;
  auto [a0, a1] = padded(xlo, xhi);
  Canvas cv("Mask AP vs number of strong classes", a0, a1, 0, std::max(yhi, 1e-3) * 1.1);
  cv.axes("strong classes", "mask AP (solid: weak classes, dashed: all)");
  auto& os = cv.raw();
  int row = 0;
  for (const auto& s : series) {
    for (const auto* pts : {&s.weak, &s.all}) {
      if (pts->empty()) continue;
      os << "<polyline fill=\"none\" stroke=\"" << colour(s.name) << "\"" << (pts == &s.all ? " stroke-dasharray=\"5,3\"" : "")
         << " points=\"";
      for (std::size_t i = 0; i < pts->size(); ++i)
        os << (i ? " " : "") << num(cv.px((*pts)[i].first)) << ',' << num(cv.py((*pts)[i].second));
      os << "\"/>\n";
      for (const auto& [x, y] : *pts)
        os << "<circle cx=\"" << num(cv.px(x)) << "\" cy=\"" << num(cv.py(y)) << "\" r=\"3\" fill=\"" << colour(s.name)
           << "\"/>\n";
    }
    os << "<text x=\"" << num(Canvas::L + 8) << "\" y=\"" << num(Canvas::T + 14 + 14 * row++) << "\" fill=\""
       << colour(s.name) << "\">" << escape(s.name) << "</text>\n";
  }
  return cv.finish();
}

// Grouped bars: one group per entry, one bar per named value.
inline std::string bar_figure(const std::string& title, const std::string& ylabel,
                              const std::vector<std::pair<std::string, std::vector<std::optional<double>>>>& groups,
                              const std::vector<std::string>& bar_names) {
  double yhi = 0;
  for (const auto& [g, vals] : groups)
    for (const auto& v : vals)
      if (v) yhi = std::max(yhi, *v);
  const double n = static_cast<double>(groups.size());
  Canvas cv(title, 0, std::max(n, 1.0), 0, std::max(yhi, 1e-3) * 1.15);
  cv.axes("", ylabel, false);
  auto& os = cv.raw();
  static const char* shades[] = {"#444444", "#aaaaaa", "#d62728", "#1f77b4"};
  const double nb = static_cast<double>(bar_names.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double left = static_cast<double>(g) + 0.15, width = 0.7 / nb;
    for (std::size_t b = 0; b < groups[g].second.size(); ++b) {
      const auto& v = groups[g].second[b];
      if (!v) continue;
      const double x = left + width * static_cast<double>(b);
      os << "<rect x=\"" << num(cv.px(x)) << "\" y=\"" << num(cv.py(*v)) << "\" width=\"" << num(cv.px(x + width) - cv.px(x))
         << "\" height=\"" << num(cv.py(0) - cv.py(*v)) << "\" fill=\"" << shades[b % 4] << "\"/>\n";
      os << "<text x=\"" << num(cv.px(x + width / 2)) << "\" y=\"" << num(cv.py(*v) - 3) << "\" text-anchor=\"middle\">"
         << label(*v) << "</text>\n";
    }
    os << "<text x=\"" << num(cv.px(static_cast<double>(g) + 0.5)) << "\" y=\"" << num(Canvas::H - Canvas::B + 16)
       << "\" text-anchor=\"middle\">" << escape(groups[g].first) << "</text>\n";
  }
  for (std::size_t b = 0; b < bar_names.size(); ++b)
    os << "<rect x=\"" << num(Canvas::L + 8) << "\" y=\"" << num(Canvas::T + 6 + 14 * b) << "\" width=\"10\" height=\"10\" fill=\""
       << shades[b % 4] << "\"/><text x=\"" << num(Canvas::L + 22) << "\" y=\"" << num(Canvas::T + 15 + 14 * b) << "\">"
       << escape(bar_names[b]) << "</text>\n";
  return cv.finish();
}

inline std::optional<double> report_ap(const json& j, const std::string& key, const std::string& metric,
                                       const std::string& path, const Checker& ck) {
  const auto& r = ck.field(j, key, path);
  if (r.is_null()) return std::nullopt;
  return ck.number_or_null(r, metric, path + "." + key);
}

}  // namespace plot_detail

struct PlotInput {
  std::string source;  // used in error messages
  nlohmann::json doc;
};

// Renders every figure the inputs support into `out_dir`; returns the file
// names written, in order. An empty input list writes nothing.
inline std::vector<std::string> emit_plots(const std::vector<PlotInput>& inputs, const fs::path& out_dir) {
  using namespace plot_detail;
  std::vector<std::pair<std::string, std::string>> files;  // name, content
  std::map<std::string, int> used;
  auto add = [&](std::string stem, std::string svg) {
    const int k = ++used[stem];
    if (k > 1) stem += "_" + std::to_string(k);
    files.emplace_back(stem + ".svg", std::move(svg));
  };
  std::vector<std::pair<std::string, std::vector<std::optional<double>>>> amb_groups, prior_groups;

  for (const auto& in : inputs) {
    std::vector<json> docs;
    if (in.doc.is_array())
      docs.assign(in.doc.begin(), in.doc.end());
    else
      docs.push_back(in.doc);
    for (std::size_t i = 0; i < docs.size(); ++i) {
      Checker ck{in.source + (in.doc.is_array() ? "[" + std::to_string(i) + "]" : "")};
      const auto& d = docs[i];
      if (!d.is_object()) throw SchemaError(ck.where + ": expected a mapping");
      const std::string kind = ck.string(d, "kind", "");
      if (kind == "overlap_regression") {
        add("overlap_" + ck.string(d, "variant", ""), overlap_figure(d, ck));
      } else if (kind == "sweep") {
        add("ap_vs_split", sweep_figure(d, ck));
      } else if (kind == "ambiguity") {
        const std::string v = ck.string(d, "variant", "");
        amb_groups.push_back({v, {report_ap(d, "ambiguous", "ap", "", ck), report_ap(d, "non_ambiguous", "ap", "", ck)}});
      } else if (kind == "prior_comparison") {
        const auto& vars = ck.object(d, "variants", "");
        for (auto it = vars.begin(); it != vars.end(); ++it)
          prior_groups.push_back({it.key(), {report_ap(it.value(), "prior_all", "ap50", ".variants." + it.key(), ck)}});
      } else if (kind == "eval") {
        continue;  // nothing to draw
      } else {
        throw SchemaError(ck.where + ".kind: unknown analysis kind '" + kind + "'");
      }
    }
  }
  if (!amb_groups.empty())
    add("ambiguity", bar_figure("Mask AP on ambiguous vs non-ambiguous instances", "mask AP", amb_groups,
                                {"ambiguous", "non-ambiguous"}));
  if (!prior_groups.empty())
    add("priors", bar_figure("Prior used directly as mask", "AP50", prior_groups, {"prior AP50"}));

  std::vector<std::string> names;
  if (files.empty()) return names;
  fs::create_directories(out_dir);
  for (const auto& [name, svg] : files) {
    synth::write_text_atomically(out_dir / name, svg);
    names.push_back(name);
  }
  return names;
}

}  // namespace opmask::cli
