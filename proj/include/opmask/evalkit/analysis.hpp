#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "opmask/core/error.hpp"
#include "opmask/evalkit/ap.hpp"
#include "opmask/evalkit/detection.hpp"
#include "opmask/evalkit/iou.hpp"

namespace opmask::eval {

inline constexpr double kAmbiguityThreshold = 0.5;

struct AmbiguitySplit {
  std::set<std::int64_t> ambiguous;
  std::set<std::int64_t> non_ambiguous;
  double threshold = kAmbiguityThreshold;
};

// An instance is ambiguous when its box overlaps another instance of the same
// image with IoU >= threshold.
inline AmbiguitySplit ambiguity_partition(const std::vector<GtInstance>& gts,
                                          double threshold = kAmbiguityThreshold) {
  std::map<std::int64_t, std::vector<const GtInstance*>> by_image;
  for (const auto& g : gts) by_image[g.image_id].push_back(&g);
  AmbiguitySplit s;
  s.threshold = threshold;
  for (const auto& [img, v] : by_image)
    for (std::size_t i = 0; i < v.size(); ++i) {
      bool amb = false;
      for (std::size_t j = 0; j < v.size() && !amb; ++j)
        amb = j != i && box_iou(v[i]->box, v[j]->box) >= threshold;
      (amb ? s.ambiguous : s.non_ambiguous).insert(v[i]->id);
    }
  return s;
}

struct AmbiguityReport {
  AmbiguitySplit split;
  std::optional<EvalReport> ambiguous;
  std::optional<EvalReport> non_ambiguous;
};

inline AmbiguityReport evaluate_by_ambiguity(const std::vector<Detection>& dets, const std::vector<GtInstance>& gts,
                                             const std::set<int>& class_subset, const std::set<int>& known_classes) {
  AmbiguityReport r;
  r.split = ambiguity_partition(gts);
  auto run = [&](const std::set<std::int64_t>& ids) -> std::optional<EvalReport> {
    if (ids.empty()) return std::nullopt;
    auto rep = evaluate_mask_ap(dets, gts, class_subset, known_classes, coco_thresholds(), &ids);
    if (!rep.ap) return std::nullopt;
    return rep;
  };
  r.ambiguous = run(r.split.ambiguous);
  r.non_ambiguous = run(r.split.non_ambiguous);
  return r;
}

enum class OverlapAggregation { max_iou, mean_iou };

inline const char* aggregation_name(OverlapAggregation a) {
  return a == OverlapAggregation::max_iou ? "max" : "pair_mean";
}

// Per instance: max (or mean) box IoU against the other instances of its
// image, 0 when it is alone. Per class: mean over its instances.
inline std::map<int, double> per_class_overlap(const std::vector<GtInstance>& gts,
                                               OverlapAggregation agg = OverlapAggregation::max_iou) {
  std::map<std::int64_t, std::vector<const GtInstance*>> by_image;
  for (const auto& g : gts) by_image[g.image_id].push_back(&g);
  std::map<int, std::pair<double, int>> acc;
  for (const auto& [img, v] : by_image)
    for (std::size_t i = 0; i < v.size(); ++i) {
      double m = 0, s = 0;
      for (std::size_t j = 0; j < v.size(); ++j) {
        if (j == i) continue;
        const double iou = box_iou(v[i]->box, v[j]->box);
        m = std::max(m, iou);
        s += iou;
      }
      const double o = agg == OverlapAggregation::max_iou ? m : (v.size() > 1 ? s / double(v.size() - 1) : 0.0);
      auto& a = acc[v[i]->class_id];
      a.first += o;
      a.second += 1;
    }
  std::map<int, double> out;
  for (const auto& [c, a] : acc) out[c] = a.first / a.second;
  return out;
}

// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
inline double incomplete_beta(double a, double b, double x) {
  if (x <= 0) return 0.0;
  if (x >= 1) return 1.0;
  auto cf = [](double a, double b, double x) {
    constexpr double tiny = 1e-300, eps = 1e-16;
    double c = 1, d = 1 - (a + b) * x / (a + 1);
    if (std::abs(d) < tiny) d = tiny;
    d = 1 / d;
    double h = d;
    for (int m = 1; m <= 1000; ++m) {
      const double m2 = 2.0 * m;
      double aa = m * (b - m) * x / ((a + m2 - 1) * (a + m2));
      d = 1 + aa * d;
      if (std::abs(d) < tiny) d = tiny;
      c = 1 + aa / c;
      if (std::abs(c) < tiny) c = tiny;
      d = 1 / d;
      h *= d * c;
      aa = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1));
      d = 1 + aa * d;
      if (std::abs(d) < tiny) d = tiny;
      c = 1 + aa / c;
      if (std::abs(c) < tiny) c = tiny;
      d = 1 / d;
      const double del = d * c;
      h *= del;
      if (std::abs(del - 1) < eps) break;
    }
    return h;
  };
  const double lbeta = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
  const double front = std::exp(lbeta + a * std::log(x) + b * std::log1p(-x));
  if (x < (a + 1) / (a + b + 2)) return front * cf(a, b, x) / a;
  return 1 - front * cf(b, a, 1 - x) / b;
}

// Two-sided p-value of Student's t with `dof` degrees of freedom.
inline double t_two_sided_p(double t, double dof) {
  if (!std::isfinite(t)) return 0.0;
  return incomplete_beta(dof / 2, 0.5, dof / (dof + t * t));
}

struct RegressionResult {
  double slope = 0;
  double intercept = 0;
  double r = 0;
  double p_value = 1;
  std::size_t n = 0;
};

inline nlohmann::json regression_to_json(const RegressionResult& r) {
  return nlohmann::json{{"slope", r.slope}, {"intercept", r.intercept}, {"r", r.r}, {"p_value", r.p_value}, {"n", r.n}};
}

inline RegressionResult ols_regression(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ShapeError("ols_regression: x and y differ in length");
  const std::size_t n = x.size();
  if (n < 3) throw ConfigError("ols_regression: need at least 3 points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= double(n);
  my /= double(n);
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0) throw NumericError("ols_regression: x has zero variance");
  RegressionResult res;
  res.n = n;
  if (syy == 0) {
    res.intercept = my;
    return res;
  }
  res.slope = sxy / sxx;
  res.intercept = my - res.slope * mx;
  res.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double dof = double(n - 2);
  const double one_minus = 1 - res.r * res.r;
  res.p_value = one_minus <= 0 ? 0.0 : t_two_sided_p(res.r * std::sqrt(dof / one_minus), dof);
  return res;
}

}  // namespace opmask::eval
