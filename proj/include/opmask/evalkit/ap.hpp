#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "opmask/core/error.hpp"
#include "opmask/evalkit/detection.hpp"
#include "opmask/evalkit/iou.hpp"

namespace opmask::eval {

inline std::vector<double> coco_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back((50 + 5 * i) / 100.0);
  return t;
}

struct EvalReport {
  std::map<int, double> per_class_ap;  // averaged over thresholds
  std::map<int, double> per_class_ap50;
  std::optional<double> ap, ap50, ap75;  // absent when no class in the subset has GT
  std::size_t num_gt = 0;
  std::size_t num_dets = 0;
};

inline nlohmann::json to_json_value(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json pc = nlohmann::json::object(), pc50 = nlohmann::json::object();
  for (const auto& [k, v] : r.per_class_ap) pc[std::to_string(k)] = v;
  for (const auto& [k, v] : r.per_class_ap50) pc50[std::to_string(k)] = v;
  return nlohmann::json{{"ap", to_json_value(r.ap)},   {"ap50", to_json_value(r.ap50)},
                        {"ap75", to_json_value(r.ap75)}, {"per_class_ap", pc},
                        {"per_class_ap50", pc50},        {"num_gt", r.num_gt},
                        {"num_dets", r.num_dets}};
}

// Precision interpolated at 101 recall points, from score-ordered TP flags.
inline double interpolated_ap(const std::vector<bool>& tp, std::size_t npos) {
  if (npos == 0) return 0.0;
  const std::size_t n = tp.size();
  std::vector<double> recall(n), precision(n);
  std::size_t tps = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tps += tp[i];
    recall[i] = static_cast<double>(tps) / static_cast<double>(npos);
    precision[i] = static_cast<double>(tps) / static_cast<double>(i + 1);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / 101.0;
}

// COCO-style mask AP. `class_subset` empty means every known class. With
// `gt_subset`, only those annotation ids count as ground truth and only
// detections on images holding at least one of them are scored; unmatched
// ones among those are false positives.
inline EvalReport evaluate_mask_ap(const std::vector<Detection>& dets, const std::vector<GtInstance>& gts,
                                   const std::set<int>& class_subset, const std::set<int>& known_classes,
                                   const std::vector<double>& thresholds = coco_thresholds(),
                                   const std::set<std::int64_t>* gt_subset = nullptr) {
  for (int c : class_subset)
    if (!known_classes.count(c)) throw ConfigError("evaluate_mask_ap: unknown class id " + std::to_string(c));
  if (thresholds.empty()) throw ConfigError("evaluate_mask_ap: no IoU thresholds");
  const std::set<int>& classes = class_subset.empty() ? known_classes : class_subset;

  std::set<std::int64_t> eligible_images;
  std::vector<const GtInstance*> kept;
  for (const auto& g : gts)
    if (!gt_subset || gt_subset->count(g.id)) {
      kept.push_back(&g);
      eligible_images.insert(g.image_id);
    }

  int i50 = -1, i75 = -1;
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    if (std::abs(thresholds[t] - 0.5) < 1e-9) i50 = static_cast<int>(t);
    if (std::abs(thresholds[t] - 0.75) < 1e-9) i75 = static_cast<int>(t);
  }

  EvalReport rep;
  double sum_ap = 0, sum50 = 0, sum75 = 0;
  int n_cls = 0;
  for (int c : classes) {
    std::map<std::int64_t, std::vector<const GtInstance*>> by_image;
    std::size_t npos = 0;
    for (const auto* g : kept)
      if (g->class_id == c) {
        by_image[g->image_id].push_back(g);
        ++npos;
      }
    std::vector<const Detection*> cd;
    for (const auto& d : dets)
      if (d.class_id == c && (!gt_subset || eligible_images.count(d.image_id))) cd.push_back(&d);
    rep.num_gt += npos;
    rep.num_dets += cd.size();
    if (npos == 0) continue;
    std::stable_sort(cd.begin(), cd.end(), [](const Detection* a, const Detection* b) { return a->score > b->score; });

    std::vector<std::vector<double>> ious(cd.size());
    for (std::size_t i = 0; i < cd.size(); ++i) {
      const auto it = by_image.find(cd[i]->image_id);
      if (it == by_image.end()) continue;
      for (const auto* g : it->second) ious[i].push_back(mask_iou(cd[i]->mask, g->mask));
    }

    std::vector<double> ap_t(thresholds.size());
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      std::map<std::int64_t, std::vector<bool>> used;
      for (const auto& [img, v] : by_image) used[img].assign(v.size(), false);
      std::vector<bool> tp(cd.size(), false);
      for (std::size_t i = 0; i < cd.size(); ++i) {
        if (ious[i].empty()) continue;
        auto& u = used[cd[i]->image_id];
        int best = -1;
        double best_iou = thresholds[t];
        for (std::size_t g = 0; g < ious[i].size(); ++g)
          if (!u[g] && ious[i][g] >= best_iou && (best < 0 || ious[i][g] > best_iou)) {
            best = static_cast<int>(g);
            best_iou = ious[i][g];
          }
        if (best >= 0) {
          u[static_cast<std::size_t>(best)] = true;
          tp[i] = true;
        }
      }
      ap_t[t] = interpolated_ap(tp, npos);
    }
    double s = 0;
    for (double a : ap_t) s += a;
    const double ap = s / static_cast<double>(thresholds.size());
    rep.per_class_ap[c] = ap;
    sum_ap += ap;
    if (i50 >= 0) {
      rep.per_class_ap50[c] = ap_t[static_cast<std::size_t>(i50)];
      sum50 += ap_t[static_cast<std::size_t>(i50)];
    }
    if (i75 >= 0) sum75 += ap_t[static_cast<std::size_t>(i75)];
    ++n_cls;
  }
  if (n_cls > 0) {
    rep.ap = sum_ap / n_cls;
    if (i50 >= 0) rep.ap50 = sum50 / n_cls;
    if (i75 >= 0) rep.ap75 = sum75 / n_cls;
  }
  return rep;
}

}  // namespace opmask::eval
