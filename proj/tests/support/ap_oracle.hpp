#pragma once

// Brute-force reference implementations for the evaluation code, written
// from the definitions without sharing any helper with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <vector>

#include "opmask/core/rng.hpp"
#include "opmask/evalkit/detection.hpp"

namespace opmask::testing {

inline double oracle_mask_iou(const BinaryMask& a, const BinaryMask& b) {
  long inter = 0, uni = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      inter += a.at(y, x) && b.at(y, x);
      uni += a.at(y, x) || b.at(y, x);
    }
  return uni == 0 ? 0.0 : double(inter) / double(uni);
}

inline double oracle_box_iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double u = (a.x1 - a.x0) * (a.y1 - a.y0) + (b.x1 - b.x0) * (b.y1 - b.y0) - ix * iy;
  return u > 0 ? ix * iy / u : 0.0;
}

// AP of one class at one threshold. Detections are visited by descending
// score (ties by input position); each one scans every ground truth of the
// dataset for the unmatched same-image same-class instance of highest IoU.
// Precision at recall level r is the maximum precision over all ranks whose
// recall reaches r.
inline double oracle_class_ap(const std::vector<eval::Detection>& dets, const std::vector<eval::GtInstance>& gts,
                              int cls, double thr, const std::set<std::int64_t>* subset) {
  std::set<std::int64_t> images;
  std::vector<std::size_t> g_idx;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (subset && !subset->count(gts[g].id)) continue;
    images.insert(gts[g].image_id);
    if (gts[g].class_id == cls) g_idx.push_back(g);
  }
  const std::size_t npos = g_idx.size();
  std::vector<std::size_t> order;
  for (std::size_t d = 0; d < dets.size(); ++d)
    if (dets[d].class_id == cls && (!subset || images.count(dets[d].image_id))) order.push_back(d);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return a < b;
  });
  std::vector<bool> taken(gts.size(), false);
  std::vector<double> prec, rec;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& d = dets[order[k]];
    std::optional<std::size_t> best;
    double best_iou = -1;
    for (std::size_t g : g_idx) {
      if (taken[g] || gts[g].image_id != d.image_id) continue;
      const double iou = oracle_mask_iou(d.mask, gts[g].mask);
      if (iou >= thr && iou > best_iou) {
        best = g;
        best_iou = iou;
      }
    }
    if (best) {
      taken[*best] = true;
      ++tp;
    }
    prec.push_back(double(tp) / double(k + 1));
    rec.push_back(double(tp) / double(npos));
  }
  double sum = 0;
  for (int i = 0; i <= 100; ++i) {
    const double r = i / 100.0;
    double p = 0;
    for (std::size_t k = 0; k < prec.size(); ++k)
      if (rec[k] >= r) p = std::max(p, prec[k]);
    sum += p;
  }
  return sum / 101.0;
}

struct OracleReport {
  std::optional<double> ap, ap50;
  std::map<int, double> per_class_ap;
};

inline OracleReport oracle_evaluate(const std::vector<eval::Detection>& dets, const std::vector<eval::GtInstance>& gts,
                                    const std::set<int>& classes, const std::set<std::int64_t>* subset = nullptr) {
  OracleReport rep;
  double s = 0, s50 = 0;
  int n = 0;
  for (int c : classes) {
    bool has_gt = false;
    for (const auto& g : gts) has_gt = has_gt || (g.class_id == c && (!subset || subset->count(g.id)));
    if (!has_gt) continue;
    double acc = 0;
    double ap50 = 0;
    for (int t = 0; t < 10; ++t) {
      const double a = oracle_class_ap(dets, gts, c, (50 + 5 * t) / 100.0, subset);
      if (t == 0) ap50 = a;
      acc += a;
    }
    rep.per_class_ap[c] = acc / 10;
    s += acc / 10;
    s50 += ap50;
    ++n;
  }
  if (n > 0) {
    rep.ap = s / n;
    rep.ap50 = s50 / n;
  }
  return rep;
}

struct RandomCase {
  std::vector<eval::GtInstance> gts;
  std::vector<eval::Detection> dets;
};

// Up to 5 images of 10x10, up to 6 instances, up to 8 detections over 3
// classes. Detections are noisy copies of instances or random blobs, scores
// come from a small set so ties occur.
inline RandomCase random_case(Rng& rng) {
  constexpr int H = 10, W = 10;
  RandomCase c;
  const int n_img = rng.uniform_int(1, 5), n_gt = rng.uniform_int(1, 6), n_det = rng.uniform_int(0, 8);
  auto blob = [&](int y0, int x0, int h, int w) {
    BinaryMask m(H, W);
    for (int y = y0; y < std::min(H, y0 + h); ++y)
      for (int x = x0; x < std::min(W, x0 + w); ++x) m.at(y, x) = 1;
    return m;
  };
  for (int i = 0; i < n_gt; ++i) {
    eval::GtInstance g;
    g.id = i + 1;
    g.image_id = rng.uniform_int(0, n_img - 1);
    g.class_id = rng.uniform_int(0, 2);
    const int y0 = rng.uniform_int(0, 6), x0 = rng.uniform_int(0, 6);
    g.mask = blob(y0, x0, rng.uniform_int(2, 5), rng.uniform_int(2, 5));
    g.box = Box{double(x0), double(y0), double(x0 + 3), double(y0 + 3)};
    c.gts.push_back(g);
  }
  for (int i = 0; i < n_det; ++i) {
    eval::Detection d;
    d.score = rng.uniform_int(1, 4) / 4.0;
    if (rng.bernoulli(0.7)) {
      const auto& g = c.gts[rng.below(c.gts.size())];
      d.image_id = g.image_id;
      d.class_id = rng.bernoulli(0.85) ? g.class_id : rng.uniform_int(0, 2);
      d.mask = g.mask;
      for (auto& b : d.mask.bits)
        if (rng.bernoulli(0.12)) b = !b;
    } else {
      d.image_id = rng.uniform_int(0, n_img - 1);
      d.class_id = rng.uniform_int(0, 2);
      d.mask = blob(rng.uniform_int(0, 6), rng.uniform_int(0, 6), rng.uniform_int(2, 5), rng.uniform_int(2, 5));
    }
    c.dets.push_back(d);
  }
  return c;
}

}  // namespace opmask::testing
