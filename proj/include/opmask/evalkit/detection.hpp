#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "opmask/core/error.hpp"
#include "opmask/core/geometry.hpp"
#include "opmask/synthdata/dataset.hpp"
#include "opmask/synthdata/rle.hpp"

namespace opmask::eval {

struct Detection {
  std::int64_t image_id = 0;
  int class_id = 0;
  double score = 0;
  Box box;
  BinaryMask mask;  // image resolution
};

struct GtInstance {
  std::int64_t id = 0;  // annotation id
  std::int64_t image_id = 0;
  int class_id = 0;
  Box box;
  BinaryMask mask;
};

// Ground truth from a manifest, in annotation order.
inline std::vector<GtInstance> gts_from_manifest(const synth::DatasetManifest& m) {
  std::vector<GtInstance> out;
  for (const auto& a : m.annotations)
    out.push_back({a.id, a.image_id, a.category_id, a.box, synth::decode_rle(a.counts, a.rle_height, a.rle_width)});
  return out;
}

// Rasterizes an S x S probability grid spanning `box` into an H x W mask.
// Pixels whose centre lies inside the box read the grid bilinearly (edge
// clamped) and are set where the value is >= threshold.
template <typename T>
inline BinaryMask paste_mask(const T* grid, int S, const Box& box, int H, int W, double threshold = 0.5) {
  BinaryMask m(H, W);
  const double bw = box.width(), bh = box.height();
  if (!(bw > 0 && bh > 0)) return m;
  const int y_lo = std::max(0, static_cast<int>(std::ceil(box.y0 - 0.5)));
  const int y_hi = std::min(H - 1, static_cast<int>(std::ceil(box.y1 - 0.5)) - 1);
  const int x_lo = std::max(0, static_cast<int>(std::ceil(box.x0 - 0.5)));
  const int x_hi = std::min(W - 1, static_cast<int>(std::ceil(box.x1 - 0.5)) - 1);
  auto cell = [&](int i, int j) { return double(grid[static_cast<std::size_t>(i) * S + j]); };
  for (int y = y_lo; y <= y_hi; ++y) {
    const double gy = std::clamp((y + 0.5 - box.y0) / bh * S - 0.5, 0.0, double(S - 1));
    const int i0 = std::min(static_cast<int>(gy), S - 1), i1 = std::min(i0 + 1, S - 1);
    const double ly = gy - i0;
    for (int x = x_lo; x <= x_hi; ++x) {
      const double gx = std::clamp((x + 0.5 - box.x0) / bw * S - 0.5, 0.0, double(S - 1));
      const int j0 = std::min(static_cast<int>(gx), S - 1), j1 = std::min(j0 + 1, S - 1);
      const double lx = gx - j0;
      const double v = (1 - ly) * ((1 - lx) * cell(i0, j0) + lx * cell(i0, j1)) +
                       ly * ((1 - lx) * cell(i1, j0) + lx * cell(i1, j1));
      if (v >= threshold) m.at(y, x) = 1;
    }
  }
  return m;
}

inline nlohmann::json detection_to_json(const Detection& d) {
  return nlohmann::json{{"image_id", d.image_id},
                        {"class_id", d.class_id},
                        {"score", d.score},
                        {"bbox", {d.box.x0, d.box.y0, d.box.width(), d.box.height()}},
                        {"rle", {{"size", {d.mask.height, d.mask.width}}, {"counts", synth::encode_rle(d.mask)}}}};
}

inline Detection detection_from_json(const nlohmann::json& j) {
  try {
    Detection d;
    d.image_id = j.at("image_id").get<std::int64_t>();
    d.class_id = j.at("class_id").get<int>();
    d.score = j.at("score").get<double>();
    const auto bb = j.at("bbox").get<std::vector<double>>();
    if (bb.size() != 4) throw FormatError("detection bbox must have 4 numbers");
    d.box = {bb[0], bb[1], bb[0] + bb[2], bb[1] + bb[3]};
    const auto size = j.at("rle").at("size").get<std::vector<int>>();
    if (size.size() != 2) throw FormatError("detection rle size must be [H,W]");
    d.mask = synth::decode_rle(j.at("rle").at("counts").get<std::vector<std::uint32_t>>(), size[0], size[1]);
    if (!std::isfinite(d.score)) throw FormatError("detection score is not finite");
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed detection: ") + e.what());
  }
}

inline std::string detections_to_jsonl(const std::vector<Detection>& dets) {
  std::string out;
  for (const auto& d : dets) out += detection_to_json(d).dump() + "\n";
  return out;
}

inline std::vector<Detection> read_detections(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open detections " + path.string());
  std::vector<Detection> out;
  std::string line;
  int n = 0;
  while (std::getline(f, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(detection_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace opmask::eval
