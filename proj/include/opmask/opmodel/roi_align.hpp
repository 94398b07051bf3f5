#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "opmask/core/error.hpp"
#include "opmask/core/geometry.hpp"
#include "opmask/core/tensor.hpp"

namespace opmask::nn {

// Bilinear read of a single H x W plane at continuous index coordinates
// (pixel centres at integers). Points more than one cell outside read 0;
// points in the outer half-cell are clamped to the border, as in RoIAlign.
template <typename T>
inline T bilinear_interpolate(const T* plane, int H, int W, double y, double x) {
  if (y < -1.0 || y > H || x < -1.0 || x > W) return T{0};
  y = std::max(y, 0.0);
  x = std::max(x, 0.0);
  int y0 = static_cast<int>(y), x0 = static_cast<int>(x), y1, x1;
  if (y0 >= H - 1) {
    y0 = y1 = H - 1;
    y = y0;
  } else {
    y1 = y0 + 1;
  }
  if (x0 >= W - 1) {
    x0 = x1 = W - 1;
    x = x0;
  } else {
    x1 = x0 + 1;
  }
  const T ly = static_cast<T>(y - y0), lx = static_cast<T>(x - x0);
  // Lerp form: reproduces a constant plane exactly.
  const T top = plane[y0 * W + x0] + lx * (plane[y0 * W + x1] - plane[y0 * W + x0]);
  const T bot = plane[y1 * W + x0] + lx * (plane[y1 * W + x1] - plane[y1 * W + x0]);
  return top + ly * (bot - top);
}

// Adjoint of bilinear_interpolate: scatters `g` into the four taps.
template <typename T>
inline void bilinear_interpolate_backward(T* grad_plane, int H, int W, double y, double x, T g) {
  if (y < -1.0 || y > H || x < -1.0 || x > W) return;
  y = std::max(y, 0.0);
  x = std::max(x, 0.0);
  int y0 = static_cast<int>(y), x0 = static_cast<int>(x), y1, x1;
  if (y0 >= H - 1) {
    y0 = y1 = H - 1;
    y = y0;
  } else {
    y1 = y0 + 1;
  }
  if (x0 >= W - 1) {
    x0 = x1 = W - 1;
    x = x0;
  } else {
    x1 = x0 + 1;
  }
  const T ly = static_cast<T>(y - y0), lx = static_cast<T>(x - x0);
  const T hy = T{1} - ly, hx = T{1} - lx;
  grad_plane[y0 * W + x0] += hy * hx * g;
  grad_plane[y0 * W + x1] += hy * lx * g;
  grad_plane[y1 * W + x0] += ly * hx * g;
  grad_plane[y1 * W + x1] += ly * lx * g;
}

// A RoI request: which image of the batch and which box (image pixels).
struct RoiRef {
  int image = 0;
  Box box;
};

inline constexpr int kSamplingRatio = 2;  // per axis; roi_align assumes 2

// Pyramid level for a box: level 0 (finest) while sqrt(area) < 2*base, one
// level coarser per doubling after that, clamped to the available levels.
inline int assign_level(const Box& b, double base_size, int num_levels) {
  const double s = std::sqrt(std::max(b.area(), 1e-12));
  const int lvl = static_cast<int>(std::floor(std::log2(s / base_size)));
  return std::clamp(lvl, 0, num_levels - 1);
}

// Sample positions of output cell (py, px) for a box mapped onto a feature
// map with the given stride. Calls f(y, x) for each of the ratio^2 samples.
template <typename F>
inline void for_each_sample(const Box& b, double stride, int out, int py, int px, F&& f) {
  const double scale = 1.0 / stride;
  const double ys = b.y0 * scale - 0.5, xs = b.x0 * scale - 0.5;
  const double bin_h = b.height() * scale / out, bin_w = b.width() * scale / out;
  for (int iy = 0; iy < kSamplingRatio; ++iy) {
    const double y = ys + py * bin_h + (iy + 0.5) * bin_h / kSamplingRatio;
    for (int ix = 0; ix < kSamplingRatio; ++ix) {
      const double x = xs + px * bin_w + (ix + 0.5) * bin_w / kSamplingRatio;
      f(y, x);
    }
  }
}

// RoIAlign on one feature level: features [B,D,H,W] -> [R,D,out,out].
template <typename T>
inline Tensor<T> roi_align(const Tensor<T>& features, const std::vector<RoiRef>& rois, double stride,
                           int out) {
  if (features.rank() != 4) throw ShapeError("roi_align: features must be [B,D,H,W]");
  const int D = features.c(), H = features.h(), W = features.w();
  Tensor<T> y({static_cast<int>(rois.size()), D, out, out});
  const T inv = T{1} / static_cast<T>(kSamplingRatio * kSamplingRatio);
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const auto& roi = rois[r];
    if (!roi.box.valid()) throw ShapeError("roi_align: degenerate box");
    if (roi.image < 0 || roi.image >= features.n()) throw ShapeError("roi_align: image index out of range");
    for (int d = 0; d < D; ++d) {
      const T* plane = features.data() + (static_cast<std::size_t>(roi.image) * D + d) * H * W;
      for (int py = 0; py < out; ++py)
        for (int px = 0; px < out; ++px) {
          T s[kSamplingRatio * kSamplingRatio];
          int i = 0;
          for_each_sample(roi.box, stride, out, py, px,
                          [&](double sy, double sx) { s[i++] = bilinear_interpolate(plane, H, W, sy, sx); });
          // Pairwise sum keeps a constant input exact.
          y.at(static_cast<int>(r), d, py, px) = ((s[0] + s[1]) + (s[2] + s[3])) * inv;
        }
    }
  }
  return y;
}

template <typename T>
inline void roi_align_backward(const Tensor<T>& dy, const std::vector<RoiRef>& rois, double stride,
                               Tensor<T>& grad_features) {
  const int D = grad_features.c(), H = grad_features.h(), W = grad_features.w();
  const int out = dy.h();
  const T inv = T{1} / static_cast<T>(kSamplingRatio * kSamplingRatio);
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const auto& roi = rois[r];
    for (int d = 0; d < D; ++d) {
      T* plane = grad_features.data() + (static_cast<std::size_t>(roi.image) * D + d) * H * W;
      for (int py = 0; py < out; ++py)
        for (int px = 0; px < out; ++px) {
          const T g = dy.at(static_cast<int>(r), d, py, px) * inv;
          if (g == T{0}) continue;
          for_each_sample(roi.box, stride, out, py, px, [&](double sy, double sx) {
            bilinear_interpolate_backward(plane, H, W, sy, sx, g);
          });
        }
    }
  }
}

}  // namespace opmask::nn
