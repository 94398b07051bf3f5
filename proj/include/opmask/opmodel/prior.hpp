#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "opmask/core/error.hpp"
#include "opmask/core/tensor.hpp"

namespace opmask::nn {

// Half-pixel bilinear resize (align_corners = false) of [N,C,h,w] planes.
template <typename T>
class BilinearResize {
 public:
  BilinearResize() = default;
  BilinearResize(int in_h, int in_w, int out_h, int out_w) : in_h_(in_h), in_w_(in_w), out_h_(out_h), out_w_(out_w) {
    ys_ = axis(in_h, out_h);
    xs_ = axis(in_w, out_w);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    if (x.rank() != 4 || x.h() != in_h_ || x.w() != in_w_)
      throw ShapeError("resize: expected spatial " + std::to_string(in_h_) + "x" + std::to_string(in_w_) +
                       ", got " + x.shape_string());
    Tensor<T> y({x.n(), x.c(), out_h_, out_w_});
    for (int p = 0; p < x.n() * x.c(); ++p) {
      const T* src = x.data() + static_cast<std::size_t>(p) * in_h_ * in_w_;
      T* dst = y.data() + static_cast<std::size_t>(p) * out_h_ * out_w_;
      for (int i = 0; i < out_h_; ++i) {
        const auto& a = ys_[i];
        for (int j = 0; j < out_w_; ++j) {
          const auto& b = xs_[j];
          // Lerp form so a constant plane resizes to exactly the same constant.
          const T top = src[a.i0 * in_w_ + b.i0] + b.l * (src[a.i0 * in_w_ + b.i1] - src[a.i0 * in_w_ + b.i0]);
          const T bot = src[a.i1 * in_w_ + b.i0] + b.l * (src[a.i1 * in_w_ + b.i1] - src[a.i1 * in_w_ + b.i0]);
          dst[i * out_w_ + j] = top + a.l * (bot - top);
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) const {
    Tensor<T> dx({dy.n(), dy.c(), in_h_, in_w_});
    for (int p = 0; p < dy.n() * dy.c(); ++p) {
      const T* g = dy.data() + static_cast<std::size_t>(p) * out_h_ * out_w_;
      T* dst = dx.data() + static_cast<std::size_t>(p) * in_h_ * in_w_;
      for (int i = 0; i < out_h_; ++i) {
        const auto& a = ys_[i];
        for (int j = 0; j < out_w_; ++j) {
          const auto& b = xs_[j];
          const T v = g[i * out_w_ + j];
          dst[a.i0 * in_w_ + b.i0] += (T{1} - a.l) * (T{1} - b.l) * v;
          dst[a.i0 * in_w_ + b.i1] += (T{1} - a.l) * b.l * v;
          dst[a.i1 * in_w_ + b.i0] += a.l * (T{1} - b.l) * v;
          dst[a.i1 * in_w_ + b.i1] += a.l * b.l * v;
        }
      }
    }
    return dx;
  }

 private:
  struct Tap {
    int i0, i1;
    T l;
  };
  static std::vector<Tap> axis(int in, int out) {
    std::vector<Tap> taps(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int i = 0; i < out; ++i) {
      double src = (i + 0.5) * scale - 0.5;
      if (src < 0) src = 0;
      int i0 = static_cast<int>(src);
      if (i0 > in - 1) i0 = in - 1;
      const int i1 = std::min(i0 + 1, in - 1);
      taps[static_cast<std::size_t>(i)] = {i0, i1, static_cast<T>(src - i0)};
    }
    return taps;
  }

  int in_h_ = 0, in_w_ = 0, out_h_ = 0, out_w_ = 0;
  std::vector<Tap> ys_, xs_;
};

// Class activation maps for every class: cam[r,k,h,w] = <W_cls[k,:], F_box[r,:,h,w]>.
// No bias and no activation; W_cls is the classifier weight itself.
template <typename T>
inline Tensor<T> compute_cam(const Tensor<T>& f_box, const Tensor<T>& w_cls) {
  if (f_box.rank() != 4 || w_cls.rank() != 2) throw ShapeError("compute_cam: bad ranks");
  const int R = f_box.n(), C = f_box.c(), hw = f_box.h() * f_box.w(), K = w_cls.dim(0);
  if (w_cls.dim(1) != C)
    throw ShapeError("compute_cam: classifier expects " + std::to_string(w_cls.dim(1)) +
                     " channels, box features have " + std::to_string(C));
  Tensor<T> cam({R, K, f_box.h(), f_box.w()});
  for (int r = 0; r < R; ++r)
    for (int k = 0; k < K; ++k) {
      T* dst = cam.data() + (static_cast<std::size_t>(r) * K + k) * hw;
      for (int c = 0; c < C; ++c) {
        const T wk = w_cls.at(k, c);
        const T* src = f_box.data() + (static_cast<std::size_t>(r) * C + c) * hw;
        for (int i = 0; i < hw; ++i) dst[i] += wk * src[i];
      }
    }
  return cam;
}

// Single CAM channel for one RoI: [h,w] plane of class `k` computed straight
// from the box features (same arithmetic as compute_cam for that channel).
template <typename T>
inline Tensor<T> cam_channel(const Tensor<T>& f_box, int roi, const Tensor<T>& w_cls, int k) {
  const int C = f_box.c(), hw = f_box.h() * f_box.w();
  Tensor<T> out({1, 1, f_box.h(), f_box.w()});
  for (int c = 0; c < C; ++c) {
    const T wk = w_cls.at(k, c);
    const T* src = f_box.data() + (static_cast<std::size_t>(roi) * C + c) * hw;
    for (int i = 0; i < hw; ++i) out[static_cast<std::size_t>(i)] += wk * src[i];
  }
  return out;
}

// Picks channel class_ids[r] of all_class[r] for every RoI: [R,K,h,w] -> [R,1,h,w].
template <typename T>
inline Tensor<T> select_prior_slice(const Tensor<T>& all_class, const std::vector<int>& class_ids) {
  if (all_class.rank() != 4 || static_cast<int>(class_ids.size()) != all_class.n())
    throw ShapeError("select_prior_slice: one class id per RoI required");
  const int K = all_class.c(), hw = all_class.h() * all_class.w();
  Tensor<T> out({all_class.n(), 1, all_class.h(), all_class.w()});
  for (int r = 0; r < all_class.n(); ++r) {
    const int k = class_ids[static_cast<std::size_t>(r)];
    if (k < 0 || k >= K) throw ShapeError("select_prior_slice: class id out of range");
    std::copy_n(all_class.data() + (static_cast<std::size_t>(r) * K + k) * hw, hw,
                out.data() + static_cast<std::size_t>(r) * hw);
  }
  return out;
}

// Inference-time selection: argmax of the logits. A background argmax means the
// RoI does not enter the mask branch; that is reported as nullopt.
template <typename T>
inline std::optional<int> predicted_prior_class(const T* logits, int num_logits, int background) {
  const int k = static_cast<int>(std::max_element(logits, logits + num_logits) - logits);
  if (k == background) return std::nullopt;
  return k;
}

// F_object = F_fpn + resize(prior), the resized prior broadcast over channels.
template <typename T>
inline Tensor<T> inject_prior(const Tensor<T>& f_fpn, const Tensor<T>& prior) {
  if (prior.rank() != 4 || prior.c() != 1 || prior.n() != f_fpn.n())
    throw ShapeError("inject_prior: prior must be [R,1,h,w] matching the RoI count");
  const BilinearResize<T> resize(prior.h(), prior.w(), f_fpn.h(), f_fpn.w());
  const Tensor<T> up = resize.forward(prior);
  Tensor<T> out = f_fpn;
  const int D = f_fpn.c(), hw = f_fpn.h() * f_fpn.w();
  for (int r = 0; r < f_fpn.n(); ++r)
    for (int d = 0; d < D; ++d) {
      T* dst = out.data() + (static_cast<std::size_t>(r) * D + d) * hw;
      const T* p = up.data() + static_cast<std::size_t>(r) * hw;
      for (int i = 0; i < hw; ++i) dst[i] += p[i];
    }
  return out;
}

}  // namespace opmask::nn
