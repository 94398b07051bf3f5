#pragma once

#include <array>
#include <string>
#include <vector>

#include "opmask/core/error.hpp"
#include "opmask/core/tensor.hpp"
#include "opmask/opmodel/config.hpp"
#include "opmask/opmodel/layers.hpp"

namespace opmask::nn {

inline constexpr std::array<int, 3> kPyramidStrides{4, 8, 16};

template <typename T>
struct FeaturePyramid {
  std::array<Tensor<T>, 3> levels;  // [B,D,H/4,W/4], [B,D,H/8,W/8], [B,D,H/16,W/16]
};

// Small stride-2 conv stages with a top-down pyramid: 1x1 laterals summed
// with the upsampled coarser level, then a 3x3 output conv per level. No
// normalization, so images in a batch never interact.
template <typename T>
class Backbone {
 public:
  Backbone() = default;
  explicit Backbone(const ModelConfig& cfg) {
    const auto& c = cfg.backbone_channels;
    const int D = cfg.pyramid_channels;
    stem_ = Conv2d<T>("backbone.stem", 3, c[0], 3, 2, 1);
    s2a_ = Conv2d<T>("backbone.stage2.down", c[0], c[1], 3, 2, 1);
    s2b_ = Conv2d<T>("backbone.stage2.conv", c[1], c[1], 3, 1, 1);
    s3a_ = Conv2d<T>("backbone.stage3.down", c[1], c[2], 3, 2, 1);
    s3b_ = Conv2d<T>("backbone.stage3.conv", c[2], c[2], 3, 1, 1);
    s4a_ = Conv2d<T>("backbone.stage4.down", c[2], c[3], 3, 2, 1);
    lat_[0] = Conv2d<T>("backbone.lateral4", c[1], D, 1, 1, 0);
    lat_[1] = Conv2d<T>("backbone.lateral8", c[2], D, 1, 1, 0);
    lat_[2] = Conv2d<T>("backbone.lateral16", c[3], D, 1, 1, 0);
    out_[0] = Conv2d<T>("backbone.output4", D, D, 3, 1, 1);
    out_[1] = Conv2d<T>("backbone.output8", D, D, 3, 1, 1);
    out_[2] = Conv2d<T>("backbone.output16", D, D, 3, 1, 1);
  }

  void init(Rng& rng) {
    for (auto* l : convs()) l->init(rng);
  }

  FeaturePyramid<T> forward(const Tensor<T>& images) {
    if (images.rank() != 4 || images.c() != 3)
      throw ShapeError("backbone: expected [B,3,H,W], got " + images.shape_string());
    if (images.h() % 16 != 0 || images.w() % 16 != 0)
      throw ShapeError("backbone: image size " + std::to_string(images.h()) + "x" +
                       std::to_string(images.w()) + " is not divisible by 16");
    auto x = r_stem_.forward(stem_.forward(images));
    x = r2a_.forward(s2a_.forward(x));
    const auto c2 = r2b_.forward(s2b_.forward(x));
    x = r3a_.forward(s3a_.forward(c2));
    const auto c3 = r3b_.forward(s3b_.forward(x));
    const auto c4 = r4a_.forward(s4a_.forward(c3));

    auto p4 = lat_[2].forward(c4);
    auto p3 = lat_[1].forward(c3);
    p3 += upsample2x(p4);
    auto p2 = lat_[0].forward(c2);
    p2 += upsample2x(p3);

    FeaturePyramid<T> fp;
    fp.levels[0] = out_[0].forward(p2);
    fp.levels[1] = out_[1].forward(p3);
    fp.levels[2] = out_[2].forward(p4);
    return fp;
  }

  // Gradients w.r.t. the three pyramid outputs; returns d(images).
  Tensor<T> backward(const FeaturePyramid<T>& grads) {
    const auto dp2 = out_[0].backward(grads.levels[0]);
    auto dp3 = out_[1].backward(grads.levels[1]);
    auto dp4 = out_[2].backward(grads.levels[2]);
    dp3 += upsample2x_backward(dp2);
    dp4 += upsample2x_backward(dp3);
    auto dc2 = lat_[0].backward(dp2);
    auto dc3 = lat_[1].backward(dp3);
    const auto dc4 = lat_[2].backward(dp4);

    dc3 += s4a_.backward(r4a_.backward(dc4));
    dc2 += s3a_.backward(r3a_.backward(s3b_.backward(r3b_.backward(dc3))));
    auto dx = s2a_.backward(r2a_.backward(s2b_.backward(r2b_.backward(dc2))));
    return stem_.backward(r_stem_.backward(dx));
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> ps;
    for (auto* l : convs())
      for (auto* p : l->params()) ps.push_back(p);
    return ps;
  }

 private:
  std::vector<Conv2d<T>*> convs() {
    return {&stem_, &s2a_, &s2b_, &s3a_, &s3b_, &s4a_, &lat_[0], &lat_[1], &lat_[2], &out_[0], &out_[1], &out_[2]};
  }

  Conv2d<T> stem_, s2a_, s2b_, s3a_, s3b_, s4a_;
  std::array<Conv2d<T>, 3> lat_, out_;
  ReLU<T> r_stem_, r2a_, r2b_, r3a_, r3b_, r4a_;
};

}  // namespace opmask::nn
