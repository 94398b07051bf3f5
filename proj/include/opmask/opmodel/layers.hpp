#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "opmask/core/error.hpp"
#include "opmask/core/rng.hpp"
#include "opmask/core/tensor.hpp"

namespace opmask::nn {

enum class Mode { train, eval };

// A trainable array and its gradient accumulator.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  Param(std::string n, std::vector<int> shape) : name(std::move(n)), value(shape), grad(shape) {}

  void zero_grad() { grad.zero(); }
};

// Non-trainable state that still belongs in a checkpoint (running statistics).
template <typename T>
struct Buffer {
  std::string name;
  Tensor<T> value;
};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
inline void he_normal(Tensor<T>& w, int fan_in, Rng& rng) {
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : w.vec()) v = static_cast<T>(rng.normal(0.0, sd));
}

template <typename T>
inline void normal_init(Tensor<T>& w, double sd, Rng& rng) {
  for (auto& v : w.vec()) v = static_cast<T>(rng.normal(0.0, sd));
}

// 2-D convolution, square kernel, zero padding. Weight layout [out, in*k*k].
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in, int out, int k, int stride, int pad)
      : in_(in), out_(out), k_(k), stride_(stride), pad_(pad),
        weight_(name + ".weight", {out, in * k * k}), bias_(name + ".bias", {out}) {}

  void init(Rng& rng) {
    he_normal(weight_.value, in_ * k_ * k_, rng);
    bias_.value.zero();
  }

  int out_size(int n) const { return (n + 2 * pad_ - k_) / stride_ + 1; }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.rank() != 4 || x.c() != in_)
      throw ShapeError(weight_.name + ": expected [N," + std::to_string(in_) + ",H,W], got " +
                       x.shape_string());
    in_shape_ = x.shape();
    const int N = x.n(), H = x.h(), W = x.w();
    ho_ = out_size(H);
    wo_ = out_size(W);
    const int hw = ho_ * wo_;
    const int rows = in_ * k_ * k_;
    const int cols = N * hw;
    col_.assign(static_cast<std::size_t>(rows) * cols, T{0});
    im2col(x, col_.data(), N, H, W, cols);

    Tensor<T> y({N, out_, ho_, wo_});
    if (N == 0) return y;
    RowMat<T> prod = ConstMatMap<T>(weight_.value.data(), out_, rows) *
                     ConstMatMap<T>(col_.data(), rows, cols);
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < out_; ++o) {
        const T b = bias_.value[o];
        T* dst = y.data() + (static_cast<std::size_t>(n) * out_ + o) * hw;
        const T* src = prod.data() + static_cast<std::size_t>(o) * cols + static_cast<std::size_t>(n) * hw;
        for (int i = 0; i < hw; ++i) dst[i] = src[i] + b;
      }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const int N = in_shape_[0], H = in_shape_[2], W = in_shape_[3];
    require_shape(dy, {N, out_, ho_, wo_}, "Conv2d::backward");
    const int hw = ho_ * wo_;
    const int rows = in_ * k_ * k_;
    const int cols = N * hw;
    Tensor<T> dx(in_shape_);
    if (N == 0) return dx;
    RowMat<T> dy2(out_, cols);
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < out_; ++o) {
        const T* src = dy.data() + (static_cast<std::size_t>(n) * out_ + o) * hw;
        T* dst = dy2.data() + static_cast<std::size_t>(o) * cols + static_cast<std::size_t>(n) * hw;
        for (int i = 0; i < hw; ++i) dst[i] = src[i];
      }
    ConstMatMap<T> col(col_.data(), rows, cols);
    MatMap<T>(weight_.grad.data(), out_, rows).noalias() += dy2 * col.transpose();
    for (int o = 0; o < out_; ++o) bias_.grad[o] += dy2.row(o).sum();
    RowMat<T> dcol = ConstMatMap<T>(weight_.value.data(), out_, rows).transpose() * dy2;
    col2im(dcol.data(), dx, N, H, W, cols);
    return dx;
  }

  std::vector<Param<T>*> params() { return {&weight_, &bias_}; }
  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

 private:
  // Output columns ox whose input column ox*stride - pad + kx lies in [0, W).
  void valid_range(int kx, int W, int& lo, int& hi) const {
    const int off = kx - pad_;
    lo = off >= 0 ? 0 : (-off + stride_ - 1) / stride_;
    hi = W - 1 - off < 0 ? 0 : std::min(wo_, (W - 1 - off) / stride_ + 1);
    if (hi < lo) hi = lo;
  }

  // `col` must be zeroed; only in-bounds taps are written.
  void im2col(const Tensor<T>& x, T* col, int N, int H, int W, int cols) const {
    const int hw = ho_ * wo_;
    for (int c = 0; c < in_; ++c)
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx) {
          const int row = (c * k_ + ky) * k_ + kx;
          int lo, hi;
          valid_range(kx, W, lo, hi);
          const int off = kx - pad_;
          T* dst = col + static_cast<std::size_t>(row) * cols;
          for (int n = 0; n < N; ++n) {
            const T* src = x.data() + (static_cast<std::size_t>(n) * in_ + c) * H * W;
            T* d = dst + static_cast<std::size_t>(n) * hw;
            for (int oy = 0; oy < ho_; ++oy) {
              T* drow = d + oy * wo_;
              const int iy = oy * stride_ - pad_ + ky;
              if (iy < 0 || iy >= H) continue;
              const T* srow = src + iy * W;
              if (stride_ == 1) {
                std::copy(srow + lo + off, srow + hi + off, drow + lo);
              } else {
                for (int ox = lo; ox < hi; ++ox) drow[ox] = srow[ox * stride_ + off];
              }
            }
          }
        }
  }

  void col2im(const T* col, Tensor<T>& dx, int N, int H, int W, int cols) const {
    const int hw = ho_ * wo_;
    for (int c = 0; c < in_; ++c)
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx) {
          const int row = (c * k_ + ky) * k_ + kx;
          int lo, hi;
          valid_range(kx, W, lo, hi);
          const int off = kx - pad_;
          const T* srcrow = col + static_cast<std::size_t>(row) * cols;
          for (int n = 0; n < N; ++n) {
            T* dst = dx.data() + (static_cast<std::size_t>(n) * in_ + c) * H * W;
            const T* s = srcrow + static_cast<std::size_t>(n) * hw;
            for (int oy = 0; oy < ho_; ++oy) {
              const int iy = oy * stride_ - pad_ + ky;
              if (iy < 0 || iy >= H) continue;
              T* __restrict drow = dst + iy * W;
              const T* __restrict srow = s + oy * wo_;
              if (stride_ == 1) {
                for (int ox = lo; ox < hi; ++ox) drow[ox + off] += srow[ox];
              } else {
                for (int ox = lo; ox < hi; ++ox) drow[ox * stride_ + off] += srow[ox];
              }
            }
          }
        }
  }

  int in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
  Param<T> weight_, bias_;
  std::vector<int> in_shape_;
  int ho_ = 0, wo_ = 0;
  std::vector<T> col_;
};

// Transposed convolution with kernel 2 and stride 2 (exact 2x upsampling,
// no overlap between output blocks). Weight layout [in, out*2*2].
template <typename T>
class ConvTranspose2x2 {
 public:
  ConvTranspose2x2() = default;
  ConvTranspose2x2(const std::string& name, int in, int out)
      : in_(in), out_(out), weight_(name + ".weight", {in, out * 4}), bias_(name + ".bias", {out}) {}

  void init(Rng& rng) {
    // Fan-in of each output pixel is `in` (one kernel tap per input channel).
    he_normal(weight_.value, in_, rng);
    bias_.value.zero();
  }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.rank() != 4 || x.c() != in_) throw ShapeError(weight_.name + ": bad input " + x.shape_string());
    in_shape_ = x.shape();
    const int N = x.n(), H = x.h(), W = x.w(), hw = H * W, cols = N * hw;
    x2_ = RowMat<T>(in_, cols);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < in_; ++c)
        for (int i = 0; i < hw; ++i)
          x2_(c, static_cast<Eigen::Index>(n) * hw + i) = x.data()[(static_cast<std::size_t>(n) * in_ + c) * hw + i];
    RowMat<T> y2 = ConstMatMap<T>(weight_.value.data(), in_, out_ * 4).transpose() * x2_;
    Tensor<T> y({N, out_, 2 * H, 2 * W});
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < out_; ++o)
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b) {
            const int row = o * 4 + a * 2 + b;
            for (int i = 0; i < H; ++i)
              for (int j = 0; j < W; ++j)
                y.at(n, o, 2 * i + a, 2 * j + b) =
                    y2(row, static_cast<Eigen::Index>(n) * hw + i * W + j) + bias_.value[o];
          }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const int N = in_shape_[0], H = in_shape_[2], W = in_shape_[3], hw = H * W, cols = N * hw;
    require_shape(dy, {N, out_, 2 * H, 2 * W}, "ConvTranspose2x2::backward");
    RowMat<T> dy2(out_ * 4, cols);
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < out_; ++o)
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b) {
            const int row = o * 4 + a * 2 + b;
            for (int i = 0; i < H; ++i)
              for (int j = 0; j < W; ++j) {
                const T g = dy.at(n, o, 2 * i + a, 2 * j + b);
                dy2(row, static_cast<Eigen::Index>(n) * hw + i * W + j) = g;
              }
          }
    for (int o = 0; o < out_; ++o) bias_.grad[o] += dy2.middleRows(o * 4, 4).sum();
    MatMap<T>(weight_.grad.data(), in_, out_ * 4).noalias() += x2_ * dy2.transpose();
    RowMat<T> dx2 = ConstMatMap<T>(weight_.value.data(), in_, out_ * 4) * dy2;
    Tensor<T> dx(in_shape_);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < in_; ++c)
        for (int i = 0; i < hw; ++i)
          dx.data()[(static_cast<std::size_t>(n) * in_ + c) * hw + i] = dx2(c, static_cast<Eigen::Index>(n) * hw + i);
    return dx;
  }

  std::vector<Param<T>*> params() { return {&weight_, &bias_}; }

 private:
  int in_ = 0, out_ = 0;
  Param<T> weight_, bias_;
  std::vector<int> in_shape_;
  RowMat<T> x2_;
};

// Per-channel batch normalization over (N, H, W). Train mode normalizes with
// the batch statistics and updates the running estimates; eval mode uses the
// running estimates only.
template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels, double eps = 1e-5, double momentum = 0.1)
      : ch_(channels), eps_(eps), momentum_(momentum),
        gamma_(name + ".gamma", {channels}), beta_(name + ".beta", {channels}),
        running_mean_{name + ".running_mean", Tensor<T>({channels})},
        running_var_{name + ".running_var", Tensor<T>({channels}, T{1})} {
    gamma_.value.fill(T{1});
  }

  void init(Rng&) {
    gamma_.value.fill(T{1});
    beta_.value.zero();
    running_mean_.value.zero();
    running_var_.value.fill(T{1});
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    if (x.rank() != 4 || x.c() != ch_) throw ShapeError(gamma_.name + ": bad input " + x.shape_string());
    const int N = x.n(), hw = x.h() * x.w();
    const double m = static_cast<double>(N) * hw;
    mode_ = mode;
    xhat_ = Tensor<T>(x.shape());
    inv_std_.assign(static_cast<std::size_t>(ch_), T{0});
    Tensor<T> y(x.shape());
    for (int c = 0; c < ch_; ++c) {
      double mean, var;
      if (mode == Mode::train) {
        if (m < 1) throw ShapeError(gamma_.name + ": empty batch in train mode");
        double s = 0;
        for (int n = 0; n < N; ++n) {
          const T* p = x.data() + (static_cast<std::size_t>(n) * ch_ + c) * hw;
          for (int i = 0; i < hw; ++i) s += p[i];
        }
        mean = s / m;
        double v = 0;
        for (int n = 0; n < N; ++n) {
          const T* p = x.data() + (static_cast<std::size_t>(n) * ch_ + c) * hw;
          for (int i = 0; i < hw; ++i) v += (p[i] - mean) * (p[i] - mean);
        }
        var = v / m;
        const double unbiased = m > 1 ? v / (m - 1) : var;
        running_mean_.value[c] = static_cast<T>((1 - momentum_) * running_mean_.value[c] + momentum_ * mean);
        running_var_.value[c] = static_cast<T>((1 - momentum_) * running_var_.value[c] + momentum_ * unbiased);
      } else {
        mean = running_mean_.value[c];
        var = running_var_.value[c];
      }
      const T istd = static_cast<T>(1.0 / std::sqrt(var + eps_));
      inv_std_[c] = istd;
      const T g = gamma_.value[c], b = beta_.value[c], mu = static_cast<T>(mean);
      for (int n = 0; n < N; ++n) {
        const std::size_t off = (static_cast<std::size_t>(n) * ch_ + c) * hw;
        for (int i = 0; i < hw; ++i) {
          const T xh = (x.data()[off + i] - mu) * istd;
          xhat_.data()[off + i] = xh;
          y.data()[off + i] = g * xh + b;
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    require_shape(dy, xhat_.shape(), "BatchNorm2d::backward");
    const int N = dy.n(), hw = dy.h() * dy.w();
    const T m = static_cast<T>(N * hw);
    Tensor<T> dx(dy.shape());
    for (int c = 0; c < ch_; ++c) {
      T sum_dy{0}, sum_dy_xh{0};
      for (int n = 0; n < N; ++n) {
        const std::size_t off = (static_cast<std::size_t>(n) * ch_ + c) * hw;
        for (int i = 0; i < hw; ++i) {
          sum_dy += dy.data()[off + i];
          sum_dy_xh += dy.data()[off + i] * xhat_.data()[off + i];
        }
      }
      gamma_.grad[c] += sum_dy_xh;
      beta_.grad[c] += sum_dy;
      const T g = gamma_.value[c], istd = inv_std_[c];
      for (int n = 0; n < N; ++n) {
        const std::size_t off = (static_cast<std::size_t>(n) * ch_ + c) * hw;
        for (int i = 0; i < hw; ++i) {
          if (mode_ == Mode::train)
            dx.data()[off + i] =
                g * istd / m * (m * dy.data()[off + i] - sum_dy - xhat_.data()[off + i] * sum_dy_xh);
          else
            dx.data()[off + i] = g * istd * dy.data()[off + i];
        }
      }
    }
    return dx;
  }

  std::vector<Param<T>*> params() { return {&gamma_, &beta_}; }
  std::vector<Buffer<T>*> buffers() { return {&running_mean_, &running_var_}; }

 private:
  int ch_ = 0;
  double eps_ = 1e-5, momentum_ = 0.1;
  Param<T> gamma_, beta_;
  Buffer<T> running_mean_, running_var_;
  Mode mode_ = Mode::eval;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

// Fully connected layer on [N, in] rows. Weight layout [out, in].
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out)
      : in_(in), out_(out), weight_(name + ".weight", {out, in}), bias_(name + ".bias", {out}) {}

  void init(Rng& rng, double sd) {
    normal_init(weight_.value, sd, rng);
    bias_.value.zero();
  }

  Tensor<T> forward(const Tensor<T>& x) {
    require_shape(x, {x.dim(0), in_}, "Linear::forward");
    x_ = x;
    const int N = x.dim(0);
    Tensor<T> y({N, out_});
    if (N == 0) return y;
    MatMap<T>(y.data(), N, out_).noalias() =
        ConstMatMap<T>(x.data(), N, in_) * ConstMatMap<T>(weight_.value.data(), out_, in_).transpose();
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < out_; ++o) y.at(n, o) += bias_.value[o];
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const int N = x_.dim(0);
    require_shape(dy, {N, out_}, "Linear::backward");
    Tensor<T> dx({N, in_});
    if (N == 0) return dx;
    ConstMatMap<T> dym(dy.data(), N, out_);
    MatMap<T>(weight_.grad.data(), out_, in_).noalias() += dym.transpose() * ConstMatMap<T>(x_.data(), N, in_);
    for (int o = 0; o < out_; ++o) bias_.grad[o] += dym.col(o).sum();
    MatMap<T>(dx.data(), N, in_).noalias() = dym * ConstMatMap<T>(weight_.value.data(), out_, in_);
    return dx;
  }

  std::vector<Param<T>*> params() { return {&weight_, &bias_}; }
  Param<T>& weight() { return weight_; }
  const Param<T>& weight() const { return weight_; }
  Param<T>& bias() { return bias_; }
  const Param<T>& bias() const { return bias_; }

 private:
  int in_ = 0, out_ = 0;
  Param<T> weight_, bias_;
  Tensor<T> x_;
};

template <typename T>
class ReLU {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> y = x;
    for (auto& v : y.vec()) v = v > T{0} ? v : T{0};
    y_ = y;
    return y;
  }
  Tensor<T> backward(const Tensor<T>& dy) const {
    Tensor<T> dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (!(y_[i] > T{0})) dx[i] = T{0};
    return dx;
  }

 private:
  Tensor<T> y_;
};

// Spatial mean per channel: [N,C,H,W] -> [N,C].
template <typename T>
inline Tensor<T> global_average_pool(const Tensor<T>& x) {
  const int N = x.n(), C = x.c(), hw = x.h() * x.w();
  Tensor<T> y({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* p = x.data() + (static_cast<std::size_t>(n) * C + c) * hw;
      T s{0};
      for (int i = 0; i < hw; ++i) s += p[i];
      y.at(n, c) = s / static_cast<T>(hw);
    }
  return y;
}

template <typename T>
inline Tensor<T> global_average_pool_backward(const Tensor<T>& dy, const std::vector<int>& in_shape) {
  Tensor<T> dx(in_shape);
  const int N = in_shape[0], C = in_shape[1], hw = in_shape[2] * in_shape[3];
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T g = dy.at(n, c) / static_cast<T>(hw);
      T* p = dx.data() + (static_cast<std::size_t>(n) * C + c) * hw;
      for (int i = 0; i < hw; ++i) p[i] = g;
    }
  return dx;
}

// Nearest-neighbour 2x upsampling and its adjoint.
template <typename T>
inline Tensor<T> upsample2x(const Tensor<T>& x) {
  Tensor<T> y({x.n(), x.c(), 2 * x.h(), 2 * x.w()});
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c)
      for (int i = 0; i < y.h(); ++i)
        for (int j = 0; j < y.w(); ++j) y.at(n, c, i, j) = x.at(n, c, i / 2, j / 2);
  return y;
}

template <typename T>
inline Tensor<T> upsample2x_backward(const Tensor<T>& dy) {
  Tensor<T> dx({dy.n(), dy.c(), dy.h() / 2, dy.w() / 2});
  for (int n = 0; n < dy.n(); ++n)
    for (int c = 0; c < dy.c(); ++c)
      for (int i = 0; i < dy.h(); ++i)
        for (int j = 0; j < dy.w(); ++j) dx.at(n, c, i / 2, j / 2) += dy.at(n, c, i, j);
  return dx;
}

}  // namespace opmask::nn
