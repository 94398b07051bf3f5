#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "opmask/core/error.hpp"

namespace opmask {

// Dense row-major tensor. Most of the library treats it as NCHW; lower-rank
// uses (vectors, matrices) just carry fewer dimensions.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape, T fill = T{0}) : shape_(std::move(shape)) {
    data_.assign(count_of(shape_), fill);
  }
  Tensor(std::initializer_list<int> shape, T fill = T{0})
      : Tensor(std::vector<int>(shape), fill) {}

  static Tensor from(std::vector<int> shape, std::vector<T> values) {
    Tensor t;
    if (count_of(shape) != values.size())
      throw ShapeError("Tensor::from: " + std::to_string(values.size()) +
                       " values for shape " + shape_string(shape));
    t.shape_ = std::move(shape);
    t.data_ = std::move(values);
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // NCHW accessors; only meaningful for rank-4 tensors.
  int n() const { return shape_[0]; }
  int c() const { return shape_[1]; }
  int h() const { return shape_[2]; }
  int w() const { return shape_[3]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(int a, int b, int c, int d) { return data_[index(a, b, c, d)]; }
  const T& at(int a, int b, int c, int d) const { return data_[index(a, b, c, d)]; }
  T& at(int a, int b) { return data_[static_cast<std::size_t>(a) * shape_[1] + b]; }
  const T& at(int a, int b) const { return data_[static_cast<std::size_t>(a) * shape_[1] + b]; }

  std::size_t index(int a, int b, int c, int d) const {
    return ((static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d;
  }

  // Pointer to the start of sample `i` along the leading axis.
  T* slice(int i) { return data_.data() + static_cast<std::size_t>(i) * stride0(); }
  const T* slice(int i) const { return data_.data() + static_cast<std::size_t>(i) * stride0(); }
  std::size_t stride0() const { return shape_.empty() ? 0 : data_.size() / shape_[0]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T{0}); }

  Tensor reshaped(std::vector<int> shape) const {
    if (count_of(shape) != data_.size())
      throw ShapeError("reshape " + shape_string(shape_) + " -> " + shape_string(shape));
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor& operator+=(const Tensor& o) {
    require_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  T sum() const { return std::accumulate(data_.begin(), data_.end(), T{0}); }
  T max_abs() const {
    T m{0};
    for (auto v : data_) m = std::max(m, static_cast<T>(std::abs(v)));
    return m;
  }
  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> t(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) t[i] = static_cast<U>(data_[i]);
    return t;
  }

  std::string shape_string() const { return shape_string(shape_); }

  static std::size_t count_of(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      if (d < 0) throw ShapeError("negative dimension in " + shape_string(shape));
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  static std::string shape_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void require_same(const Tensor& o, const char* op) const {
    if (shape_ != o.shape_)
      throw ShapeError(std::string("Tensor ") + op + ": " + shape_string(shape_) + " vs " +
                       shape_string(o.shape_));
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

template <typename T>
inline void require_shape(const Tensor<T>& t, const std::vector<int>& expected, const char* what) {
  if (t.shape() != expected)
    throw ShapeError(std::string(what) + ": expected " + Tensor<T>::shape_string(expected) +
                     ", got " + t.shape_string());
}

}  // namespace opmask
