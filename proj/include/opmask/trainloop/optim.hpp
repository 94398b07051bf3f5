#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "opmask/core/error.hpp"
#include "opmask/core/tensor.hpp"
#include "opmask/opmodel/layers.hpp"

namespace opmask::train {

// Linear warmup to `base`, then constant.
inline double learning_rate(double base, long iter, long warmup) {
  if (warmup <= 0 || iter + 1 >= warmup) return base;
  return base * static_cast<double>(iter + 1) / static_cast<double>(warmup);
}

template <typename T>
inline double global_grad_norm(const std::vector<nn::Param<T>*>& params) {
  double s = 0;
  for (const auto* p : params)
    for (T g : p->grad.vec()) s += double(g) * double(g);
  return std::sqrt(s);
}

// Scales all gradients so their global norm is at most `max_norm`. Returns
// the norm before clipping.
template <typename T>
inline double clip_grad_norm(const std::vector<nn::Param<T>*>& params, double max_norm) {
  if (!(max_norm > 0)) throw ConfigError("clip norm must be > 0");
  const double norm = global_grad_norm(params);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto* p : params)
      for (T& g : p->grad.vec()) g = static_cast<T>(double(g) * scale);
  }
  return norm;
}

// Heavy-ball SGD: v = mu*v + g; w -= lr*v.
template <typename T>
class SgdMomentum {
 public:
  explicit SgdMomentum(double momentum = 0.9) : momentum_(momentum) {}

  void step(const std::vector<nn::Param<T>*>& params, double lr) {
    for (auto* p : params) {
      auto it = velocity_.find(p->name);
      if (it == velocity_.end()) it = velocity_.emplace(p->name, Tensor<T>(p->value.shape())).first;
      auto& v = it->second.vec();
      auto& w = p->value.vec();
      const auto& g = p->grad.vec();
      const T mu = static_cast<T>(momentum_), a = static_cast<T>(lr);
      for (std::size_t i = 0; i < w.size(); ++i) {
        v[i] = mu * v[i] + g[i];
        w[i] -= a * v[i];
      }
    }
  }

  double momentum() const { return momentum_; }
  std::map<std::string, Tensor<T>>& state() { return velocity_; }
  const std::map<std::string, Tensor<T>>& state() const { return velocity_; }

 private:
  double momentum_;
  std::map<std::string, Tensor<T>> velocity_;
};

}  // namespace opmask::train
