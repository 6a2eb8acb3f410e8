// avlip/nn/optim.hpp

// Copyright 2026  The avlip authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <vector>

#include "avlip/nn/layers.hpp"

namespace avlip::nn {

/// Cosine annealing from base_lr at epoch 0 to 0 at epoch total_epochs.
inline double cosine_lr(double base_lr, int64_t epoch, int64_t total_epochs) {
  if (total_epochs <= 0) return base_lr;
  const double t = std::min<double>(std::max<int64_t>(epoch, 0), total_epochs);
  return 0.5 * base_lr * (1.0 + std::cos(M_PI * t / static_cast<double>(total_epochs)));
}

template <typename T>
void zero_grads(const std::vector<Param<T>*>& params) {
  for (auto* p : params) p->zero_grad();
}

template <typename T>
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  // Callers must pass the same parameter list (same order) on every step.
  virtual void step(const std::vector<Param<T>*>& params, double lr) = 0;
};

template <typename T>
class Sgd : public Optimizer<T> {
 public:
  explicit Sgd(double momentum = 0.9, double weight_decay = 0.0)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(const std::vector<Param<T>*>& params, double lr) override {
    if (velocity_.size() != params.size()) {
      velocity_.clear();
      for (auto* p : params) velocity_.emplace_back(p->value.shape());
    }
    for (size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      auto& v = velocity_[i];
      for (int64_t j = 0; j < p.value.numel(); ++j) {
        const double g = static_cast<double>(p.grad[j]) +
                         weight_decay_ * static_cast<double>(p.value[j]);
        const double vel = momentum_ * static_cast<double>(v[j]) + g;
        v[j] = static_cast<T>(vel);
        p.value[j] = static_cast<T>(static_cast<double>(p.value[j]) - lr * vel);
      }
    }
  }

 private:
  double momentum_, weight_decay_;
  std::vector<Tensor<T>> velocity_;
};

template <typename T>
class Adam : public Optimizer<T> {
 public:
  explicit Adam(double weight_decay = 0.0, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Param<T>*>& params, double lr) override {
    if (m_.size() != params.size()) {
      m_.clear();
      v_.clear();
      for (auto* p : params) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
      }
      t_ = 0;
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      for (int64_t j = 0; j < p.value.numel(); ++j) {
        const double g = static_cast<double>(p.grad[j]) +
                         weight_decay_ * static_cast<double>(p.value[j]);
        const double m = beta1_ * static_cast<double>(m_[i][j]) + (1.0 - beta1_) * g;
        const double v = beta2_ * static_cast<double>(v_[i][j]) + (1.0 - beta2_) * g * g;
        m_[i][j] = static_cast<T>(m);
        v_[i][j] = static_cast<T>(v);
        p.value[j] = static_cast<T>(static_cast<double>(p.value[j]) -
                                    lr * (m / bc1) / (std::sqrt(v / bc2) + eps_));
      }
    }
  }

 private:
  double weight_decay_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

}  // namespace avlip::nn
