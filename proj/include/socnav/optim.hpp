// Copyright (c) 2026 The socnav-moe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "socnav/autodiff.hpp"
#include "socnav/error.hpp"
#include "socnav/moe_policy.hpp"

namespace socnav {

/// Global L2 norm of all present gradients.
inline double grad_norm(const std::vector<NamedTensor>& params) {
  double sq = 0.0;
  for (const auto& [name, t] : params) {
    for (double g : t.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

/// Rescales gradients so the global norm is at most max_norm. Returns the
/// norm before clipping. max_norm <= 0 disables clipping.
inline double clip_grad_norm(const std::vector<NamedTensor>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto [name, t] : params) {
      if (!t.has_grad()) continue;
      for (double& g : t.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

/// Stochastic gradient step with optional heavy-ball momentum. `ascend`
/// flips the sign for objectives that are maximized.
class Sgd {
 public:
  explicit Sgd(double lr, double momentum = 0.0) : lr_(lr), momentum_(momentum) {
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  }

  void step(const std::vector<NamedTensor>& params, bool ascend = false) {
    if (velocity_.empty()) {
      for (const auto& [name, t] : params) velocity_.emplace_back(t.size(), 0.0);
    }
    const double sign = ascend ? 1.0 : -1.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
      Tensor t = params[p].second;
      if (!t.has_grad()) continue;
      auto g = t.grad();
      auto x = t.mutable_data();
      auto& v = velocity_[p];
      for (std::size_t i = 0; i < x.size(); ++i) {
        v[i] = momentum_ * v[i] + g[i];
        x[i] += sign * lr_ * v[i];
      }
    }
  }

  double lr() const { return lr_; }

 private:
  double lr_, momentum_;
  std::vector<std::vector<double>> velocity_;
};

/// Adam with bias correction; used for the supervised stages.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  }

  void step(const std::vector<NamedTensor>& params) {
    if (m_.empty()) {
      for (const auto& [name, t] : params) {
        m_.emplace_back(t.size(), 0.0);
        v_.emplace_back(t.size(), 0.0);
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t p = 0; p < params.size(); ++p) {
      Tensor t = params[p].second;
      if (!t.has_grad()) continue;
      auto g = t.grad();
      auto x = t.mutable_data();
      for (std::size_t i = 0; i < x.size(); ++i) {
        m_[p][i] = b1_ * m_[p][i] + (1.0 - b1_) * g[i];
        v_[p][i] = b2_ * v_[p][i] + (1.0 - b2_) * g[i] * g[i];
        x[i] -= lr_ * (m_[p][i] / c1) / (std::sqrt(v_[p][i] / c2) + eps_);
      }
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace socnav
