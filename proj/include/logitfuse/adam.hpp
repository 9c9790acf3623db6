#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "logitfuse/parallel.hpp"

namespace logitfuse {

// Adaptive-moment optimizer with optional weight decay. decoupled=true is the
// AdamW form (decay applied directly to the parameter); false folds the decay
// term into the gradient before the moment updates.
class Adam {
 public:
  Adam(std::size_t size, double lr, double weight_decay = 0.0, bool decoupled = true)
      : lr_(lr), weight_decay_(weight_decay), decoupled_(decoupled), m_(size, 0.0), v_(size, 0.0) {}

  void step(std::vector<double>& params, const std::vector<double>& grads) {
    ++t_;
    const double bias1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bias2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    parallel_for(params.size(), [&](std::size_t i) {
      const double g = grads[i] + (decoupled_ ? 0.0 : weight_decay_ * params[i]);
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
      const double update = (m_[i] / bias1) / (std::sqrt(v_[i] / bias2) + eps_);
      params[i] -= lr_ * (update + (decoupled_ ? weight_decay_ * params[i] : 0.0));
    });
  }

 private:
  double lr_;
  double weight_decay_;
  bool decoupled_;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  std::size_t t_ = 0;
  std::vector<double> m_, v_;
};

}  // namespace logitfuse
