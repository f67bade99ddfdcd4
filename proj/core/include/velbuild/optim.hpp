#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "velbuild/autodiff.hpp"

namespace velbuild::ad {

/// lr * decay^floor(iter / every)
inline double scheduled_lr(double base, double decay, int every, int iter) {
  return base * std::pow(decay, iter / every);
}

/// Adam with bias correction. The learning rate is passed per step so
/// schedules stay external.
template <typename T>
class Adam {
public:
  explicit Adam(std::vector<Parameter<T>*> params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i]->numel(), T(0));
      v_[i].assign(params_[i]->numel(), T(0));
    }
  }

  std::int64_t step_count() const { return step_; }

  /// One update from the accumulated gradients. Grads are left in place;
  /// call zero_grad on the parameters before the next backward.
  void step(double lr) {
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter<T>& p = *params_[i];
      if (p.grad.size() != p.value.size())
        throw ConfigError("Adam: parameter '" + p.name + "' has no gradient");
      std::vector<T>& m = m_[i];
      std::vector<T>& v = v_[i];
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        const double g = static_cast<double>(p.grad[j]);
        const double mj = beta1_ * static_cast<double>(m[j]) + (1.0 - beta1_) * g;
        const double vj = beta2_ * static_cast<double>(v[j]) + (1.0 - beta2_) * g * g;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        p.value[j] -= static_cast<T>(lr * (mj / bc1) / (std::sqrt(vj / bc2) + eps_));
      }
    }
  }

  /// Drop all moments and the step counter (used when the iterate is
  /// replaced wholesale and history would mislead the next updates).
  void reset_moments() {
    step_ = 0;
    for (auto& m : m_) std::fill(m.begin(), m.end(), T(0));
    for (auto& v : v_) std::fill(v.begin(), v.end(), T(0));
  }

  // moment access for checkpointing
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  void set_step_count(std::int64_t s) { step_ = s; }
  const std::vector<Parameter<T>*>& params() const { return params_; }

private:
  std::vector<Parameter<T>*> params_;
  std::vector<std::vector<T>> m_, v_;
  double beta1_, beta2_, eps_;
  std::int64_t step_ = 0;
};

}  // namespace velbuild::ad
