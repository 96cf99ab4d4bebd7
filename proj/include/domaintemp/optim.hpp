#pragma once

#include <cmath>
#include <vector>

#include "domaintemp/tape.hpp"

namespace domaintemp {

// Step decay: lr(n) = lr0 * gamma^floor(n / step_size) after n epochs.
struct StepLrSchedule {
  double lr0 = 1e-3;
  int step_size = 20;
  double gamma = 0.9;

  double lr_after(int epochs) const {
    return lr0 * std::pow(gamma, epochs / step_size);
  }
};

template <typename T>
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Parameter<T>*> params, double lr, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto* p : params_) {
      m_.push_back(Tensor<T>::zeros(p->value.shape()));
      v_.push_back(Tensor<T>::zeros(p->value.shape()));
    }
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  std::int64_t step_count() const { return step_; }
  void set_step_count(std::int64_t s) { step_ = s; }

  void step() {
    ++step_;
    const T bc1 = T(1) - static_cast<T>(std::pow(beta1_, static_cast<double>(step_)));
    const T bc2 = T(1) - static_cast<T>(std::pow(beta2_, static_cast<double>(step_)));
    const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
    const T lr = static_cast<T>(lr_), eps = static_cast<T>(eps_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto g = params_[i]->grad.array();
      auto m = m_[i].array();
      auto v = v_[i].array();
      m = b1 * m + (T(1) - b1) * g;
      v = b2 * v + (T(1) - b2) * g * g;
      params_[i]->value.array() -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  const std::vector<Parameter<T>*>& params() const { return params_; }
  Tensor<T>& moment1(std::size_t i) { return m_[i]; }
  Tensor<T>& moment2(std::size_t i) { return v_[i]; }

 private:
  std::vector<Parameter<T>*> params_;
  std::vector<Tensor<T>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t step_ = 0;
};

}  // namespace domaintemp
