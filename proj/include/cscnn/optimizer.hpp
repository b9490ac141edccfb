#pragma once

// Adam with optional L2 weight decay folded into the gradient (equivalent to
// lambda * |theta|^2 in the loss).

#include <cmath>
#include <vector>

#include "cscnn/tensor.hpp"

namespace cscnn {

template <typename S>
class Adam {
 public:
  Adam() = default;

  Adam(std::vector<Tensor<S>> params, double lr, double l2 = 0.0, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), l2_(l2), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t k = 0; k < params_.size(); ++k) {
      auto& value = params_[k].value();
      auto& grad = params_[k].grad();
      for (size_t i = 0; i < value.size(); ++i) {
        double g = static_cast<double>(grad[i]) + 2.0 * l2_ * static_cast<double>(value[i]);
        m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g;
        v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * g * g;
        double mhat = m_[k][i] / bc1;
        double vhat = v_[k][i] / bc2;
        value[i] -= static_cast<S>(lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  const std::vector<Tensor<S>>& params() const { return params_; }

 private:
  std::vector<Tensor<S>> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_ = 1e-3, l2_ = 0.0, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long long t_ = 0;
};

}  // namespace cscnn
