#pragma once

// Point-wise negative log-likelihood and pair-wise BPR-style objectives.

#include <stdexcept>
#include <vector>

#include "cscnn/tensor.hpp"

namespace cscnn {

inline constexpr double kProbEps = 1e-7;

// -(1/N) sum y log p + (1-y) log(1-p). Predictions are clamped to
// [eps, 1-eps] before the logs.
template <typename S>
Tensor<S> pointwise_loss(const Tensor<S>& yhat, const std::vector<int>& labels) {
  if (!yhat.defined() || yhat.numel() == 0 || labels.empty())
    throw std::invalid_argument("pointwise_loss: empty batch");
  if (yhat.numel() != static_cast<long long>(labels.size()))
    throw ShapeError("pointwise_loss: " + std::to_string(yhat.numel()) + " predictions vs " +
                     std::to_string(labels.size()) + " labels");
  size_t n = labels.size();
  std::vector<S> pos(n), neg(n), ones(n, S(1));
  for (size_t i = 0; i < n; ++i) {
    pos[i] = labels[i] ? S(1) : S(0);
    neg[i] = labels[i] ? S(0) : S(1);
  }
  Tensor<S> p = clamp(yhat, static_cast<S>(kProbEps), static_cast<S>(1.0 - kProbEps));
  Tensor<S> one{Shape{static_cast<int>(n)}, std::move(ones)};
  Tensor<S> wp{Shape{static_cast<int>(n)}, std::move(pos)};
  Tensor<S> wn{Shape{static_cast<int>(n)}, std::move(neg)};
  Tensor<S> ll = add(mul(wp, log_t(p)), mul(wn, log_t(sub(one, p))));
  return scale(mean(ll), S(-1));
}

// -(sum ln sigmoid(pos - neg)) + lambda * R, minimised (the BPR objective
// negated). `reg` is the L2 term over all parameters; pass an undefined
// tensor to leave regularization to the optimizer.
template <typename S>
Tensor<S> pairwise_loss(const Tensor<S>& pos_scores, const Tensor<S>& neg_scores, S lambda,
                        const Tensor<S>& reg = Tensor<S>{}) {
  if (!pos_scores.defined() || pos_scores.numel() == 0)
    throw std::invalid_argument("pairwise_loss: empty batch");
  detail::check_same_shape(pos_scores, neg_scores, "pairwise_loss");
  Tensor<S> loss = scale(sum(log_sigmoid(sub(pos_scores, neg_scores))), S(-1));
  if (reg.defined()) loss = add(loss, scale(reg, lambda));
  return loss;
}

}  // namespace cscnn
