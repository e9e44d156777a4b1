#pragma once

#include <utility>

#include "hf/tensor.hpp"

namespace hf {

// Components of the joint objective for one batch. total is exactly
// cross_entropy + gamma * center.
struct LossReport {
  double total = 0.0;
  double cross_entropy = 0.0;
  double center = 0.0;
  double gamma = 0.0;
};

// Mean over the batch of -sum_c y_c * log softmax(logits)_c, log-sum-exp
// stabilized. Targets must lie on the probability simplex (checked to 1e-6).
Tensor cross_entropy(Tape* tape, const Tensor& logits, const Tensor& targets);

// Soft-label center loss: per sample, sum_c y_c * (1/2)||z - c_c||^2,
// averaged over the batch. Reduces to the hard-label pull toward c_{y_i}
// for one-hot targets. Differentiable in both z and the centers.
Tensor center_loss(Tape* tape, const Tensor& z, const Tensor& targets,
                   const Tensor& centers);

// total = ce + gamma * center as a differentiable scalar, plus the report.
std::pair<Tensor, LossReport> total_loss(Tape* tape, const Tensor& ce,
                                         const Tensor& center, double gamma);

}  // namespace hf
