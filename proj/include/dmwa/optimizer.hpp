#pragma once

#include <span>
#include <vector>

#include "dmwa/tensor.hpp"

namespace dmwa {

struct AdamConfig {
  double learning_rate = 5e-6;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Moment accumulators, one pair per parameter in the order the parameters
// are passed to adam_step. Empty until the first step.
template <typename Scalar>
struct OptimizerState {
  AdamConfig config;
  std::vector<Matrix<Scalar>> first_moment;
  std::vector<Matrix<Scalar>> second_moment;
  long step = 0;
};

// One Adam update with decoupled weight decay:
//   p <- p - lr * wd * p, then the bias-corrected Adam step on p.
template <typename Scalar>
void adam_step(std::span<Matrix<Scalar>* const> params, std::span<const Matrix<Scalar>* const> grads,
               OptimizerState<Scalar>& state);

}  // namespace dmwa
