#include "dmwa/optimizer.hpp"

#include <cmath>

namespace dmwa {

template <typename Scalar>
void adam_step(std::span<Matrix<Scalar>* const> params, std::span<const Matrix<Scalar>* const> grads,
               OptimizerState<Scalar>& state) {
  if (params.size() != grads.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
  }
  if (state.first_moment.empty()) {
    for (const auto* p : params) {
      state.first_moment.push_back(Matrix<Scalar>::Zero(p->rows(), p->cols()));
      state.second_moment.push_back(Matrix<Scalar>::Zero(p->rows(), p->cols()));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state tracks " +
                         std::to_string(state.first_moment.size()) + " parameters, got " +
                         std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = *params[i];
    const auto& g = *grads[i];
    if (p.rows() != g.rows() || p.cols() != g.cols() || state.first_moment[i].rows() != p.rows() ||
        state.first_moment[i].cols() != p.cols()) {
      throw DimensionError("adam_step: parameter " + std::to_string(i) + " " + shape_string(p) +
                           " vs gradient " + shape_string(g) + " / moments " +
                           shape_string(state.first_moment[i]));
    }
  }

  ++state.step;
  const auto& c = state.config;
  const Scalar lr = static_cast<Scalar>(c.learning_rate);
  const Scalar b1 = static_cast<Scalar>(c.beta1);
  const Scalar b2 = static_cast<Scalar>(c.beta2);
  const Scalar eps = static_cast<Scalar>(c.epsilon);
  const Scalar decay = static_cast<Scalar>(1.0 - c.learning_rate * c.weight_decay);
  const Scalar correction1 = static_cast<Scalar>(1.0 - std::pow(c.beta1, state.step));
  const Scalar correction2 = static_cast<Scalar>(1.0 - std::pow(c.beta2, state.step));

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    const auto& g = *grads[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (c.weight_decay != 0.0) p *= decay;
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / correction1) / ((v.array() / correction2).sqrt() + eps);
  }
}

template void adam_step<float>(std::span<Matrix<float>* const>, std::span<const Matrix<float>* const>,
                               OptimizerState<float>&);
template void adam_step<double>(std::span<Matrix<double>* const>,
                                std::span<const Matrix<double>* const>, OptimizerState<double>&);

}  // namespace dmwa
