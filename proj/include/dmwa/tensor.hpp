#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "dmwa/error.hpp"

namespace dmwa {

using Index = Eigen::Index;

// Row-major so that a token matrix [tokens x width] stores each token
// contiguously.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kNormEps = 1e-12;
inline constexpr double kKlClamp = 1e-8;
inline constexpr double kDistributionTolerance = 1e-4;

template <typename Derived>
std::string shape_string(const Eigen::EigenBase<Derived>& m) {
  std::ostringstream os;
  os << '[' << m.rows() << 'x' << m.cols() << ']';
  return os.str();
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

// Softmax along `axis` (0: down each column, 1: along each row), computed
// with max subtraction.
template <typename Derived>
Matrix<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& x, int axis) {
  using Scalar = typename Derived::Scalar;
  if (axis != 0 && axis != 1) {
    throw DimensionError("softmax axis must be 0 or 1, got " + std::to_string(axis));
  }
  Matrix<Scalar> out(x.rows(), x.cols());
  if (axis == 1) {
    for (Index r = 0; r < x.rows(); ++r) {
      const Scalar peak = x.row(r).maxCoeff();
      out.row(r) = (x.row(r).array() - peak).exp().matrix();
      out.row(r) /= out.row(r).sum();
    }
  } else {
    for (Index c = 0; c < x.cols(); ++c) {
      const Scalar peak = x.col(c).maxCoeff();
      out.col(c) = (x.col(c).array() - peak).exp().matrix();
      out.col(c) /= out.col(c).sum();
    }
  }
  return out;
}

// Softmax of a column vector.
template <typename Scalar>
Vector<Scalar> softmax(const Vector<Scalar>& x) {
  return softmax(x, 0).col(0);
}

// Per-row normalization to zero mean and unit variance (biased variance,
// epsilon inside the square root) followed by the affine map.
template <typename Derived, typename GainDerived, typename BiasDerived>
Matrix<typename Derived::Scalar> layer_norm(const Eigen::MatrixBase<Derived>& x,
                                            const Eigen::MatrixBase<GainDerived>& gain,
                                            const Eigen::MatrixBase<BiasDerived>& bias) {
  using Scalar = typename Derived::Scalar;
  if (gain.size() != x.cols() || bias.size() != x.cols()) {
    throw DimensionError("layer_norm: input " + shape_string(x) + " vs gain " +
                         shape_string(gain) + " / bias " + shape_string(bias));
  }
  Matrix<Scalar> out(x.rows(), x.cols());
  const auto n = static_cast<Scalar>(x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar mean = x.row(r).sum() / n;
    const auto centered = (x.row(r).array() - mean).eval();
    const Scalar var = centered.square().sum() / n;
    const Scalar inv = Scalar(1) / std::sqrt(var + static_cast<Scalar>(kLayerNormEps));
    out.row(r) = (centered * inv * gain.reshaped().transpose().array() +
                  bias.reshaped().transpose().array())
                     .matrix();
  }
  return out;
}

// Unit-norm copy of `v`; inputs with norm <= 1e-12 map to the zero vector.
template <typename Derived>
Vector<typename Derived::Scalar> l2_normalize(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  const Scalar norm = v.norm();
  if (!(norm > static_cast<Scalar>(kNormEps))) {
    return Vector<Scalar>::Zero(v.size());
  }
  return v.reshaped() / norm;
}

namespace detail {

template <typename Derived>
void check_distribution(const Eigen::MatrixBase<Derived>& p, const char* name) {
  using Scalar = typename Derived::Scalar;
  if (p.size() == 0) throw NormalizationError(std::string("kl_divergence: empty ") + name);
  if (!p.allFinite() || p.minCoeff() < Scalar(0)) {
    throw NormalizationError(std::string("kl_divergence: ") + name +
                             " has negative or non-finite entries");
  }
  const double total = static_cast<double>(p.sum());
  if (std::abs(total - 1.0) > kDistributionTolerance) {
    throw NormalizationError(std::string("kl_divergence: ") + name + " sums to " +
                             std::to_string(total) + ", expected 1");
  }
}

}  // namespace detail

// Per-element contributions p_i (ln p_i - ln max(q_i, 1e-8)); terms with
// p_i == 0 contribute 0.
template <typename DerivedP, typename DerivedQ>
Vector<typename DerivedP::Scalar> kl_contributions(const Eigen::MatrixBase<DerivedP>& p,
                                                   const Eigen::MatrixBase<DerivedQ>& q) {
  using Scalar = typename DerivedP::Scalar;
  if (p.size() != q.size()) {
    throw DimensionError("kl_divergence: p " + shape_string(p) + " vs q " + shape_string(q));
  }
  detail::check_distribution(p, "p");
  detail::check_distribution(q, "q");
  const auto pv = p.reshaped();
  const auto qv = q.reshaped();
  Vector<Scalar> out(p.size());
  for (Index i = 0; i < p.size(); ++i) {
    const Scalar pi = pv(i);
    if (pi == Scalar(0)) {
      out(i) = Scalar(0);
      continue;
    }
    const Scalar qi = std::max(qv(i), static_cast<Scalar>(kKlClamp));
    out(i) = pi * (std::log(pi) - std::log(qi));
  }
  return out;
}

template <typename DerivedP, typename DerivedQ>
typename DerivedP::Scalar kl_divergence(const Eigen::MatrixBase<DerivedP>& p,
                                        const Eigen::MatrixBase<DerivedQ>& q) {
  return kl_contributions(p, q).sum();
}

template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine_similarity(const Eigen::MatrixBase<DerivedA>& a,
                                            const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  if (a.size() != b.size()) {
    throw DimensionError("cosine_similarity: " + shape_string(a) + " vs " + shape_string(b));
  }
  const Scalar na = a.norm();
  const Scalar nb = b.norm();
  if (!(na > static_cast<Scalar>(kNormEps)) || !(nb > static_cast<Scalar>(kNormEps))) {
    throw DegenerateVectorError("cosine_similarity: zero-norm input");
  }
  const Scalar c = a.reshaped().dot(b.reshaped()) / (na * nb);
  return std::clamp(c, Scalar(-1), Scalar(1));
}

// Exact (erf) GELU and its derivative.
template <typename Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x * static_cast<Scalar>(M_SQRT1_2)));
}

template <typename Scalar>
Scalar gelu_derivative(Scalar x) {
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x * static_cast<Scalar>(M_SQRT1_2)));
  const Scalar pdf = std::exp(Scalar(-0.5) * x * x) * static_cast<Scalar>(0.3989422804014327);
  return cdf + x * pdf;
}

}  // namespace dmwa
