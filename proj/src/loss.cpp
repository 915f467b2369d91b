#include "dmwa/loss.hpp"

#include <algorithm>
#include <cmath>

namespace dmwa {

void LossConfig::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ConfigError("loss margins must be >= 0");
}

QuadrupletBatch sample_quadruplets(std::span<const int> labels, Rng& rng) {
  const std::size_t n = labels.size();
  QuadrupletBatch q;
  q.anchor_sketch.resize(n);
  q.positive_image.resize(n);
  q.negative_image.resize(n);
  q.negative_sketch.resize(n);
  std::vector<Index> others;
  for (std::size_t i = 0; i < n; ++i) {
    others.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (labels[j] != labels[i]) others.push_back(static_cast<Index>(j));
    }
    if (others.empty()) throw NoNegativeError("sample_quadruplets: batch holds a single class");
    q.anchor_sketch[i] = static_cast<Index>(i);
    q.positive_image[i] = static_cast<Index>(i);
    q.negative_image[i] = others[rng.index(others.size())];
    q.negative_sketch[i] = others[rng.index(others.size())];
  }
  return q;
}

namespace {

double distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("triplet: vector widths " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

double triplet_original(std::span<const double> anchor, std::span<const double> positive,
                        std::span<const double> negative, double alpha) {
  return std::max(distance(anchor, positive) - distance(anchor, negative) + alpha, 0.0);
}

double triplet_domain(std::span<const double> anchor_sketch, std::span<const double> positive_image,
                      std::span<const double> negative_sketch, double beta) {
  return triplet_original(anchor_sketch, positive_image, negative_sketch, beta);
}

template <typename Scalar>
QuadrupletLoss<Scalar> weighted_quadruplet_loss(const Var<Scalar>& sketch_globals, const Var<Scalar>& image_globals,
                                                const QuadrupletBatch& quads, const Vector<Scalar>& fin_list,
                                                const LossConfig& config) {
  config.validate();
  const auto batch = static_cast<Index>(quads.size());
  if (fin_list.size() != batch) {
    throw DimensionError("weighted_quadruplet_loss: fin_list of " + std::to_string(fin_list.size()) +
                         " for a batch of " + std::to_string(batch));
  }
  auto& tape = *sketch_globals.tape();
  const auto anchors = gather_rows(sketch_globals, quads.anchor_sketch);
  const auto positive_distance = row_distance(anchors, gather_rows(image_globals, quads.positive_image));

  auto hinge = [&](const Var<Scalar>& negatives, double margin) {
    const auto negative_distance = row_distance(anchors, negatives);
    const auto shifted = tape.constant(Matrix<Scalar>::Constant(batch, 1, static_cast<Scalar>(margin)));
    return relu(add(sub(positive_distance, negative_distance), shifted));
  };

  QuadrupletLoss<Scalar> out;
  out.original = hinge(gather_rows(image_globals, quads.negative_image), config.alpha);
  out.domain = config.triplet_only ? tape.constant(Matrix<Scalar>::Zero(batch, 1))
                                   : hinge(gather_rows(sketch_globals, quads.negative_sketch), config.beta);
  out.original_sum = out.original.value().sum();
  out.domain_sum = out.domain.value().sum();

  Vector<Scalar> weights = fin_list;
  if (config.reduction == Reduction::mean && batch > 0) weights /= static_cast<Scalar>(batch);
  out.total = weighted_sum(add(out.original, out.domain), weights);
  return out;
}

template QuadrupletLoss<float> weighted_quadruplet_loss(const Var<float>&, const Var<float>&, const QuadrupletBatch&,
                                                        const Vector<float>&, const LossConfig&);
template QuadrupletLoss<double> weighted_quadruplet_loss(const Var<double>&, const Var<double>&,
                                                         const QuadrupletBatch&, const Vector<double>&,
                                                         const LossConfig&);

}  // namespace dmwa
