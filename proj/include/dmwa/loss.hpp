#pragma once

#include <span>
#include <string>
#include <vector>

#include "dmwa/autodiff.hpp"
#include "dmwa/rng.hpp"

namespace dmwa {

enum class Reduction { sum, mean };

struct LossConfig {
  double alpha = 0.3;  // margin of the sketch-anchor / image-negative term
  double beta = 0.3;   // margin of the sketch-anchor / sketch-negative term
  Reduction reduction = Reduction::sum;
  // Drop the sketch-negative term, leaving the plain triplet loss.
  bool triplet_only = false;

  void validate() const;
};

// Per batch slot i: anchor sketch i, positive image i, and negatives drawn
// from slots of a different class.
struct QuadrupletBatch {
  std::vector<Index> anchor_sketch;
  std::vector<Index> positive_image;
  std::vector<Index> negative_image;
  std::vector<Index> negative_sketch;

  std::size_t size() const { return anchor_sketch.size(); }
};

// Uniform in-batch negatives. Throws NoNegativeError when the batch holds a
// single class.
QuadrupletBatch sample_quadruplets(std::span<const int> labels, Rng& rng);

// [ |a - p| - |a - n| + margin ]_+ on plain vectors.
double triplet_original(std::span<const double> anchor, std::span<const double> positive,
                        std::span<const double> negative, double alpha);
double triplet_domain(std::span<const double> anchor_sketch, std::span<const double> positive_image,
                      std::span<const double> negative_sketch, double beta);

template <typename Scalar>
struct QuadrupletLoss {
  Var<Scalar> total;         // 1x1, weighted and reduced
  Var<Scalar> original;      // [B x 1] per-slot image-negative hinge
  Var<Scalar> domain;        // [B x 1] per-slot sketch-negative hinge (zeros when triplet_only)
  Scalar original_sum = 0;   // unweighted Σ over slots
  Scalar domain_sum = 0;
};

// Σ_i fin_list(i) * (L_o(i) + L_d(i)) over the global tokens
// [B x width] of each modality. `fin_list` is a constant.
template <typename Scalar>
QuadrupletLoss<Scalar> weighted_quadruplet_loss(const Var<Scalar>& sketch_globals, const Var<Scalar>& image_globals,
                                                const QuadrupletBatch& quads, const Vector<Scalar>& fin_list,
                                                const LossConfig& config);

}  // namespace dmwa
