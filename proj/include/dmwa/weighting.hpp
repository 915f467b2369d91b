#pragma once

#include <span>
#include <string>
#include <vector>

#include "dmwa/encoders.hpp"
#include "dmwa/tensor.hpp"

namespace dmwa {

// How a score above the batch threshold becomes a weight.
//   literal:   e^s - 1
//   attenuate: e^(t - s), continuous at t and in (0, 1]
// Scores at or below the threshold always get weight 1.
enum class WeightMode { literal, attenuate };

const char* weight_mode_name(WeightMode mode);
WeightMode parse_weight_mode(const std::string& name);

// Which alignment levels contribute to the final list; a disabled level
// contributes a list of ones.
struct WeightLevels {
  bool local = true;
  bool global = true;
};

template <typename Scalar>
struct WeightComputation {
  Vector<Scalar> local_scores;
  Vector<Scalar> global_scores;
  Scalar local_threshold = 0;
  Scalar global_threshold = 0;
  Vector<Scalar> local_list;
  Vector<Scalar> global_list;
  Vector<Scalar> fin_list;
  WeightMode mode = WeightMode::attenuate;
};

// Per-token divergence of one sample: each local token is turned into a
// distribution over the feature axis by softmax, then
// KL(image token || sketch token) is summed over features. Returns [m].
template <typename Scalar>
Vector<Scalar> token_divergences(const Matrix<Scalar>& sketch_local, const Matrix<Scalar>& image_local);

// First stack: L2-normalize the per-token divergences over tokens, then sum
// over tokens.
template <typename Scalar>
Scalar aggregate_token_divergences(const Vector<Scalar>& divergences);

// Local alignment score per sample, in [0, 1]; the batch vector is
// L2-normalized, larger means the two modalities diverge more locally.
// Throws DegenerateBatchError for a batch of one.
template <typename Scalar>
Vector<Scalar> local_alignment_scores(std::span<const Matrix<Scalar>> sketch_locals,
                                      std::span<const Matrix<Scalar>> image_locals);

// Batch-axis distributions used by the global score: row-softmax of the
// [B x B] text-vs-modality cosine matrix, summed over the text axis and
// divided by B.
template <typename Scalar>
Vector<Scalar> text_bridged_distribution(const Matrix<Scalar>& text_globals,
                                         const Matrix<Scalar>& modality_globals);

// |KL contributions| of p (image side) against q (sketch side), L2-normalized.
template <typename Scalar>
Vector<Scalar> scores_from_distributions(const Vector<Scalar>& image_side, const Vector<Scalar>& sketch_side);

// Global alignment score per sample, in [0, 1]. Rows of the three inputs
// are batch-aligned.
template <typename Scalar>
Vector<Scalar> global_alignment_scores(const Matrix<Scalar>& text_globals, const Matrix<Scalar>& sketch_globals,
                                       const Matrix<Scalar>& image_globals);

template <typename Scalar>
Scalar batch_threshold(const Vector<Scalar>& scores);

template <typename Scalar>
Vector<Scalar> apply_threshold(const Vector<Scalar>& scores, Scalar threshold, WeightMode mode);

// Elementwise product of the two lists.
template <typename Scalar>
Vector<Scalar> final_weights(const Vector<Scalar>& local_list, const Vector<Scalar>& global_list);

// Thresholds each score vector at its batch mean and multiplies the lists.
// An empty score vector marks a disabled level (list of ones).
template <typename Scalar>
WeightComputation<Scalar> compute_weights(const Vector<Scalar>& local_scores, const Vector<Scalar>& global_scores,
                                          Index batch, WeightMode mode);

// Tokens of a batch after the residual cross-attention block, in both
// directions: sketch = sketch + CA(sketch -> image), image = image +
// CA(image -> sketch). Inputs and outputs are [batch*sequence x width].
template <typename Scalar>
struct CrossAttendedBatch {
  Matrix<Scalar> sketch;
  Matrix<Scalar> image;
};

template <typename Scalar>
CrossAttendedBatch<Scalar> cross_attend_pairs(const Matrix<Scalar>& sketch_tokens, const Matrix<Scalar>& image_tokens,
                                              const AttentionWeights<Matrix<Scalar>>& cross, int heads,
                                              Index sequence_length);

// Full weighting pass over one batch of encoded tokens. `text_globals` is
// only read when the global level is enabled. Runs on values only; nothing
// here is connected to a gradient tape.
template <typename Scalar>
WeightComputation<Scalar> weigh_batch(const Matrix<Scalar>& sketch_tokens, const Matrix<Scalar>& image_tokens,
                                      const Matrix<Scalar>& text_globals,
                                      const AttentionWeights<Matrix<Scalar>>& cross, int heads,
                                      Index sequence_length, WeightMode mode, WeightLevels levels);

}  // namespace dmwa
