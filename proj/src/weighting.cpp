#include "dmwa/weighting.hpp"

#include <cmath>

namespace dmwa {

const char* weight_mode_name(WeightMode mode) {
  return mode == WeightMode::literal ? "literal" : "attenuate";
}

WeightMode parse_weight_mode(const std::string& name) {
  if (name == "literal") return WeightMode::literal;
  if (name == "attenuate") return WeightMode::attenuate;
  throw ConfigError("unknown weight mode `" + name + "` (expected literal or attenuate)");
}

template <typename Scalar>
Vector<Scalar> token_divergences(const Matrix<Scalar>& sketch_local, const Matrix<Scalar>& image_local) {
  if (sketch_local.rows() != image_local.rows() || sketch_local.cols() != image_local.cols()) {
    throw DimensionError("local tokens: sketch " + shape_string(sketch_local) + " vs image " +
                         shape_string(image_local));
  }
  const Matrix<Scalar> sketch_dist = softmax(sketch_local, 1);
  const Matrix<Scalar> image_dist = softmax(image_local, 1);
  Vector<Scalar> out(sketch_local.rows());
  for (Index t = 0; t < out.size(); ++t) {
    out(t) = kl_divergence(image_dist.row(t), sketch_dist.row(t));
  }
  return out;
}

template <typename Scalar>
Scalar aggregate_token_divergences(const Vector<Scalar>& divergences) {
  return l2_normalize(divergences).sum();
}

template <typename Scalar>
Vector<Scalar> local_alignment_scores(std::span<const Matrix<Scalar>> sketch_locals,
                                      std::span<const Matrix<Scalar>> image_locals) {
  if (sketch_locals.size() != image_locals.size()) {
    throw DimensionError("local_alignment_scores: " + std::to_string(sketch_locals.size()) + " sketch vs " +
                         std::to_string(image_locals.size()) + " image samples");
  }
  if (sketch_locals.size() < 2) {
    throw DegenerateBatchError("local_alignment_scores: batch of " + std::to_string(sketch_locals.size()) +
                               " cannot be normalized across samples");
  }
  Vector<Scalar> raw(static_cast<Index>(sketch_locals.size()));
  for (std::size_t b = 0; b < sketch_locals.size(); ++b) {
    raw(static_cast<Index>(b)) = aggregate_token_divergences(token_divergences(sketch_locals[b], image_locals[b]));
  }
  return l2_normalize(raw);
}

template <typename Scalar>
Vector<Scalar> text_bridged_distribution(const Matrix<Scalar>& text_globals, const Matrix<Scalar>& modality_globals) {
  if (text_globals.rows() != modality_globals.rows() || text_globals.cols() != modality_globals.cols()) {
    throw DimensionError("global tokens: text " + shape_string(text_globals) + " vs modality " +
                         shape_string(modality_globals));
  }
  const Index batch = text_globals.rows();
  Matrix<Scalar> cos(batch, batch);
  for (Index j = 0; j < batch; ++j) {
    for (Index k = 0; k < batch; ++k) cos(j, k) = cosine_similarity(text_globals.row(j), modality_globals.row(k));
  }
  const Matrix<Scalar> rows = softmax(cos, 1);
  return rows.colwise().sum().transpose() / static_cast<Scalar>(batch);
}

template <typename Scalar>
Vector<Scalar> scores_from_distributions(const Vector<Scalar>& image_side, const Vector<Scalar>& sketch_side) {
  return l2_normalize(kl_contributions(image_side, sketch_side).cwiseAbs());
}

template <typename Scalar>
Vector<Scalar> global_alignment_scores(const Matrix<Scalar>& text_globals, const Matrix<Scalar>& sketch_globals,
                                       const Matrix<Scalar>& image_globals) {
  if (sketch_globals.rows() != image_globals.rows() || sketch_globals.cols() != image_globals.cols()) {
    throw DimensionError("global tokens: sketch " + shape_string(sketch_globals) + " vs image " +
                         shape_string(image_globals));
  }
  return scores_from_distributions<Scalar>(text_bridged_distribution(text_globals, image_globals),
                                           text_bridged_distribution(text_globals, sketch_globals));
}

template <typename Scalar>
Scalar batch_threshold(const Vector<Scalar>& scores) {
  if (scores.size() == 0) throw EmptyInputError("batch_threshold: empty score vector");
  return scores.mean();
}

template <typename Scalar>
Vector<Scalar> apply_threshold(const Vector<Scalar>& scores, Scalar threshold, WeightMode mode) {
  Vector<Scalar> out(scores.size());
  for (Index i = 0; i < scores.size(); ++i) {
    const Scalar s = scores(i);
    if (s <= threshold) {
      out(i) = Scalar(1);
    } else if (mode == WeightMode::literal) {
      out(i) = std::exp(s) - Scalar(1);
    } else {
      out(i) = std::exp(threshold - s);
    }
  }
  return out;
}

template <typename Scalar>
Vector<Scalar> final_weights(const Vector<Scalar>& local_list, const Vector<Scalar>& global_list) {
  if (local_list.size() != global_list.size()) {
    throw DimensionError("final_weights: local list of " + std::to_string(local_list.size()) +
                         " vs global list of " + std::to_string(global_list.size()));
  }
  return local_list.cwiseProduct(global_list);
}

template <typename Scalar>
WeightComputation<Scalar> compute_weights(const Vector<Scalar>& local_scores, const Vector<Scalar>& global_scores,
                                          Index batch, WeightMode mode) {
  WeightComputation<Scalar> w;
  w.mode = mode;
  w.local_scores = local_scores;
  w.global_scores = global_scores;
  w.local_list = Vector<Scalar>::Ones(batch);
  w.global_list = Vector<Scalar>::Ones(batch);
  if (local_scores.size() > 0) {
    w.local_threshold = batch_threshold(local_scores);
    w.local_list = apply_threshold(local_scores, w.local_threshold, mode);
  }
  if (global_scores.size() > 0) {
    w.global_threshold = batch_threshold(global_scores);
    w.global_list = apply_threshold(global_scores, w.global_threshold, mode);
  }
  w.fin_list = final_weights(w.local_list, w.global_list);
  return w;
}

template <typename Scalar>
CrossAttendedBatch<Scalar> cross_attend_pairs(const Matrix<Scalar>& sketch_tokens, const Matrix<Scalar>& image_tokens,
                                              const AttentionWeights<Matrix<Scalar>>& cross, int heads,
                                              Index sequence_length) {
  if (sketch_tokens.rows() != image_tokens.rows() || sketch_tokens.cols() != image_tokens.cols()) {
    throw DimensionError("cross_attend_pairs: sketch " + shape_string(sketch_tokens) + " vs image " +
                         shape_string(image_tokens));
  }
  Tape<Scalar> tape;
  const AttentionWeights<Var<Scalar>> w{tape.constant(cross.wq), tape.constant(cross.wk), tape.constant(cross.wv),
                                        tape.constant(cross.wo)};
  const auto s = tape.constant(sketch_tokens);
  const auto i = tape.constant(image_tokens);
  CrossAttendedBatch<Scalar> out;
  out.sketch = sketch_tokens + cross_attention(s, i, w, heads, sequence_length, sequence_length).value();
  out.image = image_tokens + cross_attention(i, s, w, heads, sequence_length, sequence_length).value();
  return out;
}

template <typename Scalar>
WeightComputation<Scalar> weigh_batch(const Matrix<Scalar>& sketch_tokens, const Matrix<Scalar>& image_tokens,
                                      const Matrix<Scalar>& text_globals,
                                      const AttentionWeights<Matrix<Scalar>>& cross, int heads,
                                      Index sequence_length, WeightMode mode, WeightLevels levels) {
  const Index batch = sketch_tokens.rows() / sequence_length;
  if (!levels.local && !levels.global) {
    return compute_weights<Scalar>(Vector<Scalar>(), Vector<Scalar>(), batch, mode);
  }
  const auto attended = cross_attend_pairs(sketch_tokens, image_tokens, cross, heads, sequence_length);
  Vector<Scalar> local, global;
  if (levels.local) {
    std::vector<Matrix<Scalar>> sketch_locals, image_locals;
    for (Index b = 0; b < batch; ++b) {
      sketch_locals.push_back(attended.sketch.middleRows(b * sequence_length + 1, sequence_length - 1));
      image_locals.push_back(attended.image.middleRows(b * sequence_length + 1, sequence_length - 1));
    }
    local = local_alignment_scores<Scalar>(sketch_locals, image_locals);
  }
  if (levels.global) {
    Matrix<Scalar> sketch_globals(batch, sketch_tokens.cols());
    Matrix<Scalar> image_globals(batch, sketch_tokens.cols());
    for (Index b = 0; b < batch; ++b) {
      sketch_globals.row(b) = attended.sketch.row(b * sequence_length);
      image_globals.row(b) = attended.image.row(b * sequence_length);
    }
    global = global_alignment_scores(text_globals, sketch_globals, image_globals);
  }
  return compute_weights(local, global, batch, mode);
}

#define DMWA_INSTANTIATE(S)                                                                                 \
  template Vector<S> token_divergences(const Matrix<S>&, const Matrix<S>&);                                 \
  template S aggregate_token_divergences(const Vector<S>&);                                                 \
  template Vector<S> local_alignment_scores(std::span<const Matrix<S>>, std::span<const Matrix<S>>);        \
  template Vector<S> text_bridged_distribution(const Matrix<S>&, const Matrix<S>&);                         \
  template Vector<S> scores_from_distributions(const Vector<S>&, const Vector<S>&);                         \
  template Vector<S> global_alignment_scores(const Matrix<S>&, const Matrix<S>&, const Matrix<S>&);         \
  template S batch_threshold(const Vector<S>&);                                                             \
  template Vector<S> apply_threshold(const Vector<S>&, S, WeightMode);                                      \
  template Vector<S> final_weights(const Vector<S>&, const Vector<S>&);                                     \
  template WeightComputation<S> compute_weights(const Vector<S>&, const Vector<S>&, Index, WeightMode);     \
  template CrossAttendedBatch<S> cross_attend_pairs(const Matrix<S>&, const Matrix<S>&,                     \
                                                    const AttentionWeights<Matrix<S>>&, int, Index);        \
  template WeightComputation<S> weigh_batch(const Matrix<S>&, const Matrix<S>&, const Matrix<S>&,           \
                                            const AttentionWeights<Matrix<S>>&, int, Index, WeightMode,     \
                                            WeightLevels);

DMWA_INSTANTIATE(float)
DMWA_INSTANTIATE(double)

#undef DMWA_INSTANTIATE

}  // namespace dmwa
