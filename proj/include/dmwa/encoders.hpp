#pragma once

#include <concepts>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "dmwa/autodiff.hpp"
#include "dmwa/rng.hpp"
#include "dmwa/tensor.hpp"

namespace dmwa {

enum class Modality { sketch, image, text };

const char* modality_name(Modality m);

struct EncoderConfig {
  int grid = 32;
  int patch = 4;
  int channels = 1;
  int width = 64;
  int layers = 4;
  int heads = 4;
  int mlp_ratio = 4;

  // Throws ConfigError when grid % patch != 0 or width % heads != 0.
  void validate() const;
  int patches_per_side() const { return grid / patch; }
  int local_tokens() const { return patches_per_side() * patches_per_side(); }
  // Local tokens plus the global token.
  int sequence_length() const { return local_tokens() + 1; }
  int patch_dim() const { return patch * patch * channels; }
  int sample_dim() const { return grid * grid * channels; }

  bool operator==(const EncoderConfig&) const = default;
};

// Parameter containers are templated on the slot type: Matrix<Scalar> for
// storage, Var<Scalar> once bound to a tape.

// Projections applied as x W (row-major tokens); no biases.
template <typename T>
struct AttentionWeights {
  T wq, wk, wv, wo;
};

template <typename T>
struct EncoderLayer {
  T ln1_gain, ln1_bias;
  AttentionWeights<T> attention;
  T ln2_gain, ln2_bias;
  T mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

template <typename T>
struct EncoderWeights {
  T patch_weight;  // [patch_dim x width], no bias
  T positions;     // [local_tokens x width]
  T global_token;  // [1 x width]
  std::vector<EncoderLayer<T>> layers;
};

// Stand-in for the frozen language-model text path: one trainable row per
// class, projected to the token width.
template <typename T>
struct TextWeights {
  T table;            // [num_classes x text_dim]
  T projection;       // [text_dim x width]
  T projection_bias;  // [1 x width]
};

template <typename W, template <typename> class Tmpl>
struct is_instance_of : std::false_type {};
template <typename T, template <typename> class Tmpl>
struct is_instance_of<Tmpl<T>, Tmpl> : std::true_type {};

template <typename W, template <typename> class Tmpl>
concept InstanceOf = is_instance_of<std::remove_cvref_t<W>, Tmpl>::value;

template <typename W, typename F>
  requires InstanceOf<W, AttentionWeights>
void for_each_parameter(W&& w, const std::string& prefix, F&& f) {
  f(prefix + "wq", w.wq);
  f(prefix + "wk", w.wk);
  f(prefix + "wv", w.wv);
  f(prefix + "wo", w.wo);
}

template <typename W, typename F>
  requires InstanceOf<W, EncoderLayer>
void for_each_parameter(W&& w, const std::string& prefix, F&& f) {
  f(prefix + "ln1.gain", w.ln1_gain);
  f(prefix + "ln1.bias", w.ln1_bias);
  for_each_parameter(w.attention, prefix + "attn.", f);
  f(prefix + "ln2.gain", w.ln2_gain);
  f(prefix + "ln2.bias", w.ln2_bias);
  f(prefix + "mlp.w1", w.mlp_w1);
  f(prefix + "mlp.b1", w.mlp_b1);
  f(prefix + "mlp.w2", w.mlp_w2);
  f(prefix + "mlp.b2", w.mlp_b2);
}

template <typename W, typename F>
  requires InstanceOf<W, EncoderWeights>
void for_each_parameter(W&& w, const std::string& prefix, F&& f) {
  f(prefix + "patch_weight", w.patch_weight);
  f(prefix + "positions", w.positions);
  f(prefix + "global_token", w.global_token);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    for_each_parameter(w.layers[l], prefix + "layer" + std::to_string(l) + ".", f);
  }
}

template <typename W, typename F>
  requires InstanceOf<W, TextWeights>
void for_each_parameter(W&& w, const std::string& prefix, F&& f) {
  f(prefix + "table", w.table);
  f(prefix + "projection", w.projection);
  f(prefix + "projection_bias", w.projection_bias);
}

template <typename Scalar>
AttentionWeights<Matrix<Scalar>> init_attention(int width, Rng& rng);

template <typename Scalar>
EncoderWeights<Matrix<Scalar>> init_encoder(const EncoderConfig& config, Rng& rng);

template <typename Scalar>
TextWeights<Matrix<Scalar>> init_text(int num_classes, int text_dim, int width, Rng& rng);

// One sample's encoder output.
template <typename Scalar>
struct TokenSet {
  RowVector<Scalar> global;  // [width]
  Matrix<Scalar> local;      // [local_tokens x width]
  Modality modality = Modality::sketch;
};

// Samples are rows of `inputs` [batch x grid*grid*channels], each laid out
// as (y, x, channel). Output rows are the patches of sample 0 (row-major
// over the patch grid), then sample 1, ...; each patch flattened as
// (dy, dx, channel).
template <typename Scalar>
Matrix<Scalar> extract_patches(const Matrix<Scalar>& inputs, const EncoderConfig& config);

// Learned linear map of flattened patches plus positional offsets.
// Returns [batch*local_tokens x width].
template <typename Scalar>
Var<Scalar> patch_embed(Tape<Scalar>& tape, const Matrix<Scalar>& inputs, const EncoderConfig& config,
                        const EncoderWeights<Var<Scalar>>& weights);

// Multi-head attention with queries from `query_tokens` and keys/values
// from `kv_tokens`, followed by the output projection. Rows are grouped in
// per-sample blocks of `query_block` and `kv_block` rows. No residual.
template <typename Scalar>
Var<Scalar> cross_attention(const Var<Scalar>& query_tokens, const Var<Scalar>& kv_tokens,
                            const AttentionWeights<Var<Scalar>>& weights, int heads,
                            Index query_block, Index kv_block,
                            std::vector<Matrix<Scalar>>* probabilities = nullptr);

template <typename Scalar>
Var<Scalar> self_attention(const Var<Scalar>& tokens, const AttentionWeights<Var<Scalar>>& weights,
                           int heads, Index block,
                           std::vector<Matrix<Scalar>>* probabilities = nullptr);

// Pre-norm transformer block: z += MSA(LN(z)); z += MLP(LN(z)).
template <typename Scalar>
Var<Scalar> encoder_block(const Var<Scalar>& tokens, const EncoderLayer<Var<Scalar>>& layer, int heads,
                          Index block);

// Patch embedding, global-token prepend, then all layers. Returns
// [batch*sequence_length x width]; row 0 of each block is the global token.
template <typename Scalar>
Var<Scalar> encode(Tape<Scalar>& tape, const Matrix<Scalar>& inputs, const EncoderConfig& config,
                   const EncoderWeights<Var<Scalar>>& weights);

// Row indices of the global tokens in an encoded batch.
std::vector<Index> global_rows(Index batch, Index sequence_length);

// Splits an encoded batch value into per-sample token sets.
template <typename Scalar>
std::vector<TokenSet<Scalar>> split_tokens(const Matrix<Scalar>& encoded, Index sequence_length,
                                           Modality modality);

// Projected text features [ids x width] for the given class ids. When
// `seen` is non-empty, every id must be marked seen there.
template <typename Scalar>
Var<Scalar> text_features(const TextWeights<Var<Scalar>>& weights, std::span<const int> class_ids,
                          const std::vector<bool>& seen = {});

}  // namespace dmwa
