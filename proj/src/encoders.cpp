#include "dmwa/encoders.hpp"

#include <cmath>

namespace dmwa {

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::sketch:
      return "sketch";
    case Modality::image:
      return "image";
    case Modality::text:
      return "text";
  }
  return "unknown";
}

void EncoderConfig::validate() const {
  if (grid <= 0 || patch <= 0 || channels <= 0 || width <= 0 || heads <= 0 || layers < 0 ||
      mlp_ratio <= 0) {
    throw ConfigError("encoder config: extents must be positive");
  }
  if (grid % patch != 0) {
    throw ConfigError("encoder config: grid " + std::to_string(grid) + " not divisible by patch " +
                      std::to_string(patch));
  }
  if (width % heads != 0) {
    throw ConfigError("encoder config: width " + std::to_string(width) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
}

namespace {

template <typename Scalar>
Matrix<Scalar> gaussian(Index rows, Index cols, double stddev, Rng& rng) {
  Matrix<Scalar> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(stddev * rng.normal());
  return m;
}

constexpr double kInitStd = 0.02;
// Offsets comparable to patch content, so token position is visible from the start.
constexpr double kPositionStd = 0.3;

}  // namespace

template <typename Scalar>
AttentionWeights<Matrix<Scalar>> init_attention(int width, Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(width));
  AttentionWeights<Matrix<Scalar>> w;
  w.wq = gaussian<Scalar>(width, width, s, rng);
  w.wk = gaussian<Scalar>(width, width, s, rng);
  w.wv = gaussian<Scalar>(width, width, s, rng);
  w.wo = gaussian<Scalar>(width, width, s, rng);
  return w;
}

template <typename Scalar>
EncoderWeights<Matrix<Scalar>> init_encoder(const EncoderConfig& config, Rng& rng) {
  config.validate();
  const int d = config.width;
  const int hidden = d * config.mlp_ratio;
  EncoderWeights<Matrix<Scalar>> w;
  w.patch_weight = gaussian<Scalar>(config.patch_dim(), d, 1.0 / std::sqrt(config.patch_dim()), rng);
  w.positions = gaussian<Scalar>(config.local_tokens(), d, kPositionStd, rng);
  w.global_token = gaussian<Scalar>(1, d, kInitStd, rng);
  for (int l = 0; l < config.layers; ++l) {
    EncoderLayer<Matrix<Scalar>> layer;
    layer.ln1_gain = Matrix<Scalar>::Ones(1, d);
    layer.ln1_bias = Matrix<Scalar>::Zero(1, d);
    layer.attention = init_attention<Scalar>(d, rng);
    // Residual branches start small so the stack begins near identity.
    layer.attention.wo *= static_cast<Scalar>(1.0 / std::sqrt(2.0 * std::max(1, config.layers)));
    layer.ln2_gain = Matrix<Scalar>::Ones(1, d);
    layer.ln2_bias = Matrix<Scalar>::Zero(1, d);
    layer.mlp_w1 = gaussian<Scalar>(d, hidden, 1.0 / std::sqrt(d), rng);
    layer.mlp_b1 = Matrix<Scalar>::Zero(1, hidden);
    layer.mlp_w2 = gaussian<Scalar>(hidden, d,
                                    1.0 / std::sqrt(hidden * 2.0 * std::max(1, config.layers)), rng);
    layer.mlp_b2 = Matrix<Scalar>::Zero(1, d);
    w.layers.push_back(std::move(layer));
  }
  return w;
}

template <typename Scalar>
TextWeights<Matrix<Scalar>> init_text(int num_classes, int text_dim, int width, Rng& rng) {
  TextWeights<Matrix<Scalar>> w;
  w.table = gaussian<Scalar>(num_classes, text_dim, 1.0, rng);
  w.projection = gaussian<Scalar>(text_dim, width, 1.0 / std::sqrt(text_dim), rng);
  w.projection_bias = Matrix<Scalar>::Zero(1, width);
  return w;
}

template <typename Scalar>
Matrix<Scalar> extract_patches(const Matrix<Scalar>& inputs, const EncoderConfig& config) {
  config.validate();
  if (inputs.cols() != config.sample_dim()) {
    throw DimensionError("extract_patches: samples have " + std::to_string(inputs.cols()) +
                         " values, config expects " + std::to_string(config.sample_dim()));
  }
  const int side = config.patches_per_side();
  const int p = config.patch;
  const int c = config.channels;
  const int g = config.grid;
  const Index n = config.local_tokens();
  Matrix<Scalar> out(inputs.rows() * n, config.patch_dim());
  for (Index b = 0; b < inputs.rows(); ++b) {
    const Scalar* sample = inputs.row(b).data();
    for (int py = 0; py < side; ++py) {
      for (int px = 0; px < side; ++px) {
        Scalar* dst = out.row(b * n + py * side + px).data();
        for (int dy = 0; dy < p; ++dy) {
          const Scalar* src = sample + ((py * p + dy) * g + px * p) * c;
          std::copy(src, src + p * c, dst + dy * p * c);
        }
      }
    }
  }
  return out;
}

template <typename Scalar>
Var<Scalar> patch_embed(Tape<Scalar>& tape, const Matrix<Scalar>& inputs, const EncoderConfig& config,
                        const EncoderWeights<Var<Scalar>>& weights) {
  const Var<Scalar> patches = tape.constant(extract_patches(inputs, config));
  return add_tiled(matmul(patches, weights.patch_weight), weights.positions);
}

template <typename Scalar>
Var<Scalar> cross_attention(const Var<Scalar>& query_tokens, const Var<Scalar>& kv_tokens,
                            const AttentionWeights<Var<Scalar>>& weights, int heads,
                            Index query_block, Index kv_block,
                            std::vector<Matrix<Scalar>>* probabilities) {
  if (query_tokens.cols() != kv_tokens.cols()) {
    throw DimensionError("cross_attention: query width " + std::to_string(query_tokens.cols()) +
                         " vs key/value width " + std::to_string(kv_tokens.cols()));
  }
  const auto q = matmul(query_tokens, weights.wq);
  const auto k = matmul(kv_tokens, weights.wk);
  const auto v = matmul(kv_tokens, weights.wv);
  const auto mixed = multihead_attention(q, k, v, heads, query_block, kv_block, probabilities);
  return matmul(mixed, weights.wo);
}

template <typename Scalar>
Var<Scalar> self_attention(const Var<Scalar>& tokens, const AttentionWeights<Var<Scalar>>& weights,
                           int heads, Index block, std::vector<Matrix<Scalar>>* probabilities) {
  return cross_attention(tokens, tokens, weights, heads, block, block, probabilities);
}

template <typename Scalar>
Var<Scalar> encoder_block(const Var<Scalar>& tokens, const EncoderLayer<Var<Scalar>>& layer, int heads,
                          Index block) {
  const auto attended =
      self_attention(layer_norm(tokens, layer.ln1_gain, layer.ln1_bias), layer.attention, heads, block);
  const auto z = add(attended, tokens);
  const auto hidden = gelu(linear(layer_norm(z, layer.ln2_gain, layer.ln2_bias), layer.mlp_w1, layer.mlp_b1));
  return add(linear(hidden, layer.mlp_w2, layer.mlp_b2), z);
}

template <typename Scalar>
Var<Scalar> encode(Tape<Scalar>& tape, const Matrix<Scalar>& inputs, const EncoderConfig& config,
                   const EncoderWeights<Var<Scalar>>& weights) {
  config.validate();
  if (static_cast<int>(weights.layers.size()) != config.layers) {
    throw DimensionError("encode: weights have " + std::to_string(weights.layers.size()) +
                         " layers, config " + std::to_string(config.layers));
  }
  auto z = prepend_token(weights.global_token, patch_embed(tape, inputs, config, weights),
                         static_cast<Index>(config.local_tokens()));
  for (const auto& layer : weights.layers) z = encoder_block(z, layer, config.heads, config.sequence_length());
  return z;
}

std::vector<Index> global_rows(Index batch, Index sequence_length) {
  std::vector<Index> rows(static_cast<std::size_t>(batch));
  for (Index b = 0; b < batch; ++b) rows[static_cast<std::size_t>(b)] = b * sequence_length;
  return rows;
}

template <typename Scalar>
std::vector<TokenSet<Scalar>> split_tokens(const Matrix<Scalar>& encoded, Index sequence_length,
                                           Modality modality) {
  if (sequence_length < 1 || encoded.rows() % sequence_length != 0) {
    throw DimensionError("split_tokens: " + shape_string(encoded) + " not a multiple of " +
                         std::to_string(sequence_length) + " rows");
  }
  std::vector<TokenSet<Scalar>> out;
  for (Index b = 0; b < encoded.rows() / sequence_length; ++b) {
    TokenSet<Scalar> t;
    t.global = encoded.row(b * sequence_length);
    t.local = encoded.middleRows(b * sequence_length + 1, sequence_length - 1);
    t.modality = modality;
    out.push_back(std::move(t));
  }
  return out;
}

template <typename Scalar>
Var<Scalar> text_features(const TextWeights<Var<Scalar>>& weights, std::span<const int> class_ids,
                          const std::vector<bool>& seen) {
  std::vector<Index> rows;
  rows.reserve(class_ids.size());
  for (int id : class_ids) {
    if (id < 0 || id >= weights.table.rows()) {
      throw DimensionError("text_features: class " + std::to_string(id) + " outside table of " +
                           std::to_string(weights.table.rows()) + " classes");
    }
    if (!seen.empty() && !seen.at(static_cast<std::size_t>(id))) {
      throw SplitViolationError("text_features: class " + std::to_string(id) +
                                " is unseen and may not be read during training");
    }
    rows.push_back(id);
  }
  return linear(gather_rows(weights.table, rows), weights.projection, weights.projection_bias);
}

#define DMWA_INSTANTIATE(S)                                                                        \
  template AttentionWeights<Matrix<S>> init_attention<S>(int, Rng&);                               \
  template EncoderWeights<Matrix<S>> init_encoder<S>(const EncoderConfig&, Rng&);                  \
  template TextWeights<Matrix<S>> init_text<S>(int, int, int, Rng&);                              \
  template Matrix<S> extract_patches(const Matrix<S>&, const EncoderConfig&);                      \
  template Var<S> patch_embed(Tape<S>&, const Matrix<S>&, const EncoderConfig&,                    \
                              const EncoderWeights<Var<S>>&);                                      \
  template Var<S> cross_attention(const Var<S>&, const Var<S>&, const AttentionWeights<Var<S>>&,   \
                                  int, Index, Index, std::vector<Matrix<S>>*);                     \
  template Var<S> self_attention(const Var<S>&, const AttentionWeights<Var<S>>&, int, Index,       \
                                 std::vector<Matrix<S>>*);                                         \
  template Var<S> encoder_block(const Var<S>&, const EncoderLayer<Var<S>>&, int, Index);          \
  template Var<S> encode(Tape<S>&, const Matrix<S>&, const EncoderConfig&,                         \
                         const EncoderWeights<Var<S>>&);                                           \
  template std::vector<TokenSet<S>> split_tokens(const Matrix<S>&, Index, Modality);               \
  template Var<S> text_features(const TextWeights<Var<S>>&, std::span<const int>,                  \
                                const std::vector<bool>&);

DMWA_INSTANTIATE(float)
DMWA_INSTANTIATE(double)

#undef DMWA_INSTANTIATE

}  // namespace dmwa
