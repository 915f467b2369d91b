#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dmwa/encoders.hpp"
#include "dmwa/optimizer.hpp"

namespace dmwa {

struct ModelConfig {
  EncoderConfig encoder;
  int text_dim = 64;
  int num_classes = 16;
  // seen[c] is true for training classes; text rows of other classes are
  // never read while training.
  std::vector<bool> seen;
  bool shared_encoders = false;
  // Heads of the cross-attention layer used for weighting and inference.
  int cross_heads = 4;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct ModelWeights {
  EncoderWeights<T> sketch;
  EncoderWeights<T> image;  // unused when encoders are shared
  AttentionWeights<T> cross;
  TextWeights<T> text;
  bool shared = false;

  const EncoderWeights<T>& encoder(Modality m) const {
    return (m == Modality::image && !shared) ? image : sketch;
  }
};

template <typename W, typename F>
  requires InstanceOf<W, ModelWeights>
void for_each_parameter(W&& w, const std::string& prefix, F&& f) {
  for_each_parameter(w.sketch, prefix + (w.shared ? "encoder." : "sketch."), f);
  if (!w.shared) for_each_parameter(w.image, prefix + "image.", f);
  for_each_parameter(w.cross, prefix + "cross.", f);
  for_each_parameter(w.text, prefix + "text.", f);
}

template <typename Scalar>
struct Model {
  ModelConfig config;
  ModelWeights<Matrix<Scalar>> weights;

  static Model initialize(const ModelConfig& config, std::uint64_t seed);

  std::vector<std::string> parameter_names() const;
  std::vector<Matrix<Scalar>*> parameters();
  std::size_t parameter_count() const;
};

// Tape leaves for every parameter; `track` selects variable vs constant.
template <typename Scalar>
ModelWeights<Var<Scalar>> bind(Tape<Scalar>& tape, const ModelWeights<Matrix<Scalar>>& weights, bool track);

// Gradients of the bound leaves, in for_each_parameter order.
template <typename Scalar>
std::vector<Matrix<Scalar>> collect_gradients(const Tape<Scalar>& tape,
                                              const ModelWeights<Var<Scalar>>& bound);

// Checkpoint directory: one flat tensor file per parameter plus a
// `manifest` listing config values, tensor names and shapes. Optimizer
// moments are stored alongside when given.
template <typename Scalar>
void save_checkpoint(const std::filesystem::path& dir, const Model<Scalar>& model,
                     const OptimizerState<Scalar>* optimizer = nullptr);

template <typename Scalar>
Model<Scalar> load_checkpoint(const std::filesystem::path& dir,
                              OptimizerState<Scalar>* optimizer = nullptr);

// Reads only the config from a checkpoint manifest.
ModelConfig read_checkpoint_config(const std::filesystem::path& dir);

// Human-readable list of differing fields; empty when equal.
std::string config_diff(const ModelConfig& expected, const ModelConfig& actual);

std::map<std::string, std::string> model_config_entries(const ModelConfig& config);
ModelConfig model_config_from_entries(const std::map<std::string, std::string>& entries);

}  // namespace dmwa
