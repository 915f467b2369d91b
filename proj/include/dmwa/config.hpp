#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmwa/data_synth.hpp"
#include "dmwa/encoders.hpp"
#include "dmwa/keyvalue.hpp"
#include "dmwa/loss.hpp"
#include "dmwa/model.hpp"
#include "dmwa/retrieval.hpp"
#include "dmwa/weighting.hpp"

namespace dmwa {

// Rows of the ablation table.
//   base     no weighting, triplet loss
//   no-g-q   local weights, triplet loss
//   no-g     local weights, quadruplet loss
//   full     local and global weights, quadruplet loss
enum class Ablation { base, no_g_q, no_g, full };

const char* ablation_name(Ablation a);
Ablation parse_ablation(const std::string& name);
inline constexpr Ablation kAllAblations[] = {Ablation::base, Ablation::no_g_q, Ablation::no_g, Ablation::full};

struct AblationSpec {
  WeightLevels levels;
  bool triplet_only = false;
};

AblationSpec ablation_spec(Ablation a);

struct RunConfig {
  DatasetConfig dataset;
  EncoderConfig encoder;
  int text_dim = 64;
  int cross_heads = 4;
  bool shared_encoders = false;
  LossConfig loss;
  WeightMode weight_mode = WeightMode::attenuate;
  Ablation ablation = Ablation::full;

  int batch = 16;
  int epochs = 30;
  double learning_rate = 5e-4;
  double weight_decay = 1e-2;
  std::uint64_t seed = 0;
  std::string out = "runs/default";

  ScoreMode score_mode = ScoreMode::cross;
  std::vector<int> k_list = {100, 200};
  bool f64 = false;
  bool strict_zero_shot = false;

  void validate() const;
  ModelConfig model_config() const;
  AdamConfig adam_config() const;
};

KeyValues run_config_entries(const RunConfig& config);
// Keys absent from `kv` keep their value from `base`; unknown keys raise
// ConfigError.
RunConfig run_config_from_entries(const KeyValues& kv, RunConfig base = {});

}  // namespace dmwa
