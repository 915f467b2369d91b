#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "dmwa/config.hpp"
#include "dmwa/data_synth.hpp"
#include "dmwa/loss.hpp"
#include "dmwa/model.hpp"
#include "dmwa/optimizer.hpp"
#include "dmwa/retrieval.hpp"
#include "dmwa/weighting.hpp"

namespace dmwa {

struct StepSettings {
  WeightMode mode = WeightMode::attenuate;
  WeightLevels levels;
  LossConfig loss;
};

StepSettings step_settings(const RunConfig& config);

// Replaces the sampled quadruplets and the computed weight list, so that a
// loss can be re-evaluated at perturbed parameters with everything the
// weighting decided held fixed.
template <typename Scalar>
struct FrozenBatch {
  Vector<Scalar> fin_list;
  QuadrupletBatch quads;
};

template <typename Scalar>
struct StepForward {
  QuadrupletLoss<Scalar> loss;
  WeightComputation<Scalar> weights;
  QuadrupletBatch quads;
};

// Encodes both modalities, weighs the batch and builds the weighted loss
// on `tape`. `bound` must come from bind() on the same tape.
template <typename Scalar>
StepForward<Scalar> forward_step(Tape<Scalar>& tape, const Model<Scalar>& model,
                                 const ModelWeights<Var<Scalar>>& bound, const Matrix<Scalar>& sketches,
                                 const Matrix<Scalar>& images, std::span<const int> labels,
                                 const StepSettings& settings, Rng& rng,
                                 const FrozenBatch<Scalar>* frozen = nullptr);

// Shuffled slot order for one epoch, cut into full batches; the remainder
// is dropped.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t samples, int batch, std::uint64_t seed, int epoch);

struct StepRecord {
  int epoch = 0;
  long step = 0;
  double loss_o = 0, loss_d = 0, loss_total = 0;
  double fin_mean = 0, fin_min = 0, fin_max = 0;
};

template <typename Scalar>
struct TrainingRun {
  Model<Scalar> model;
  OptimizerState<Scalar> optimizer;
  std::vector<StepRecord> steps;
  int skipped_batches = 0;
};

struct TrainOptions {
  // When set: train.csv, run.cfg, checkpoints/epoch-N and a `latest` link.
  std::filesystem::path out_dir;
  std::ostream* log = nullptr;
};

template <typename Scalar>
TrainingRun<Scalar> train(const RunConfig& config, const Dataset& dataset, const TrainOptions& options = {});

// Same as above, starting from the given model (and optimizer state).
template <typename Scalar>
TrainingRun<Scalar> train_from(TrainingRun<Scalar> start, const RunConfig& config, const Dataset& dataset,
                               const TrainOptions& options = {});

void write_training_csv(std::ostream& out, std::span<const StepRecord> steps);

struct WeightRecord {
  int epoch = 0;
  long step = 0;
  std::size_t sample_id = 0;
  int class_id = 0;
  bool corrupted = false;  // not written to the CSV
  double local_score = 0, global_score = 0;
  double local_weight = 1, global_weight = 1, final_weight = 1;
};

// Forward passes only, over `epochs` shuffled passes of the training split.
template <typename Scalar>
std::vector<WeightRecord> dump_weights(const Model<Scalar>& model, const Dataset& dataset, const RunConfig& config,
                                       int epochs = 1);

void write_weights_csv(std::ostream& out, std::span<const WeightRecord> records);

// Zero-shot retrieval of held-out gallery images from held-out sketches.
template <typename Scalar>
RetrievalReport evaluate(const Model<Scalar>& model, const Dataset& dataset, const RunConfig& config);

struct AblationResult {
  Ablation ablation;
  RetrievalReport report;
};

// Trains and evaluates every ablation row; each run gets its own
// subdirectory of `out_dir` when it is set.
template <typename Scalar>
std::vector<AblationResult> run_ablations(const RunConfig& config, const Dataset& dataset,
                                          const std::filesystem::path& out_dir = {}, std::ostream* log = nullptr);

void write_ablation_csv(std::ostream& out, std::span<const AblationResult> results, std::span<const int> k_list);

}  // namespace dmwa
