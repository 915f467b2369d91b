#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dmwa/keyvalue.hpp"
#include "dmwa/tensor.hpp"

namespace dmwa {

struct DatasetConfig {
  int num_classes = 16;
  int seen_classes = 12;  // classes [0, seen_classes) train, the rest are held out
  int samples_per_class_train = 40;
  int gallery_per_class_test = 25;
  int queries_per_class_test = 10;
  int grid = 32;
  double corruption_rate = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const DatasetConfig&) const = default;
};

using Grid = Matrix<float>;  // [grid x grid], single channel

struct SamplePair {
  Grid sketch;
  Grid image;
  int class_id = 0;
  // The image was swapped for one of another class; never shown to the model.
  bool corrupted = false;

  bool operator==(const SamplePair&) const = default;
};

struct Sample {
  Grid pixels;
  int class_id = 0;

  bool operator==(const Sample&) const = default;
};

struct Dataset {
  DatasetConfig config;
  std::vector<SamplePair> train;
  std::vector<Sample> queries;  // sketches of held-out classes
  std::vector<Sample> gallery;  // images of held-out classes

  std::vector<bool> seen_mask() const;
  bool operator==(const Dataset&) const = default;
};

// Filled union of 2-4 random polygons.
Grid class_prototype(int grid, std::uint64_t seed, int class_id);

Dataset generate(const DatasetConfig& config);

// Directory with `manifest` (config echo and one record per sample) and
// flat tensor files `train.bin` [N,2,grid,grid], `queries.bin` and
// `gallery.bin` [N,grid,grid].
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

KeyValues dataset_config_entries(const DatasetConfig& config);
DatasetConfig dataset_config_from_entries(const KeyValues& kv);

// Rows of flattened grids, ready for the encoders.
template <typename Scalar>
Matrix<Scalar> stack_grids(std::span<const Grid* const> grids);

template <typename Scalar>
Matrix<Scalar> stack_samples(std::span<const Sample> samples);

}  // namespace dmwa
