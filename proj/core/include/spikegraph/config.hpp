#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "spikegraph/network.hpp"
#include "spikegraph/trainer.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

struct DatasetConfig {
  /// Directory of NTU `.skeleton` files; empty selects the synthetic set.
  std::string source_dir;
  SynthParams synth;
  std::size_t holdout_every = 5;
  std::string cache_dir;
};

struct PreprocessConfig {
  std::size_t target_frames = 16;
  std::size_t batch_size = 64;
};

struct ModelGroup {
  std::size_t width = 64;
  double dropout = 0.3;
  bool use_smf = true;
};

struct OptimizerConfig {
  SgdOptions sgd;
  std::size_t epochs = 60;
  std::size_t lr_step = 50;
  double lr_decay = 0.1;
  double early_stop_train_acc = 2.0;
};

struct KdConfig {
  KdMode mode{true, true};
  TeacherTrainOptions teacher;
};

/// Every knob of a run; each field has a default and the defaulted config
/// runs end to end on the synthetic set.
struct RunConfig {
  DatasetConfig dataset;
  PreprocessConfig preprocessing;
  LifConfig neuron;
  SscConfig ssc;
  SmfConfig smf;
  BlockConfig blocks;
  ModelGroup model;
  LossWeights loss;
  OptimizerConfig optimizer;
  KdConfig kd;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";

  /// Throws ConfigError on unknown keys, wrong types or invalid values.
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;

  std::size_t num_joints() const;
  std::size_t num_classes() const;
  ModelConfig model_config() const;
  TrainOptions train_options() const;
};

/// Reads a JSON config file; ConfigError on syntax or schema problems.
RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& cfg, const std::filesystem::path& path);

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
