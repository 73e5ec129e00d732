#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spikegraph/distill.hpp"
#include "spikegraph/network.hpp"
#include "spikegraph/optim.hpp"
#include "spikegraph/skeleton.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

/// Preprocessed modality tensors for a whole split, [N, 3, T, V] each.
struct PreparedData {
  ModalityBundle streams;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  ModalityBatch gather(std::span<const std::size_t> indices) const;
};

PreparedData prepare(std::span<const SkeletonSequence> sequences, std::size_t target_frames,
                     const SkeletonTopology& topo);

struct Split {
  std::vector<SkeletonSequence> train;
  std::vector<SkeletonSequence> test;
};

/// Every `holdout_every`-th sample of each class goes to the test split.
Split split_holdout(const std::vector<SkeletonSequence>& all, std::size_t holdout_every);

struct KdMode {
  bool soft = false;
  bool feature = false;

  /// "none", "soft", "feature", "soft,feature" (either order).
  static KdMode parse(const std::string& text);
  std::string str() const;
  bool any() const { return soft || feature; }
};

struct TrainOptions {
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  SgdOptions sgd;
  std::size_t lr_step = 50;
  double lr_decay = 0.1;
  /// Stop once an epoch's running train accuracy reaches this value.
  double early_stop_train_acc = 2.0;
  KdMode kd;
  LossWeights loss;
};

struct StepMetrics {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0;
  double loss = 0;
  double l_task = 0;
  double l_sdk = 0;
  double l_fkd = 0;
  double acc = 0;
  std::vector<std::pair<std::string, double>> firing_rates;
  std::array<double, kNumModalities> fusion_weights{};
};

struct EpochSummary {
  std::size_t epoch = 0;
  double loss = 0;
  double train_acc = 0;
  std::size_t steps = 0;
};

struct EvalReport {
  double accuracy = 0;
  std::size_t count = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

std::size_t argmax_row(const Tensor& logits, std::size_t row);

EvalReport evaluate(MkSgnModel& model, const PreparedData& data, std::size_t batch_size);

/// Mean of the four per-modality teacher predictions.
EvalReport evaluate_teacher(TeacherModel& teacher, const PreparedData& data, std::size_t batch_size);

struct TeacherTrainOptions {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  SgdOptions sgd;
  double early_stop_train_acc = 0.98;
};

/// Supervised training of the four streams on the summed cross-entropy.
void train_teacher(TeacherModel& teacher, const PreparedData& data, const TeacherTrainOptions& opt,
                   std::uint64_t seed);

/// Re-estimates every BN running statistic as the mean of its batch
/// statistics over one shuffled pass with the weights frozen. Short high-lr
/// runs otherwise end with running stats that lag the final weights.
void recalibrate_bn(MkSgnModel& model, const PreparedData& data, std::size_t batch_size, std::uint64_t seed);
void recalibrate_bn(TeacherModel& teacher, const PreparedData& data, std::size_t batch_size, std::uint64_t seed);

class Trainer {
 public:
  /// `teacher` may be null when opt.kd is "none"; it must already be trained.
  Trainer(MkSgnModel& model, TeacherModel* teacher, const TrainOptions& opt, std::uint64_t seed);

  StepMetrics train_step(const ModalityBatch& batch);
  EpochSummary run_epoch(const PreparedData& train);
  /// Runs epochs until opt.epochs or early stop, then recalibrates BN running
  /// statistics; returns the last epoch summary.
  EpochSummary fit(const PreparedData& train);

  std::function<void(const StepMetrics&)> on_step;
  std::function<void(const EpochSummary&)> on_epoch;

  std::size_t epoch() const { return epoch_; }
  std::size_t step() const { return step_; }
  bool stopped() const { return stopped_; }

  /// Every tensor needed to resume bit-identically, keyed by name.
  NamedTensors state() const;
  /// Restores from `state()`-named tensors; throws FormatError on mismatch.
  void load_state(const NamedTensors& tensors);

  FtmPair& ftm() { return *ftm_; }

 private:
  MkSgnModel& model_;
  TeacherModel* teacher_;
  TrainOptions opt_;
  std::uint64_t seed_;
  std::unique_ptr<FtmPair> ftm_;
  std::unique_ptr<Sgd> sgd_;
  std::size_t epoch_ = 0;
  std::size_t step_ = 0;
  bool stopped_ = false;
  Tensor meta_;  // epoch, step, smf counter, stopped
};

/// Layer names and activity rates (nonzero fraction) of one forward pass.
std::vector<std::pair<std::string, double>> layer_rates(const StudentOutput& out);

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
