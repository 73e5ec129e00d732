#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "spikegraph/encoding.hpp"
#include "spikegraph/fusion.hpp"
#include "spikegraph/graph.hpp"
#include "spikegraph/neurons.hpp"
#include "spikegraph/nn.hpp"
#include "spikegraph/skeleton.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

struct LayerSpec {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t stride = 1;
  bool operator==(const LayerSpec&) const = default;
};

/// Reference plans at base width 64 as published: input/output channels and
/// temporal stride per layer. The student's first input is the raw 3-channel
/// skeleton before spike coding.
inline constexpr std::array<LayerSpec, 6> kReferenceStudentPlan = {{
    {3, 64, 1}, {64, 64, 1}, {64, 128, 2}, {128, 128, 1}, {128, 256, 2}, {256, 256, 1}}};
inline constexpr std::array<LayerSpec, 10> kReferenceTeacherPlan = {{
    {3, 64, 1}, {64, 64, 1}, {64, 64, 1}, {64, 64, 1}, {64, 128, 2},
    {128, 128, 1}, {128, 128, 1}, {128, 256, 2}, {256, 256, 1}, {256, 256, 1}}};

struct LayerPlan {
  std::vector<LayerSpec> layers;

  /// Reference student plan scaled to `width` (64 reproduces it); the first
  /// block reads the `input_channels`-wide spike coding output.
  static LayerPlan student(std::size_t input_channels, std::size_t width);
  static LayerPlan teacher(std::size_t width);
  /// Product of strides up to and including layer `index`.
  std::size_t downsampling(std::size_t index) const;
};

struct ModelConfig {
  std::size_t num_classes = 4;
  std::size_t num_joints = 25;
  std::size_t frames = 16;
  std::size_t width = 64;
  LifConfig lif;
  SscConfig ssc;  // hidden_channels is the width of the first block's input
  SmfConfig smf;
  bool use_smf = true;
  BlockConfig blocks;
  double dropout = 0.0;

  void validate() const;
  LayerPlan student_plan() const { return LayerPlan::student(ssc.hidden_channels, width); }
  LayerPlan teacher_plan() const { return LayerPlan::teacher(width); }
  /// Stable hash of every quantity that shapes the parameters.
  std::uint64_t plan_hash() const;
};

/// Indices (0-based) of the student blocks and teacher layers used for
/// feature distillation, in pairing order.
inline constexpr std::array<std::size_t, 2> kStudentTaps = {2, 4};
inline constexpr std::array<std::size_t, 2> kTeacherTaps = {4, 7};

class MkSgnModel {
 public:
  MkSgnModel() = default;
  MkSgnModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const AdjacencySet& adjacency() const { return adj_; }
  std::array<SscEncoder, kNumModalities>& encoders() { return ssc_; }
  SmfEstimator& smf() { return smf_; }
  const SmfEstimator& smf() const { return smf_; }
  std::vector<GraphBlock>& blocks() { return blocks_; }
  Linear& head() { return head_; }
  LifConfig head_lif() const { return cfg_.lif; }

  /// Task-optimized parameters (encoders, blocks, head); excludes SMIC.
  NamedTensors parameters() const;
  NamedTensors buffers() const;

 private:
  ModelConfig cfg_;
  AdjacencySet adj_;
  std::array<SscEncoder, kNumModalities> ssc_;
  SmfEstimator smf_;
  std::vector<GraphBlock> blocks_;
  Linear head_;
};

struct ForwardOptions {
  bool training = false;
  /// Take one SMIC ascent step on this batch (training only).
  bool train_smic = false;
  std::uint64_t dropout_seed = 0;
};

struct StudentOutput {
  Tensor logits;                                   // [B, U]
  std::array<Tensor, 2> taps;                      // block outputs at kStudentTaps
  std::array<Tensor, kNumModalities> modality_spikes;  // fusion order, [S, B, D, V, T]
  Tensor fused;
  MiMatrix mi;
  FusionWeights weights;
  std::vector<Tensor> block_outputs;
  Tensor head_spikes;  // [S, B, C, V, T']
};

/// Streams are [B, 3, T, V].
StudentOutput student_forward(const ModalityBundle& batch, MkSgnModel& model,
                              const ForwardOptions& opt = {});

/// Softmax cross-entropy averaged over the batch.
Tensor task_loss(const Tensor& logits, const std::vector<int>& labels);

/// Graph convolution followed by temporal convolution with real-valued
/// rectified activations.
struct GcTcLayer {
  LayerSpec spec;
  Conv2d gc;
  BatchNorm bn_gc;
  Conv2d tc;
  BatchNorm bn_tc;
  Conv2d res;  // defined when the shape changes
  BatchNorm bn_res;

  GcTcLayer() = default;
  GcTcLayer(const LayerSpec& spec, const BlockConfig& cfg, Rng& rng);
  /// x[B, C, V, T] -> [B, C', V, T / stride].
  Tensor forward(const Tensor& x, const AdjacencySet& adj, bool training);
  NamedTensors parameters() const;
  NamedTensors buffers() const;
};

struct TeacherStream {
  BatchNorm input_bn;
  std::vector<GcTcLayer> layers;
  Linear head;
  NamedTensors parameters() const;
  NamedTensors buffers() const;
};

class TeacherModel {
 public:
  TeacherModel() = default;
  TeacherModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const AdjacencySet& adjacency() const { return adj_; }
  std::array<TeacherStream, kNumModalities>& streams() { return streams_; }
  NamedTensors parameters() const;
  NamedTensors buffers() const;
  /// Stops gradient bookkeeping on every parameter.
  void freeze();

 private:
  ModelConfig cfg_;
  AdjacencySet adj_;
  std::array<TeacherStream, kNumModalities> streams_;
};

struct TeacherOutput {
  std::array<Tensor, kNumModalities> logits;  // fusion order, each [B, U]
  std::array<std::array<Tensor, kNumModalities>, 2> taps;  // [tap][modality] -> [B, C, V, T']
};

TeacherOutput teacher_forward(const ModalityBundle& batch, TeacherModel& teacher, bool training);

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
