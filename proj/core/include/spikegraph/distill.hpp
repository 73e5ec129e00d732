#pragma once

#include <array>
#include <vector>

#include "spikegraph/fusion.hpp"
#include "spikegraph/network.hpp"
#include "spikegraph/neurons.hpp"
#include "spikegraph/nn.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

struct LossWeights {
  std::array<double, kNumModalities> alpha{0.25, 0.25, 0.25, 0.25};  // fusion order
  double beta1 = 0.5;
  double beta2 = 0.5;
  double gamma1 = 1.0;
  double gamma2 = 1.0;
  double gamma3 = 1.0;

  void validate() const;
};

/// y_mm = sum_i alpha_i y_i, inputs in fusion order (bone, joint, bone
/// motion, joint motion).
Tensor aggregate_soft_labels(const Tensor& y_b, const Tensor& y_j, const Tensor& y_bm,
                             const Tensor& y_jm, const LossWeights& w);

/// Batch mean of the per-sample L2 norm of y - y_mm.
Tensor sdk_loss(const Tensor& y, const Tensor& y_mm);

/// Batch mean of 1 - cos over samples, each flattened across all non-batch
/// axes. Inputs are [S, B, ...] (batch on axis 1). A zero-norm operand
/// contributes 1 with no gradient.
Tensor fkd_loss(const Tensor& t_s, const Tensor& t_stu);

/// gamma1 * task + gamma2 * sdk + gamma3 * (beta1 * fkd1 + beta2 * fkd2).
Tensor total_loss(const Tensor& l_task, const Tensor& l_sdk, const Tensor& l_fkd1,
                  const Tensor& l_fkd2, const LossWeights& w);

/// Bridges real-valued teacher features to student spike form: channel
/// concatenation of the four modalities, depthwise 3x3 + pointwise mix + BN,
/// replication over S, then a 1x1 translation conv + BN + spiking neuron.
class FtmModule {
 public:
  FtmModule() = default;
  FtmModule(std::size_t teacher_channels, std::size_t student_channels, std::size_t spike_steps,
            const LifConfig& lif, Rng& rng);

  /// taps: four [B, Ct, V, T'] -> spikes [S, B, Cs, V, T'].
  Tensor forward(const std::array<Tensor, kNumModalities>& taps, bool training);

  NamedTensors parameters() const;
  NamedTensors buffers() const;
  std::size_t student_channels() const { return translate_.weight.dim(0); }

 private:
  std::size_t spike_steps_ = 1;
  LifConfig lif_;
  Conv2d depthwise_;
  Conv2d pointwise_;
  BatchNorm bn_fuse_;
  Conv2d translate_;
  BatchNorm bn_translate_;
};

Tensor ftm_translate(const std::array<Tensor, kNumModalities>& taps, FtmModule& ftm, bool training);

/// One translation module per distillation tap.
struct FtmPair {
  std::array<FtmModule, 2> modules;

  FtmPair() = default;
  FtmPair(const ModelConfig& cfg, Rng& rng);
  NamedTensors parameters() const;
  NamedTensors buffers() const;
};

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
