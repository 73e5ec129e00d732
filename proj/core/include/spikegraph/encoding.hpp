#pragma once

#include "spikegraph/neurons.hpp"
#include "spikegraph/nn.hpp"
#include "spikegraph/tensor.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

struct SscConfig {
  std::size_t spike_steps = 4;
  std::size_t hidden_channels = 64;
  std::size_t in_channels = 3;
  static constexpr std::size_t kernel_size = 3;

  void validate() const;
};

/// [C, T, V] -> [S, C, V, T]: frame-major to joint-major, replicated over S.
Tensor ssc_expand(const Tensor& x, std::size_t spike_steps);

/// Expand, 3x3 convolution over the V x T plane (padding 1), batch norm over
/// the hidden channels, then the spiking neuron.
class SscEncoder {
 public:
  SscEncoder() = default;
  SscEncoder(const SscConfig& cfg, const LifConfig& lif, Rng& rng);

  /// x[B, C, T, V] -> spikes [S, B, D, V, T].
  Tensor forward(const Tensor& x, bool training);

  const SscConfig& config() const { return cfg_; }
  Conv2d& conv() { return conv_; }
  BatchNorm& bn() { return bn_; }
  NamedTensors parameters() const;
  NamedTensors buffers() const;

 private:
  SscConfig cfg_;
  LifConfig lif_;
  Conv2d conv_;
  BatchNorm bn_;
};

/// Single-sequence form: x[C, T, V] -> spikes [S, D, V, T].
SpikeTensor ssc_encode(const Tensor& x, SscEncoder& encoder, bool training = false);

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
