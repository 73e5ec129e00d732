#pragma once

#include "spikegraph/tensor.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

/// Leaky integrate-and-fire parameters. The discrete update is
///   h = decay_tau * v + I,  spike = [h >= v_threshold],
///   v' = v_reset where spiked, h elsewhere.
struct LifConfig {
  Real v_threshold = 1.0f;
  Real v_reset = 0.0f;
  Real decay_tau = 0.25f;
  Real surrogate_window_a = 1.0f;
  /// Replace the Heaviside forward by clamp((h - v_th)/a + 1/2, 0, 1). Its
  /// exact derivative is the rectangular surrogate, which makes spiking
  /// networks checkable against finite differences.
  bool relaxed = false;

  /// Throws InvalidInputError when an invariant is violated.
  void validate() const;
};

/// Forward value of the spike function at membrane potential h.
Real spike_value(Real h, const LifConfig& cfg);
/// Rectangular surrogate: 1/a inside |h - v_th| <= a/2, else 0.
Real surrogate_grad(Real h, const LifConfig& cfg);

/// Binary tensor with its cached firing rate.
struct SpikeTensor {
  Tensor values;
  double firing_rate = 0.0;

  static SpikeTensor wrap(Tensor t);
  const Shape& shape() const { return values.shape(); }
};

bool is_binary(const Tensor& t);
/// Fraction of ones; throws InvalidInputError for non-binary input.
double firing_rate(const Tensor& t);

/// Heaviside(x - v_th) with the surrogate as its tape rule.
Tensor spike_nonlinearity(const Tensor& x, const LifConfig& cfg);

struct LifStep {
  Tensor spikes;
  Tensor v_next;
};

/// Single update composed from differentiable primitives.
LifStep lif_step(const Tensor& input, const Tensor& v_prev, const LifConfig& cfg);

/// Unrolls the neuron over the leading spike-step axis of x[S, ...] starting
/// from v_reset, with surrogate backpropagation through time.
Tensor sn_layer(const Tensor& x, const LifConfig& cfg);

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
