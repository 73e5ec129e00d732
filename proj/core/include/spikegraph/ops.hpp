#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "spikegraph/tensor.hpp"

// Differentiable operator vocabulary. Every function records a backward rule
// on the active tape when any input requires a gradient.
namespace spikegraph::inline SPIKEGRAPH_PRECISION::ops {

// Elementwise, numpy-style broadcasting for the binary forms.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, Real c);
Tensor add_scalar(const Tensor& x, Real c);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

/// sum_i c_i * x_i over same-shape tensors, accumulated in double.
Tensor weighted_sum(const std::vector<Tensor>& xs, const std::vector<double>& coeffs);

/// Elementwise x * mask / (1 - p) with a fresh Bernoulli(1 - p) mask; identity
/// when p == 0.
Tensor dropout(const Tensor& x, double p, std::uint64_t seed);

// Reductions.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor max(const Tensor& x);
Tensor sum(const Tensor& x, const std::vector<std::size_t>& axes, bool keepdim = false);
Tensor mean(const Tensor& x, const std::vector<std::size_t>& axes, bool keepdim = false);

// Shape manipulation.
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor broadcast_to(const Tensor& x, const Shape& shape);

/// Softmax / log-softmax over the last axis.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

/// a[..., m, k] x b[..., k, n]. Batch extents must match, or one operand is a
/// plain matrix that is broadcast over the other's batch.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Token attention over the joints of every (batch, frame) slice of
/// q, k, v[..., C, V, T]: out[:, :, t] = (Q_t K_t^T) V_t with Q_t = q[..., :, :, t]
/// read as [V, C]. Same shape as the inputs; no softmax.
Tensor token_attention(const Tensor& q, const Tensor& k, const Tensor& v);

struct Conv2dOptions {
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
  std::size_t groups = 1;
};

/// Cross-correlation of x[..., Cin, H, W] with w[Cout, Cin/groups, kh, kw];
/// leading axes are batch axes. `bias` may be undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Conv2dOptions& opt = {},
              const Tensor& bias = {});

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride,
                                   std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

struct RunningStats {
  Tensor mean;
  Tensor var;
};

constexpr Real kBnEps = 1e-5f;
constexpr Real kBnMomentum = 0.1f;

/// Per-channel normalization over `channel_axis` of x; every other axis is
/// reduced. Training mode uses batch statistics and updates `stats` with
/// momentum; eval mode uses `stats`.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, RunningStats& stats,
                  bool training, Real momentum = kBnMomentum, Real eps = kBnEps,
                  std::size_t channel_axis = 1);

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION::ops
