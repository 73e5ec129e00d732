#include "spikegraph/encoding.hpp"

#include "spikegraph/errors.hpp"
#include "spikegraph/ops.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

void SscConfig::validate() const {
  if (spike_steps < 1) throw InvalidInputError("ssc.spike_steps must be >= 1");
  if (hidden_channels < 1) throw InvalidInputError("ssc.hidden_channels must be >= 1");
  if (in_channels < 1) throw InvalidInputError("ssc input channels must be >= 1");
}

Tensor ssc_expand(const Tensor& x, std::size_t spike_steps) {
  if (spike_steps < 1) throw InvalidInputError("ssc_expand: S must be >= 1");
  if (x.rank() != 3) throw DimensionError("ssc_expand expects [C, T, V], got " + to_string(x.shape()));
  const Tensor cvt = ops::permute(x, {0, 2, 1});
  const Shape one{1, cvt.dim(0), cvt.dim(1), cvt.dim(2)};
  return ops::broadcast_to(ops::reshape(cvt, one),
                           {spike_steps, cvt.dim(0), cvt.dim(1), cvt.dim(2)});
}

SscEncoder::SscEncoder(const SscConfig& cfg, const LifConfig& lif, Rng& rng)
    : cfg_(cfg), lif_(lif) {
  cfg_.validate();
  lif_.validate();
  ops::Conv2dOptions opt;
  opt.pad_h = opt.pad_w = 1;
  conv_ = Conv2d(cfg_.in_channels, cfg_.hidden_channels, SscConfig::kernel_size,
                 SscConfig::kernel_size, opt, rng);
  bn_ = BatchNorm(cfg_.hidden_channels);
}

Tensor SscEncoder::forward(const Tensor& x, bool training) {
  if (x.rank() != 4 || x.dim(1) != cfg_.in_channels)
    throw DimensionError("SSC expects [B, " + std::to_string(cfg_.in_channels) + ", T, V], got " +
                         to_string(x.shape()));
  const std::size_t B = x.dim(0), T = x.dim(2), V = x.dim(3), S = cfg_.spike_steps;
  const std::size_t D = cfg_.hidden_channels;
  // The expanded copies are identical across S, so the per-step convolution
  // is computed once and broadcast; batch norm sees the replicated tensor.
  const Tensor bcvt = ops::permute(x, {0, 1, 3, 2});
  const Tensor y = conv_.forward(bcvt);
  const Tensor rep = ops::broadcast_to(ops::reshape(y, {1, B, D, V, T}), {S, B, D, V, T});
  return sn_layer(bn_.forward(rep, training, 2), lif_);
}

NamedTensors SscEncoder::parameters() const {
  NamedTensors out;
  append_prefixed(out, "conv.", conv_.parameters());
  append_prefixed(out, "bn.", bn_.parameters());
  return out;
}

NamedTensors SscEncoder::buffers() const {
  NamedTensors out;
  append_prefixed(out, "bn.", bn_.buffers());
  return out;
}

SpikeTensor ssc_encode(const Tensor& x, SscEncoder& encoder, bool training) {
  if (x.rank() != 3) throw DimensionError("ssc_encode expects [C, T, V], got " + to_string(x.shape()));
  const Tensor y = encoder.forward(ops::reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)}), training);
  const std::size_t S = y.dim(0), D = y.dim(2), V = y.dim(3), T = y.dim(4);
  return SpikeTensor::wrap(ops::reshape(y, {S, D, V, T}));
}

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
