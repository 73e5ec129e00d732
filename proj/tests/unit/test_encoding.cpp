#include <gtest/gtest.h>

#include "spikegraph/encoding.hpp"
#include "spikegraph/errors.hpp"
#include "spikegraph/ops.hpp"
#include "support.hpp"

namespace spikegraph {
namespace {

using test::random_tensor;

SscConfig small_config() {
  SscConfig cfg;
  cfg.spike_steps = 3;
  cfg.hidden_channels = 5;
  return cfg;
}

TEST(SscExpand, JointMajorReplicatedOverSteps) {
  Rng rng(1);
  const std::size_t C = 3, T = 4, V = 6, S = 3;
  const Tensor x = random_tensor({C, T, V}, rng);
  const Tensor y = ssc_expand(x, S);
  ASSERT_EQ(y.shape(), (Shape{S, C, V, T}));
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t v = 0; v < V; ++v)
        for (std::size_t t = 0; t < T; ++t)
          EXPECT_EQ(y[((s * C + c) * V + v) * T + t], x[(c * T + t) * V + v]);
  EXPECT_THROW(ssc_expand(x, 0), InvalidInputError);
  EXPECT_THROW(ssc_expand(Tensor::zeros({3, 4}), 2), DimensionError);
}

TEST(SscEncoder, ConvolutionMatchesDirectSum) {
  Rng rng(2);
  const SscConfig cfg = small_config();
  SscEncoder enc(cfg, {}, rng);
  const std::size_t B = 2, C = 3, T = 5, V = 4, D = cfg.hidden_channels;
  const Tensor x = random_tensor({B, C, T, V}, rng);
  const Tensor y = enc.conv().forward(ops::permute(x, {0, 1, 3, 2}));
  ASSERT_EQ(y.shape(), (Shape{B, D, V, T}));
  const Tensor& w = enc.conv().weight;
  const Tensor& bias = enc.conv().bias;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t v = 0; v < V; ++v)
        for (std::size_t t = 0; t < T; ++t) {
          double acc = bias.defined() ? bias[d] : 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (int dv = -1; dv <= 1; ++dv)
              for (int dt = -1; dt <= 1; ++dt) {
                const long vv = static_cast<long>(v) + dv, tt = static_cast<long>(t) + dt;
                if (vv < 0 || tt < 0 || vv >= static_cast<long>(V) || tt >= static_cast<long>(T)) continue;
                acc += static_cast<double>(w[((d * C + c) * 3 + (dv + 1)) * 3 + (dt + 1)]) *
                       x[((b * C + c) * T + static_cast<std::size_t>(tt)) * V + static_cast<std::size_t>(vv)];
              }
          EXPECT_NEAR(y[((b * D + d) * V + v) * T + t], acc, 1e-5);
        }
}

TEST(SscEncoder, ForwardEqualsExpandConvNormSpike) {
  Rng rng(3);
  const SscConfig cfg = small_config();
  SscEncoder enc(cfg, {}, rng);
  SscEncoder ref_enc = enc;
  ref_enc.bn() = BatchNorm(cfg.hidden_channels);
  const std::size_t B = 2, T = 6, V = 5, S = cfg.spike_steps, D = cfg.hidden_channels;
  const Tensor x = random_tensor({B, 3, T, V}, rng, -2, 2);
  const Tensor y = enc.forward(x, true);
  ASSERT_EQ(y.shape(), (Shape{S, B, D, V, T}));

  // Expand each sample on its own, convolve the [S, C, V, T] planes, stack to [S, B, D, V, T].
  std::vector<Tensor> per_sample;
  for (std::size_t b = 0; b < B; ++b) {
    const Tensor xb = ops::reshape(ops::slice(x, 0, b, b + 1), {3, T, V});
    per_sample.push_back(ops::reshape(ref_enc.conv().forward(ssc_expand(xb, S)), {S, 1, D, V, T}));
  }
  const Tensor pre = ref_enc.bn().forward(ops::concat(per_sample, 1), true, 2);
  EXPECT_TRUE(test::all_equal(y, sn_layer(pre, {})));
  EXPECT_TRUE(test::all_close(enc.bn().stats.mean, ref_enc.bn().stats.mean, 1e-6));
}

TEST(SscEncoder, OutputIsBinaryAndStepsAccumulate) {
  Rng rng(4);
  SscEncoder enc(small_config(), {}, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor y = enc.forward(random_tensor({3, 3, 7, 6}, rng, -3, 3), trial % 2 == 0);
    EXPECT_TRUE(test::values_within(y, {0, 1}));
  }
}

TEST(SscEncoder, SingleSequenceForm) {
  Rng rng(5);
  SscEncoder enc(small_config(), {}, rng);
  const Tensor x = random_tensor({3, 8, 5}, rng);
  const SpikeTensor s = ssc_encode(x, enc);
  EXPECT_EQ(s.shape(), (Shape{3, 5, 5, 8}));
  EXPECT_DOUBLE_EQ(s.firing_rate, firing_rate(s.values));
  const Tensor batched = enc.forward(ops::reshape(x, {1, 3, 8, 5}), false);
  EXPECT_TRUE(test::all_equal(s.values, ops::reshape(batched, {3, 5, 5, 8})));
}

TEST(SscEncoder, RejectsBadShapesAndConfig) {
  Rng rng(6);
  SscEncoder enc(small_config(), {}, rng);
  EXPECT_THROW(enc.forward(Tensor::zeros({2, 4, 5, 5}), false), DimensionError);
  EXPECT_THROW(enc.forward(Tensor::zeros({4, 5, 5}), false), DimensionError);
  EXPECT_THROW(ssc_encode(Tensor::zeros({1, 3, 4, 5}), enc), DimensionError);
  SscConfig bad;
  bad.spike_steps = 0;
  EXPECT_THROW(bad.validate(), InvalidInputError);
  bad = {};
  bad.hidden_channels = 0;
  EXPECT_THROW(SscEncoder(bad, {}, rng), InvalidInputError);
}

TEST(SscEncoder, ParametersAndBuffersAreNamed) {
  Rng rng(7);
  SscEncoder enc(small_config(), {}, rng);
  std::vector<std::string> names;
  for (const auto& p : enc.parameters()) names.push_back(p.name);
  EXPECT_NE(std::find(names.begin(), names.end(), "conv.weight"), names.end());
  EXPECT_NE(std::find(names.begin(), names.end(), "bn.gamma"), names.end());
  EXPECT_FALSE(enc.buffers().empty());
}

}  // namespace
}  // namespace spikegraph
