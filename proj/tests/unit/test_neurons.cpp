#include <gtest/gtest.h>

#include <limits>

#include "spikegraph/errors.hpp"
#include "spikegraph/neurons.hpp"
#include "spikegraph/ops.hpp"
#include "spikegraph/tape.hpp"
#include "support.hpp"

namespace spikegraph {
namespace {

using test::random_tensor;
using test::values_within;

LifStep step(Real input, Real v_prev, const LifConfig& cfg = {}) {
  return lif_step(Tensor({1}, {input}), Tensor({1}, {v_prev}), cfg);
}

TEST(LifStep, RestingNeuronStaysSilent) {
  const LifStep s = step(0, 0);
  EXPECT_EQ(s.spikes[0], 0);
  EXPECT_EQ(s.v_next[0], 0);
}

TEST(LifStep, SuprathresholdInputFiresAndResets) {
  const LifStep s = step(1.5f, 0);
  EXPECT_EQ(s.spikes[0], 1);
  EXPECT_EQ(s.v_next[0], 0);
}

TEST(LifStep, SubthresholdDriveConvergesBelowThreshold) {
  // h_n = 0.25 h_{n-1} + 0.5 tends to 0.5 / 0.75 = 2/3.
  Real v = 0;
  const Real expected[] = {0.5f, 0.625f, 0.65625f};
  for (int n = 0; n < 50; ++n) {
    const LifStep s = step(0.5f, v);
    EXPECT_EQ(s.spikes[0], 0) << "step " << n;
    if (n < 3) EXPECT_FLOAT_EQ(s.v_next[0], expected[n]);
    v = s.v_next[0];
  }
  EXPECT_NEAR(v, 2.0 / 3.0, 1e-6);
}

TEST(LifStep, ResetPotentialIsExactAfterSpike) {
  LifConfig cfg;
  cfg.v_reset = -0.3f;
  Rng rng(3);
  const Tensor in = random_tensor({500}, rng, -1, 3), v = random_tensor({500}, rng, -1, 1);
  const LifStep s = lif_step(in, v, cfg);
  for (std::size_t i = 0; i < 500; ++i)
    if (s.spikes[i] == 1) EXPECT_EQ(s.v_next[i], cfg.v_reset);
}

TEST(LifStep, MonotoneInInput) {
  Rng rng(4);
  const Tensor v = random_tensor({300}, rng, -1, 1);
  const Tensor lo = random_tensor({300}, rng, -1, 2);
  Tensor hi = lo.clone();
  for (auto& x : hi.data()) x += static_cast<Real>(rng.uniform(0, 1));
  const LifStep a = lif_step(lo, v, {}), b = lif_step(hi, v, {});
  for (std::size_t i = 0; i < 300; ++i) EXPECT_LE(a.spikes[i], b.spikes[i]);
}

TEST(SpikeFunction, ThresholdIsInclusive) {
  const LifConfig cfg;
  EXPECT_EQ(spike_value(cfg.v_threshold, cfg), 1);
  EXPECT_EQ(spike_nonlinearity(Tensor({1}, {cfg.v_threshold}), cfg)[0], 1);
}

TEST(SpikeFunction, RectangularSurrogateWindow) {
  const LifConfig cfg;
  EXPECT_EQ(spike_value(0.4f, cfg), 0);
  EXPECT_EQ(surrogate_grad(0.4f, cfg), 0);
  EXPECT_EQ(spike_value(0.8f, cfg), 0);
  EXPECT_EQ(surrogate_grad(0.8f, cfg), 1);
  LifConfig wide = cfg;
  wide.surrogate_window_a = 2;
  EXPECT_EQ(surrogate_grad(0.4f, wide), 0.5f);
}

TEST(SpikeFunction, BackwardUsesSurrogate) {
  Tensor x = Tensor({3}, {0.4f, 0.8f, 1.3f}).set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  tape.backward(ops::sum(spike_nonlinearity(x, {})));
  EXPECT_EQ(x.grad()[0], 0);
  EXPECT_EQ(x.grad()[1], 1);
  EXPECT_EQ(x.grad()[2], 1);
}

TEST(SpikeFunction, RelaxedForwardIsClippedLinear) {
  LifConfig cfg;
  cfg.relaxed = true;
  EXPECT_FLOAT_EQ(spike_value(1.0f, cfg), 0.5f);
  EXPECT_FLOAT_EQ(spike_value(0.75f, cfg), 0.25f);
  EXPECT_EQ(spike_value(0.2f, cfg), 0);
  EXPECT_EQ(spike_value(1.8f, cfg), 1);
}

TEST(LifConfig, RejectsInvalidParameters) {
  LifConfig c;
  c.decay_tau = 1.5f;
  EXPECT_THROW(c.validate(), InvalidInputError);
  c = {};
  c.surrogate_window_a = 0;
  EXPECT_THROW(c.validate(), InvalidInputError);
  c = {};
  c.v_reset = 2;
  EXPECT_THROW(c.validate(), InvalidInputError);
}

TEST(SnLayer, ZeroInputNeverFires) {
  const Tensor y = sn_layer(Tensor::zeros({4, 3, 5}), {});
  EXPECT_TRUE(test::all_equal(y, Tensor::zeros({4, 3, 5})));
  EXPECT_EQ(firing_rate(y), 0.0);
}

TEST(SnLayer, ConstantDriveOfTwoFiresEveryStep) {
  const Tensor y = sn_layer(Tensor::full({6, 10}, 2.0f), {});
  EXPECT_EQ(firing_rate(y), 1.0);
}

TEST(SnLayer, OutputIsBinaryForRandomInputs) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor y = sn_layer(random_tensor({4, 2, 3, 5}, rng, -3, 3), {});
    EXPECT_TRUE(values_within(y, {0, 1}));
  }
}

TEST(SnLayer, MatchesUnrolledLifSteps) {
  Rng rng(6);
  const Tensor x = random_tensor({5, 7}, rng, -1, 2);
  const Tensor y = sn_layer(x, {});
  Tensor v = Tensor::zeros({7});
  for (std::size_t s = 0; s < 5; ++s) {
    const LifStep st = lif_step(ops::reshape(ops::slice(x, 0, s, s + 1), {7}), v, {});
    EXPECT_TRUE(test::all_equal(ops::reshape(ops::slice(y, 0, s, s + 1), {7}), st.spikes));
    v = st.v_next;
  }
}

TEST(SnLayer, NonFiniteInputRejected) {
  Tensor x = Tensor::zeros({2, 2});
  x[3] = std::numeric_limits<Real>::quiet_NaN();
  EXPECT_THROW(sn_layer(x, {}), NumericalError);
}

TEST(FiringRate, CountsOnesAndRejectsNonBinary) {
  EXPECT_EQ(firing_rate(Tensor({4}, {1, 0, 1, 0})), 0.5);
  EXPECT_EQ(firing_rate(Tensor::ones({3})), 1.0);
  EXPECT_THROW(firing_rate(Tensor({2}, {0.5f, 1})), InvalidInputError);
  EXPECT_DOUBLE_EQ(SpikeTensor::wrap(Tensor({4}, {1, 1, 1, 0})).firing_rate, 0.75);
}

}  // namespace
}  // namespace spikegraph
