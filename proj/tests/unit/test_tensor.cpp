#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "spikegraph/errors.hpp"
#include "spikegraph/gradcheck.hpp"
#include "spikegraph/neurons.hpp"
#include "spikegraph/nn.hpp"
#include "spikegraph/ops.hpp"
#include "spikegraph/tape.hpp"
#include "support.hpp"

namespace spikegraph {
namespace {

using test::all_close;
using test::all_equal;
using test::random_binary;
using test::random_tensor;

TEST(Matmul, IdentityLeftOperand) {
  const Tensor a({2, 2}, {1, 0, 0, 1});
  const Tensor b({2, 2}, {3, 4, 5, 6});
  EXPECT_TRUE(all_equal(ops::matmul(a, b), b));
}

TEST(Matmul, HandArithmetic) {
  const Tensor y = ops::matmul(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4}));
  ASSERT_EQ(y.shape(), (Shape{1, 1}));
  EXPECT_EQ(y[0], 11);
}

TEST(Matmul, BroadcastsPlainMatrixOverBatch) {
  Rng rng(3);
  const Tensor a = random_tensor({4, 3, 5}, rng);
  const Tensor w = random_tensor({5, 2}, rng);
  const Tensor y = ops::matmul(a, w);
  ASSERT_EQ(y.shape(), (Shape{4, 3, 2}));
  for (std::size_t b = 0; b < 4; ++b) {
    const Tensor one = ops::matmul(ops::reshape(ops::slice(a, 0, b, b + 1), {3, 5}), w);
    EXPECT_TRUE(all_close(ops::reshape(ops::slice(y, 0, b, b + 1), {3, 2}), one, 1e-6));
  }
}

TEST(Matmul, RejectsInnerMismatch) {
  EXPECT_THROW(ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST(Conv2d, OnesKernelFullOverlapAtCenter) {
  ops::Conv2dOptions opt;
  opt.pad_h = opt.pad_w = 1;
  const Tensor y = ops::conv2d(Tensor::ones({1, 1, 3, 3}), Tensor::ones({1, 1, 3, 3}), opt);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  EXPECT_EQ(y[4], 9);
  EXPECT_EQ(y[0], 4);
}

TEST(Conv2d, DeltaKernelIsIdentity) {
  Rng rng(11);
  for (const Shape& shape : {Shape{1, 1, 3, 3}, Shape{2, 3, 5, 7}, Shape{2, 4, 3, 6, 5}}) {
    const std::size_t C = shape[shape.size() - 3];
    Tensor w = Tensor::zeros({C, C, 3, 3});
    for (std::size_t c = 0; c < C; ++c) w[((c * C + c) * 3 + 1) * 3 + 1] = 1;
    ops::Conv2dOptions opt;
    opt.pad_h = opt.pad_w = 1;
    const Tensor x = random_tensor(shape, rng);
    EXPECT_TRUE(all_equal(ops::conv2d(x, w, opt), x)) << to_string(shape);
  }
}

TEST(Conv2d, LeadingAxesActAsBatch) {
  Rng rng(5);
  const Tensor x = random_tensor({2, 3, 4, 5, 6}, rng);
  const Tensor w = random_tensor({2, 4, 3, 1}, rng);
  ops::Conv2dOptions opt;
  opt.pad_h = 1;
  opt.stride_w = 2;
  const Tensor y5 = ops::conv2d(x, w, opt);
  const Tensor y4 = ops::conv2d(ops::reshape(x, {6, 4, 5, 6}), w, opt);
  ASSERT_EQ(y5.shape(), (Shape{2, 3, 2, 5, 3}));
  EXPECT_TRUE(all_equal(ops::reshape(y5, y4.shape()), y4));
}

TEST(Conv2d, GroupedMatchesPerGroupConvolution) {
  Rng rng(8);
  const Tensor x = random_tensor({1, 4, 3, 3}, rng);
  const Tensor w = random_tensor({4, 1, 3, 3}, rng);
  ops::Conv2dOptions opt;
  opt.pad_h = opt.pad_w = 1;
  opt.groups = 4;
  const Tensor y = ops::conv2d(x, w, opt);
  ops::Conv2dOptions single = opt;
  single.groups = 1;
  for (std::size_t c = 0; c < 4; ++c) {
    const Tensor yc = ops::conv2d(ops::slice(x, 1, c, c + 1), ops::slice(w, 0, c, c + 1), single);
    EXPECT_TRUE(all_close(ops::slice(y, 1, c, c + 1), yc, 1e-6));
  }
}

TEST(Conv2d, RejectsChannelMismatch) {
  EXPECT_THROW(ops::conv2d(Tensor::zeros({1, 2, 3, 3}), Tensor::zeros({1, 3, 1, 1})), DimensionError);
}

TEST(BatchNorm, ZeroInputGivesZero) {
  ops::RunningStats st;
  const Tensor y = ops::batch_norm(Tensor::zeros({4, 2, 3}), Tensor::ones({2}), Tensor::zeros({2}), st, true);
  EXPECT_TRUE(all_equal(y, Tensor::zeros({4, 2, 3})));
}

TEST(BatchNorm, PlusMinusOneStaysUnitVariance) {
  ops::RunningStats st;
  const Tensor x({2, 1}, {-1, 1});
  const Tensor y = ops::batch_norm(x, Tensor::ones({1}), Tensor::zeros({1}), st, true);
  const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(y[0], -expect, 1e-7);
  EXPECT_NEAR(y[1], expect, 1e-7);
}

TEST(BatchNorm, ZeroGammaCollapsesToBeta) {
  Rng rng(2);
  ops::RunningStats st;
  const Tensor y = ops::batch_norm(random_tensor({8, 3, 5}, rng), Tensor::zeros({3}), Tensor::full({3}, 0.7f), st, true);
  EXPECT_TRUE(all_close(y, Tensor::full({8, 3, 5}, 0.7f), 1e-7));
}

TEST(BatchNorm, TrainingOutputIsStandardized) {
  Rng rng(21);
  for (const std::size_t batch : {8, 16, 32}) {
    ops::RunningStats st;
    const Tensor x = random_tensor({batch, 3, 4, 5}, rng, -3.0, 7.0);
    const Tensor y = ops::batch_norm(x, Tensor::ones({3}), Tensor::zeros({3}), st, true);
    const std::size_t inner = 20;
    for (std::size_t c = 0; c < 3; ++c) {
      double s = 0, ss = 0;
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t i = 0; i < inner; ++i) s += y[(n * 3 + c) * inner + i];
      const double mu = s / static_cast<double>(batch * inner);
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t i = 0; i < inner; ++i) ss += std::pow(y[(n * 3 + c) * inner + i] - mu, 2);
      EXPECT_LT(std::abs(mu), 1e-5);
      EXPECT_NEAR(ss / static_cast<double>(batch * inner), 1.0, 1e-4);
    }
  }
}

TEST(BatchNorm, RunningStatsUpdateWithMomentumAndDriveEvalMode) {
  ops::RunningStats st;
  const Tensor x({4, 1}, {1, 2, 3, 4});
  ops::batch_norm(x, Tensor::ones({1}), Tensor::zeros({1}), st, true);
  EXPECT_NEAR(st.mean[0], 0.1 * 2.5, 1e-7);
  EXPECT_NEAR(st.var[0], 0.9 + 0.1 * (5.0 / 3.0), 1e-6);
  const Tensor y = ops::batch_norm(Tensor({1, 1}, {2.0f}), Tensor::ones({1}), Tensor::zeros({1}), st, false);
  EXPECT_NEAR(y[0], (2.0 - st.mean[0]) / std::sqrt(st.var[0] + 1e-5), 1e-6);
}

TEST(BatchNorm, ChannelAxisTwoMatchesPermutedAxisOne) {
  Rng rng(4);
  const Tensor x = random_tensor({2, 3, 4, 5, 2}, rng);
  ops::RunningStats a, b;
  const Tensor g = random_tensor({4}, rng), be = random_tensor({4}, rng);
  const Tensor y2 = ops::batch_norm(x, g, be, a, true, ops::kBnMomentum, ops::kBnEps, 2);
  const Tensor xp = ops::reshape(x, {6, 4, 10});
  const Tensor y1 = ops::batch_norm(xp, g, be, b, true);
  EXPECT_TRUE(all_close(ops::reshape(y2, {6, 4, 10}), y1, 1e-5));
  EXPECT_TRUE(all_close(a.mean, b.mean, 1e-6));
}

TEST(BatchNorm, EmptyTrainingBatchRejected) {
  ops::RunningStats st;
  EXPECT_THROW(ops::batch_norm(Tensor::zeros({0, 2}), Tensor::ones({2}), Tensor::zeros({2}), st, true),
               InvalidInputError);
}

TEST(Lstm, ZeroWeightsAndStateStayAtOrigin) {
  Rng rng(1);
  LstmWeights w(3, 4, rng);
  for (auto* t : {&w.w_ih, &w.w_hh, &w.bias})
    for (auto& v : t->data()) v = 0;
  const LstmState s = lstm_cell(random_tensor({2, 3}, rng), Tensor::zeros({2, 4}), Tensor::zeros({2, 4}), w);
  // With zero pre-activations every gate sits at 0.5 and the candidate at 0.
  EXPECT_TRUE(all_equal(s.h, Tensor::zeros({2, 4})));
  EXPECT_TRUE(all_equal(s.c, Tensor::zeros({2, 4})));
}

TEST(Lstm, SaturatedGatesFollowHandFormula) {
  Rng rng(9);
  const std::size_t H = 3, in = 2;
  LstmWeights w(in, H, rng);
  // Forget and input gates pinned open by a large bias.
  for (std::size_t j = 0; j < H; ++j) {
    w.bias[j] = 30.0f;
    w.bias[H + j] = 30.0f;
  }
  const Tensor x = random_tensor({1, in}, rng), h0 = random_tensor({1, H}, rng), c0 = random_tensor({1, H}, rng);
  const LstmState s = lstm_cell(x, h0, c0, w);
  for (std::size_t j = 0; j < H; ++j) {
    double g = w.bias[2 * H + j];
    for (std::size_t i = 0; i < in; ++i) g += x[i] * w.w_ih[i * 4 * H + 2 * H + j];
    for (std::size_t i = 0; i < H; ++i) g += h0[i] * w.w_hh[i * 4 * H + 2 * H + j];
    EXPECT_NEAR(s.c[j], c0[j] + std::tanh(g), 1e-3);
  }
}

TEST(Tape, SumGivesOnes) {
  Rng rng(1);
  Tensor x = random_tensor({3, 4}, rng).set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(ops::sum(x));
  }
  for (Real g : x.grad()) EXPECT_EQ(g, 1);
}

TEST(Tape, HalfSquaredNormGivesInput) {
  Rng rng(2);
  Tensor x = random_tensor({5}, rng).set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  tape.backward(ops::scale(ops::sum(ops::mul(x, x)), 0.5f));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_FLOAT_EQ(x.grad()[i], x[i]);
}

TEST(Tape, SharedSubexpressionAccumulates) {
  Tensor x = Tensor({2}, {1.5f, -2.0f}).set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  const Tensor y = ops::add(ops::mul(x, x), x);
  tape.backward(ops::sum(y));
  EXPECT_FLOAT_EQ(x.grad()[0], 4.0f);
  EXPECT_FLOAT_EQ(x.grad()[1], -3.0f);
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Tape, NonScalarLossRejected) {
  Tensor x = Tensor::ones({2}).set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  const Tensor y = ops::scale(x, 2);
  EXPECT_THROW(tape.backward(y), InvalidInputError);
}

TEST(Tape, NoGradScopeRecordsNothing) {
  Tensor x = Tensor::ones({2}).set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  {
    NoGradScope ng;
    ops::exp(x);
  }
  EXPECT_EQ(tape.size(), 0u);
  ops::exp(x);
  EXPECT_EQ(tape.size(), 1u);
}

TEST(TokenAttention, MatchesPerFrameMatmulOnBinaryInputs) {
  Rng rng(6);
  const std::size_t N = 3, C = 5, V = 7;
  for (const std::size_t T : {4, 8, 16, 3}) {
    const Tensor q = random_binary({N, C, V, T}, rng), k = random_binary({N, C, V, T}, rng),
                 v = random_binary({N, C, V, T}, rng);
    const Tensor y = ops::token_attention(q, k, v);
    ASSERT_EQ(y.shape(), q.shape());
    // Reference: out[n, :, :, t] = (Q K^T V) with Q = [V, C] per frame.
    auto frame = [&](const Tensor& t, std::size_t n, std::size_t f) {
      return ops::permute(ops::reshape(ops::slice(ops::slice(t, 0, n, n + 1), 3, f, f + 1), {C, V}), {1, 0});
    };
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t f = 0; f < T; ++f) {
        const Tensor ref = ops::matmul(ops::matmul(frame(q, n, f), ops::permute(frame(k, n, f), {1, 0})), frame(v, n, f));
        EXPECT_TRUE(all_equal(frame(y, n, f), ref)) << "T=" << T;
      }
  }
}

TEST(TokenAttention, BinaryScoresAreBoundedCounts) {
  Rng rng(7);
  const Tensor q = random_binary({2, 6, 5, 4}, rng, 0.5), k = random_binary({2, 6, 5, 4}, rng, 0.5);
  const Tensor ones = Tensor::ones({2, 6, 5, 4});
  // With V = ones, each output entry is a row sum of Q K^T: integer in [0, C*V].
  const Tensor y = ops::token_attention(q, k, ones);
  for (Real v : y.data()) {
    EXPECT_EQ(v, std::round(v));
    EXPECT_GE(v, 0);
    EXPECT_LE(v, 6 * 5);
  }
}

TEST(Elementwise, BroadcastingAddAndGradientReduction) {
  Tensor a = Tensor::ones({2, 3}).set_requires_grad(true);
  Tensor b = Tensor({3}, {1, 2, 3}).set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  const Tensor y = ops::add(a, b);
  EXPECT_TRUE(all_equal(y, Tensor({2, 3}, {2, 3, 4, 2, 3, 4})));
  tape.backward(ops::sum(y));
  for (Real g : b.grad()) EXPECT_EQ(g, 2);
}

TEST(Elementwise, ShapeMismatchRejected) {
  EXPECT_THROW(ops::add(Tensor::zeros({2, 3}), Tensor::zeros({4})), DimensionError);
}

TEST(Softmax, RowsSumToOneAndLogSoftmaxAgrees) {
  Rng rng(12);
  const Tensor x = random_tensor({4, 6}, rng, -5, 5);
  const Tensor p = ops::softmax(x);
  const Tensor lp = ops::log_softmax(x);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 6; ++c) {
      s += p[r * 6 + c];
      EXPECT_NEAR(std::log(p[r * 6 + c]), lp[r * 6 + c], 1e-5);
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(ShapeOps, SliceConcatRoundTripAndPermuteInverse) {
  Rng rng(13);
  const Tensor x = random_tensor({3, 4, 5}, rng);
  const Tensor back = ops::concat({ops::slice(x, 1, 0, 1), ops::slice(x, 1, 1, 4)}, 1);
  EXPECT_TRUE(all_equal(back, x));
  const Tensor p = ops::permute(x, {2, 0, 1});
  ASSERT_EQ(p.shape(), (Shape{5, 3, 4}));
  EXPECT_TRUE(all_equal(ops::permute(p, {1, 2, 0}), x));
  EXPECT_THROW(ops::reshape(x, {7, 9}), DimensionError);
}

TEST(Reductions, AxisSumAndMean) {
  const Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_TRUE(all_equal(ops::sum(x, {0}), Tensor({3}, {5, 7, 9})));
  EXPECT_TRUE(all_equal(ops::mean(x, {1}, true), Tensor({2, 1}, {2, 5})));
  EXPECT_EQ(ops::max(x).item(), 6);
}

TEST(WeightedSum, MatchesManualCombination) {
  const Tensor a({2}, {1, 2}), b({2}, {3, 5});
  EXPECT_TRUE(all_close(ops::weighted_sum({a, b}, {0.5, 2.0}), Tensor({2}, {6.5f, 11.0f}), 1e-6));
  EXPECT_THROW(ops::weighted_sum({a, b}, {1.0}), InvalidInputError);
}

TEST(Dropout, ZeroRateIsIdentityAndMaskIsRescaled) {
  Rng rng(14);
  const Tensor x = random_tensor({1000}, rng, 1, 2);
  EXPECT_TRUE(all_equal(ops::dropout(x, 0.0, 1), x));
  const Tensor y = ops::dropout(x, 0.25, 99);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (y[i] == 0) continue;
    ++kept;
    EXPECT_NEAR(y[i], x[i] / 0.75, 1e-5);
  }
  EXPECT_NEAR(static_cast<double>(kept) / 1000.0, 0.75, 0.05);
  EXPECT_TRUE(all_equal(ops::dropout(x, 0.25, 99), y));
}

TEST(Serialization, BlobRoundTripsExactly) {
  Rng rng(15);
  const Tensor x = random_tensor({2, 3, 4}, rng);
  const auto bytes = serialize_tensor(x);
  EXPECT_TRUE(all_equal(deserialize_tensor(bytes), x));
  std::stringstream ss;
  write_tensor(ss, x);
  EXPECT_TRUE(all_equal(read_tensor(ss), x));
}

TEST(Serialization, CorruptBlobRejected) {
  auto bytes = serialize_tensor(Tensor::ones({4}));
  bytes[0] = 'X';
  EXPECT_THROW(deserialize_tensor(bytes), Error);
  bytes = serialize_tensor(Tensor::ones({4}));
  bytes.resize(bytes.size() - 2);
  EXPECT_THROW(deserialize_tensor(bytes), Error);
}

}  // namespace
}  // namespace spikegraph
