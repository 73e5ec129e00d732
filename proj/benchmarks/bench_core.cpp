#include <benchmark/benchmark.h>

#include "spikegraph/graph.hpp"
#include "spikegraph/neurons.hpp"
#include "spikegraph/ops.hpp"
#include "spikegraph/tape.hpp"

namespace {

using namespace spikegraph;

Tensor random_tensor(const Shape& shape, Rng& rng) {
  Tensor t = Tensor::zeros(shape);
  for (auto& v : t.data()) v = static_cast<Real>(rng.uniform(-1.0, 1.0));
  return t;
}

Tensor random_binary(const Shape& shape, Rng& rng) {
  Tensor t = Tensor::zeros(shape);
  for (auto& v : t.data()) v = rng.uniform() < 0.3 ? Real(1) : Real(0);
  return t;
}

void BM_SnLayer(benchmark::State& state) {
  Rng rng(1);
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({4, n}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(sn_layer(x, {}));
  state.SetItemsProcessed(state.iterations() * 4 * state.range(0));
}
BENCHMARK(BM_SnLayer)->RangeMultiplier(8)->Range(1 << 10, 1 << 18);

void BM_Conv2d(benchmark::State& state) {
  Rng rng(2);
  const auto c = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_tensor({16, c, 25, 16}, rng);
  const Tensor w = random_tensor({c, c, 1, 5}, rng);
  ops::Conv2dOptions opt;
  opt.pad_w = 2;
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(x, w, opt, Tensor()));
}
BENCHMARK(BM_Conv2d)->Arg(16)->Arg(32)->Arg(64);

void BM_Matmul(benchmark::State& state) {
  Rng rng(3);
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor({n, n}, rng), b = random_tensor({n, n}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(ops::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(0) * state.range(0));
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(16, 256);

void BM_GraphBlockForward(benchmark::State& state) {
  Rng rng(4);
  const auto c = static_cast<std::size_t>(state.range(0));
  const AdjacencySet adj = partition_branches(SkeletonTopology::ntu25());
  GraphBlock block(c, c, 1, {}, {}, rng);
  const Tensor x = random_binary({4, 8, c, 25, 16}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(sa_sgc_stc_block(x, block, adj, false));
}
BENCHMARK(BM_GraphBlockForward)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_GraphBlockBackward(benchmark::State& state) {
  Rng rng(5);
  const auto c = static_cast<std::size_t>(state.range(0));
  const AdjacencySet adj = partition_branches(SkeletonTopology::ntu25());
  GraphBlock block(c, c, 1, {}, {}, rng);
  const Tensor x = random_binary({4, 8, c, 25, 16}, rng);
  for (auto _ : state) {
    Tape tape;
    TapeScope scope(tape);
    const Tensor loss = ops::sum(sa_sgc_stc_block(x, block, adj, true));
    tape.backward(loss);
  }
}
BENCHMARK(BM_GraphBlockBackward)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
