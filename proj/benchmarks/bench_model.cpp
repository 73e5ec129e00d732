#include <benchmark/benchmark.h>

#include <numeric>

#include "spikegraph/energy.hpp"
#include "spikegraph/trainer.hpp"

namespace {

using namespace spikegraph;

ModelConfig toy_model() {
  ModelConfig cfg;
  cfg.num_classes = 4;
  cfg.num_joints = 25;
  cfg.frames = 16;
  cfg.width = 16;
  cfg.ssc.hidden_channels = 16;
  return cfg;
}

PreparedData toy_data(std::size_t per_class) {
  SynthParams p;
  p.classes = 4;
  p.samples_per_class = per_class;
  p.num_joints = 25;
  p.frames = 32;
  return prepare(synthesize(p), 16, SkeletonTopology::ntu25());
}

ModalityBatch first(const PreparedData& data, std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return data.gather(idx);
}

void BM_StudentForward(benchmark::State& state) {
  MkSgnModel model(toy_model(), 1);
  const PreparedData data = toy_data(4);
  const ModalityBatch batch = first(data, 16);
  for (auto _ : state) benchmark::DoNotOptimize(student_forward(batch.streams, model));
}
BENCHMARK(BM_StudentForward)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  MkSgnModel model(toy_model(), 2);
  const PreparedData data = toy_data(4);
  const ModalityBatch batch = first(data, 16);
  TrainOptions opt;
  opt.batch_size = 16;
  opt.kd = KdMode::parse("none");
  Trainer trainer(model, nullptr, opt, 2);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.train_step(batch));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_ProfileModel(benchmark::State& state) {
  MkSgnModel model(toy_model(), 3);
  const PreparedData data = toy_data(4);
  const ModalityBatch batch = first(data, 16);
  for (auto _ : state) benchmark::DoNotOptimize(profile_model(model, batch));
}
BENCHMARK(BM_ProfileModel)->Unit(benchmark::kMillisecond);

}  // namespace
