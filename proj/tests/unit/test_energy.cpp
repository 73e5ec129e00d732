#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "spikegraph/energy.hpp"
#include "spikegraph/errors.hpp"
#include "spikegraph/trainer.hpp"
#include "support.hpp"

namespace spikegraph {
namespace {

LayerShape conv(std::size_t cin, std::size_t cout, std::size_t kh, std::size_t kw, std::size_t h,
                std::size_t w, std::size_t groups = 1) {
  LayerShape s;
  s.cin = cin;
  s.cout = cout;
  s.kh = kh;
  s.kw = kw;
  s.hout = h;
  s.wout = w;
  s.groups = groups;
  return s;
}

TEST(CountFlops, HandComputedPerKind) {
  EXPECT_EQ(count_flops(conv(3, 64, 3, 3, 25, 16)), 64.0 * 3 * 9 * 25 * 16);
  EXPECT_EQ(count_flops(conv(8, 8, 3, 3, 4, 4, 8)), 8.0 * 1 * 9 * 16);
  LayerShape lin;
  lin.kind = LayerKind::Linear;
  lin.cin = 256;
  lin.cout = 60;
  EXPECT_EQ(count_flops(lin), 15360.0);
  LayerShape att;
  att.kind = LayerKind::MatmulAttention;
  att.tokens = 25;
  att.cin = 64;
  att.slices = 16;
  EXPECT_EQ(count_flops(att), 2.0 * 625 * 64 * 16);
  LayerShape lstm;
  lstm.kind = LayerKind::Lstm;
  lstm.cin = 128;
  lstm.cout = 64;
  lstm.steps = 16;
  EXPECT_EQ(count_flops(lstm), 16.0 * 256 * 192);
  LayerShape bn;
  bn.kind = LayerKind::Bn;
  EXPECT_EQ(count_flops(bn), 0);
  bn.kind = LayerKind::Pooling;
  EXPECT_EQ(count_flops(bn), 0);
  EXPECT_THROW(count_flops(conv(6, 4, 1, 1, 1, 1, 4)), InvalidInputError);
}

TEST(ComputeSops, ProductAndDomain) {
  EXPECT_EQ(compute_sops(1000, 0.25, 4), 1000);
  EXPECT_EQ(compute_sops(1e9, 0, 4), 0);
  EXPECT_EQ(compute_sops(123.5, 1, 1), 123.5);
  EXPECT_THROW(compute_sops(1, 1.5, 1), InvalidInputError);
  EXPECT_THROW(compute_sops(1, -0.1, 1), InvalidInputError);
  EXPECT_THROW(compute_sops(1, 0.5, 0), InvalidInputError);
  EXPECT_THROW(compute_sops(-1, 0.5, 1), InvalidInputError);
}

TEST(EnergyAnn, MacEnergyInMillijoules) {
  EXPECT_NEAR(energy_ann(1e9), 4.6, 1e-12);
  EXPECT_NEAR(energy_ann(3.48e9), 16.008, 1e-9);
  EXPECT_EQ(energy_ann(0), 0);
}

TEST(Rates, FiringAndActivity) {
  EXPECT_EQ(measure_firing_rate(Tensor({4}, {1, 0, 0, 1})), 0.5);
  EXPECT_THROW(measure_firing_rate(Tensor({2}, {2, 0})), InvalidInputError);
  EXPECT_EQ(activity_rate(Tensor({4}, {2, 0, -0.5f, 0})), 0.5);
  EXPECT_THROW(activity_rate(Tensor::zeros({0})), InvalidInputError);
}

TEST(Names, RoundTrip) {
  for (auto k : {LayerKind::Conv, LayerKind::Linear, LayerKind::MatmulAttention, LayerKind::Lstm,
                 LayerKind::Bn, LayerKind::Pooling})
    EXPECT_EQ(parse_layer_kind(to_string(k)), k);
  for (auto r : {CostRole::FirstLayer, CostRole::Conv, CostRole::Fc, CostRole::Ssa, CostRole::Smic,
                 CostRole::Excluded})
    EXPECT_EQ(parse_cost_role(to_string(r)), r);
  EXPECT_THROW(parse_layer_kind("deconv"), InvalidInputError);
  EXPECT_THROW(parse_cost_role("other"), InvalidInputError);
  EXPECT_EQ(to_string(ModelKind::BaseSgn), "base-sgn");
}

LayerCost cost(const std::string& id, CostRole role, double flops, double rate, std::size_t S = 4) {
  LayerCost c;
  c.id = id;
  c.role = role;
  c.flops = flops;
  c.rate = rate;
  c.spike_steps = S;
  c.sops = compute_sops(flops, rate, S);
  return c;
}

EnergyReport crafted_report() {
  EnergyReport r;
  r.layers = {cost("first", CostRole::FirstLayer, 1e6, 0.5), cost("conv", CostRole::Conv, 2e6, 0.25),
              cost("fc", CostRole::Fc, 1e4, 0.5), cost("ssa", CostRole::Ssa, 1e5, 0.1),
              cost("smic", CostRole::Smic, 3e5, 0.2), cost("bn", CostRole::Excluded, 0, 0)};
  return r;
}

TEST(EnergySnn, HandComputedBothModels) {
  const EnergyReport r = crafted_report();
  // SOPs: conv 2e6, fc 2e4, ssa 4e4, smic 2.4e5.
  const double base = (4.6 * 1e6 + 0.9 * (2e6 + 2e4)) * 1e-9;
  const double mk = (4 * 4.6 * 1e6 + 0.9 * (6 * 2.4e5 + 2e6 + 2e4 + 4e4)) * 1e-9;
  EXPECT_NEAR(energy_snn(r, ModelKind::BaseSgn), base, 1e-15);
  EXPECT_NEAR(energy_snn(r, ModelKind::MkSgn), mk, 1e-15);
  EnergyReport none = r;
  none.layers.erase(none.layers.begin());
  EXPECT_THROW(energy_snn(none, ModelKind::MkSgn), InvalidInputError);
}

TEST(EnergyReportTest, FinalizeAndDenseCount) {
  EnergyReport r = crafted_report();
  r.finalize();
  EXPECT_EQ(r.flops_total, 1e6 + 2e6 + 1e4 + 1e5 + 3e5);
  EXPECT_NEAR(r.sops_total, 2e6 + 2e6 + 2e4 + 4e4 + 2.4e5, 1e-6);
  EXPECT_EQ(r.energy_mJ, energy_snn(r, ModelKind::MkSgn));
  EXPECT_EQ(r.dense_flops(), 4 * 1e6 + 2e6 + 1e4 + 1e5 + 6 * 3e5);
}

TEST(EnergyReportTest, JsonAndCsvCarryEveryLayer) {
  EnergyReport r = crafted_report();
  r.finalize();
  r.ann_equivalent_mJ = energy_ann(r.dense_flops());
  const auto j = r.to_json();
  EXPECT_EQ(j.at("layers").size(), r.layers.size());
  EXPECT_EQ(j.at("S"), 4);
  EXPECT_EQ(j.at("layers")[0].at("first_layer"), true);
  EXPECT_EQ(j.at("layers")[1].at("role"), "conv");
  EXPECT_DOUBLE_EQ(j.at("totals").at("energy_mJ").get<double>(), r.energy_mJ);
  EXPECT_TRUE(j.contains("ann_equivalent_mJ"));
  std::istringstream csv(r.to_csv());
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(csv, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), r.layers.size() + 2);
  EXPECT_EQ(lines.front(), "id,kind,role,flops,r,S,sops");
  EXPECT_EQ(lines.back().rfind("total,", 0), 0u);
}

TEST(ProfileModel, TinyModelReport) {
  ModelConfig cfg;
  cfg.num_classes = 3;
  cfg.num_joints = 20;
  cfg.frames = 8;
  cfg.width = 16;
  cfg.ssc.spike_steps = 2;
  cfg.ssc.hidden_channels = 8;
  cfg.smf.smic_hidden = 8;
  MkSgnModel model(cfg, 1);
  SynthParams p;
  p.classes = 3;
  p.samples_per_class = 2;
  p.num_joints = 20;
  p.frames = 8;
  const PreparedData data = prepare(synthesize(p), 8, SkeletonTopology::ucla20());
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  const EnergyReport r = profile_model(model, data.gather(idx));
  std::size_t first = 0;
  double flops = 0, sops = 0;
  for (const auto& l : r.layers) {
    first += l.role == CostRole::FirstLayer;
    EXPECT_TRUE(l.rate >= 0 && l.rate <= 1) << l.id;
    EXPECT_EQ(l.spike_steps, 2u);
    EXPECT_LE(l.sops, 2 * l.flops + 1e-9) << l.id;
    flops += l.flops;
    sops += l.sops;
  }
  EXPECT_EQ(first, 1u);
  EXPECT_NEAR(r.flops_total, flops, 1e-9 * flops);
  EXPECT_NEAR(r.sops_total, sops, 1e-9 * sops + 1e-12);
  ASSERT_TRUE(r.ann_equivalent_mJ.has_value());
  EXPECT_GT(r.energy_mJ, 0);
  EXPECT_EQ(r.layers.back().id, "head.fc");
  // Six student blocks with one projection each for the two strided ones.
  std::size_t projections = 0;
  for (const auto& l : r.layers) projections += l.id.find("stc.projection") != std::string::npos;
  EXPECT_EQ(projections, 2u);
}

}  // namespace
}  // namespace spikegraph
