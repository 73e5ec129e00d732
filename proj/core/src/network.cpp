#include "spikegraph/network.hpp"

#include <sstream>

#include "spikegraph/errors.hpp"
#include "spikegraph/ops.hpp"
#include "spikegraph/tape.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

namespace {

LayerPlan scaled(const LayerSpec* ref, std::size_t n, std::size_t width) {
  LayerPlan p;
  for (std::size_t i = 0; i < n; ++i) {
    LayerSpec s = ref[i];
    s.in = (i == 0) ? s.in : s.in * width / 64;
    s.out = s.out * width / 64;
    p.layers.push_back(s);
  }
  return p;
}

// [B, C, T, V] -> [B, C, V, T]
Tensor joint_major(const Tensor& x) { return ops::permute(x, {0, 1, 3, 2}); }

}  // namespace

LayerPlan LayerPlan::student(std::size_t input_channels, std::size_t width) {
  LayerPlan p = scaled(kReferenceStudentPlan.data(), kReferenceStudentPlan.size(), width);
  p.layers[0].in = input_channels;
  return p;
}

LayerPlan LayerPlan::teacher(std::size_t width) {
  return scaled(kReferenceTeacherPlan.data(), kReferenceTeacherPlan.size(), width);
}

std::size_t LayerPlan::downsampling(std::size_t index) const {
  std::size_t d = 1;
  for (std::size_t i = 0; i <= index && i < layers.size(); ++i) d *= layers[i].stride;
  return d;
}

void ModelConfig::validate() const {
  if (num_classes < 2) throw ConfigError("model needs at least 2 classes");
  if (width == 0 || width % 16 != 0) throw ConfigError("width must be a positive multiple of 16");
  if (frames == 0 || frames % 4 != 0) throw ConfigError("frame count must be divisible by 4");
  if (blocks.branches != 3) throw ConfigError("only the 3-branch partition is available");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
  try {
    lif.validate();
    ssc.validate();
  } catch (const InvalidInputError& e) {
    throw ConfigError(e.what());
  }
}

std::uint64_t ModelConfig::plan_hash() const {
  std::ostringstream s;
  s << "U=" << num_classes << ";V=" << num_joints << ";S=" << ssc.spike_steps
    << ";D=" << ssc.hidden_channels << ";Cin=" << ssc.in_channels << ";K=" << blocks.branches
    << ";kt=" << blocks.temporal_kernel << ";smic=" << smf.smic_hidden << ";";
  for (const auto& l : student_plan().layers) s << l.in << "/" << l.out << "s" << l.stride << ",";
  return fnv1a(s.str());
}

MkSgnModel::MkSgnModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  adj_ = partition_branches(SkeletonTopology::for_joints(cfg_.num_joints));
  for (auto& e : ssc_) e = SscEncoder(cfg_.ssc, cfg_.lif, rng);
  smf_ = SmfEstimator(cfg_.ssc.hidden_channels, cfg_.smf, cfg_.lif, rng);
  for (const auto& l : cfg_.student_plan().layers)
    blocks_.emplace_back(l.in, l.out, l.stride, cfg_.blocks, cfg_.lif, rng);
  head_ = Linear(blocks_.back().stc.channels, cfg_.num_classes, rng);
}

NamedTensors MkSgnModel::parameters() const {
  NamedTensors out;
  for (std::size_t m = 0; m < kNumModalities; ++m)
    append_prefixed(out, std::string("ssc.") + kModalityNames[m] + ".", ssc_[m].parameters());
  for (std::size_t b = 0; b < blocks_.size(); ++b)
    append_prefixed(out, "block" + std::to_string(b + 1) + ".", blocks_[b].parameters());
  append_prefixed(out, "head.", head_.parameters());
  return out;
}

NamedTensors MkSgnModel::buffers() const {
  NamedTensors out;
  for (std::size_t m = 0; m < kNumModalities; ++m)
    append_prefixed(out, std::string("ssc.") + kModalityNames[m] + ".", ssc_[m].buffers());
  for (std::size_t b = 0; b < blocks_.size(); ++b)
    append_prefixed(out, "block" + std::to_string(b + 1) + ".", blocks_[b].buffers());
  return out;
}

StudentOutput student_forward(const ModalityBundle& batch, MkSgnModel& model, const ForwardOptions& opt) {
  const ModelConfig& cfg = model.config();
  const auto streams = batch.fusion_order();
  for (const auto& s : streams)
    if (s.rank() != 4 || s.dim(3) != cfg.num_joints || s.dim(2) % 4 != 0)
      throw DimensionError("student_forward expects [B, 3, T, V] streams with T divisible by 4 and V = " +
                           std::to_string(cfg.num_joints) + ", got " + to_string(s.shape()));
  StudentOutput out;
  for (std::size_t m = 0; m < kNumModalities; ++m)
    out.modality_spikes[m] = model.encoders()[m].forward(streams[m], opt.training);
  if (cfg.use_smf) {
    auto r = model.smf().update(out.modality_spikes, opt.training && opt.train_smic);
    out.mi = r.mi;
    out.weights = r.weights;
  }
  out.fused = fuse_modalities(out.modality_spikes, out.weights);
  Tensor x = out.fused;
  for (std::size_t b = 0; b < model.blocks().size(); ++b) {
    x = sa_sgc_stc_block(x, model.blocks()[b], model.adjacency(), opt.training);
    out.block_outputs.push_back(x);
  }
  out.taps = {out.block_outputs[kStudentTaps[0]], out.block_outputs[kStudentTaps[1]]};
  out.head_spikes = sn_layer(x, model.head_lif());
  Tensor pooled = ops::mean(out.head_spikes, {3, 4});  // [S, B, C]
  if (opt.training && cfg.dropout > 0.0) pooled = ops::dropout(pooled, cfg.dropout, opt.dropout_seed);
  out.logits = ops::mean(model.head().forward(pooled), {0});
  return out;
}

Tensor task_loss(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw DimensionError("task_loss: logits " + to_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  const std::size_t B = logits.dim(0), U = logits.dim(1);
  Tensor onehot = Tensor::zeros({B, U});
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= U)
      throw InvalidInputError("task_loss: label " + std::to_string(labels[b]) + " outside [0, " +
                              std::to_string(U) + ")");
    onehot[b * U + labels[b]] = 1;
  }
  return ops::scale(ops::sum(ops::mul(ops::log_softmax(logits), onehot)), Real(-1) / static_cast<Real>(B));
}

GcTcLayer::GcTcLayer(const LayerSpec& s, const BlockConfig& cfg, Rng& rng)
    : spec(s), bn_gc(s.out), bn_tc(s.out), bn_res(s.out) {
  ops::Conv2dOptions pw;
  gc = Conv2d(cfg.branches * s.in, s.out, 1, 1, pw, rng);
  ops::Conv2dOptions t;
  t.stride_w = s.stride;
  t.pad_w = (cfg.temporal_kernel - 1) / 2;
  tc = Conv2d(s.out, s.out, 1, cfg.temporal_kernel, t, rng);
  if (s.in != s.out || s.stride != 1) {
    ops::Conv2dOptions r;
    r.stride_w = s.stride;
    res = Conv2d(s.in, s.out, 1, 1, r, rng);
  }
}

Tensor GcTcLayer::forward(const Tensor& x, const AdjacencySet& adj, bool training) {
  const Tensor y = ops::relu(bn_gc.forward(gc.forward(graph_aggregate(x, adj)), training));
  const Tensor z = bn_tc.forward(tc.forward(y), training);
  const Tensor r = res.weight.defined() ? bn_res.forward(res.forward(x), training) : x;
  return ops::relu(ops::add(z, r));
}

NamedTensors GcTcLayer::parameters() const {
  NamedTensors out;
  append_prefixed(out, "gc.", gc.parameters());
  append_prefixed(out, "bn_gc.", bn_gc.parameters());
  append_prefixed(out, "tc.", tc.parameters());
  append_prefixed(out, "bn_tc.", bn_tc.parameters());
  if (res.weight.defined()) {
    append_prefixed(out, "res.", res.parameters());
    append_prefixed(out, "bn_res.", bn_res.parameters());
  }
  return out;
}

NamedTensors GcTcLayer::buffers() const {
  NamedTensors out;
  append_prefixed(out, "bn_gc.", bn_gc.buffers());
  append_prefixed(out, "bn_tc.", bn_tc.buffers());
  if (res.weight.defined()) append_prefixed(out, "bn_res.", bn_res.buffers());
  return out;
}

NamedTensors TeacherStream::parameters() const {
  NamedTensors out;
  append_prefixed(out, "input_bn.", input_bn.parameters());
  for (std::size_t l = 0; l < layers.size(); ++l)
    append_prefixed(out, "layer" + std::to_string(l + 1) + ".", layers[l].parameters());
  append_prefixed(out, "head.", head.parameters());
  return out;
}

NamedTensors TeacherStream::buffers() const {
  NamedTensors out;
  append_prefixed(out, "input_bn.", input_bn.buffers());
  for (std::size_t l = 0; l < layers.size(); ++l)
    append_prefixed(out, "layer" + std::to_string(l + 1) + ".", layers[l].buffers());
  return out;
}

TeacherModel::TeacherModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  adj_ = partition_branches(SkeletonTopology::for_joints(cfg_.num_joints));
  const LayerPlan plan = cfg_.teacher_plan();
  for (auto& s : streams_) {
    s.input_bn = BatchNorm(plan.layers[0].in);
    for (const auto& l : plan.layers) s.layers.emplace_back(l, cfg_.blocks, rng);
    s.head = Linear(plan.layers.back().out, cfg_.num_classes, rng);
  }
}

NamedTensors TeacherModel::parameters() const {
  NamedTensors out;
  for (std::size_t m = 0; m < kNumModalities; ++m)
    append_prefixed(out, std::string(kModalityNames[m]) + ".", streams_[m].parameters());
  return out;
}

NamedTensors TeacherModel::buffers() const {
  NamedTensors out;
  for (std::size_t m = 0; m < kNumModalities; ++m)
    append_prefixed(out, std::string(kModalityNames[m]) + ".", streams_[m].buffers());
  return out;
}

void TeacherModel::freeze() {
  for (auto& p : parameters()) {
    p.tensor.set_requires_grad(false);
    p.tensor.zero_grad();
  }
}

TeacherOutput teacher_forward(const ModalityBundle& batch, TeacherModel& teacher, bool training) {
  const auto streams = batch.fusion_order();
  TeacherOutput out;
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    TeacherStream& st = teacher.streams()[m];
    Tensor x = st.input_bn.forward(joint_major(streams[m]), training);
    std::size_t tap = 0;
    for (std::size_t l = 0; l < st.layers.size(); ++l) {
      x = st.layers[l].forward(x, teacher.adjacency(), training);
      if (tap < kTeacherTaps.size() && l == kTeacherTaps[tap]) out.taps[tap++][m] = x;
    }
    out.logits[m] = st.head.forward(ops::mean(x, {2, 3}));
  }
  return out;
}

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
