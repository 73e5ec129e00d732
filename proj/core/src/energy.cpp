#include "spikegraph/energy.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "spikegraph/errors.hpp"
#include "spikegraph/ops.hpp"
#include "spikegraph/tape.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

namespace {

constexpr std::array<std::pair<LayerKind, const char*>, 6> kKindNames = {{
    {LayerKind::Conv, "conv"},
    {LayerKind::Linear, "linear"},
    {LayerKind::MatmulAttention, "matmul_attention"},
    {LayerKind::Lstm, "lstm"},
    {LayerKind::Bn, "bn"},
    {LayerKind::Pooling, "pooling"},
}};

constexpr std::array<std::pair<CostRole, const char*>, 6> kRoleNames = {{
    {CostRole::FirstLayer, "first_layer"},
    {CostRole::Conv, "conv"},
    {CostRole::Fc, "fc"},
    {CostRole::Ssa, "ssa"},
    {CostRole::Smic, "smic"},
    {CostRole::Excluded, "excluded"},
}};

LayerShape conv_shape(const Conv2d& conv, std::size_t hout, std::size_t wout) {
  LayerShape s;
  s.kind = LayerKind::Conv;
  s.cout = conv.weight.dim(0);
  s.groups = conv.options.groups;
  s.cin = conv.weight.dim(1) * s.groups;
  s.kh = conv.weight.dim(2);
  s.kw = conv.weight.dim(3);
  s.hout = hout;
  s.wout = wout;
  return s;
}

LayerCost make_cost(std::string id, const LayerShape& shape, CostRole role, double rate,
                    std::size_t spike_steps) {
  LayerCost c;
  c.id = std::move(id);
  c.kind = shape.kind;
  c.role = role;
  c.flops = count_flops(shape);
  c.rate = rate;
  c.spike_steps = spike_steps;
  c.sops = compute_sops(c.flops, rate, spike_steps);
  return c;
}

double role_sops(const EnergyReport& r, CostRole role) {
  double s = 0;
  for (const auto& l : r.layers)
    if (l.role == role) s += l.sops;
  return s;
}

}  // namespace

std::string to_string(LayerKind kind) {
  for (const auto& [k, n] : kKindNames)
    if (k == kind) return n;
  return "unknown";
}

LayerKind parse_layer_kind(const std::string& text) {
  for (const auto& [k, n] : kKindNames)
    if (text == n) return k;
  throw InvalidInputError("unknown layer kind '" + text + "'");
}

std::string to_string(CostRole role) {
  for (const auto& [k, n] : kRoleNames)
    if (k == role) return n;
  return "unknown";
}

CostRole parse_cost_role(const std::string& text) {
  for (const auto& [k, n] : kRoleNames)
    if (text == n) return k;
  throw InvalidInputError("unknown cost role '" + text + "'");
}

std::string to_string(ModelKind kind) { return kind == ModelKind::MkSgn ? "mk-sgn" : "base-sgn"; }

double count_flops(const LayerShape& s) {
  switch (s.kind) {
    case LayerKind::Conv:
      if (s.groups == 0 || s.cin % s.groups)
        throw InvalidInputError("count_flops: channels not divisible by groups");
      return static_cast<double>(s.cout) * static_cast<double>(s.cin / s.groups) *
             static_cast<double>(s.kh * s.kw) * static_cast<double>(s.hout * s.wout);
    case LayerKind::Linear:
      return static_cast<double>(s.cin) * static_cast<double>(s.cout);
    case LayerKind::MatmulAttention:
      return 2.0 * static_cast<double>(s.tokens) * static_cast<double>(s.tokens) *
             static_cast<double>(s.cin) * static_cast<double>(s.slices);
    case LayerKind::Lstm:
      return static_cast<double>(s.steps) * 4.0 * static_cast<double>(s.cout) *
             static_cast<double>(s.cin + s.cout);
    case LayerKind::Bn:
    case LayerKind::Pooling:
      return 0.0;
  }
  return 0.0;
}

double measure_firing_rate(const Tensor& spikes) { return firing_rate(spikes); }

double activity_rate(const Tensor& t) {
  if (t.size() == 0) throw InvalidInputError("activity_rate of an empty tensor");
  std::size_t n = 0;
  for (Real x : t.data()) n += (x != 0);
  return static_cast<double>(n) / static_cast<double>(t.size());
}

double compute_sops(double flops, double r, std::size_t spike_steps) {
  if (!(r >= 0.0 && r <= 1.0)) throw InvalidInputError("firing rate must lie in [0, 1]");
  if (spike_steps == 0) throw InvalidInputError("spike steps must be positive");
  if (!(flops >= 0.0) || !std::isfinite(flops)) throw InvalidInputError("flops must be finite and >= 0");
  return r * static_cast<double>(spike_steps) * flops;
}

double energy_ann(double flops_total) { return kEmacPj * flops_total * 1e-9; }

double energy_snn(const EnergyReport& r, ModelKind kind) {
  double fl1 = 0;
  bool found = false;
  for (const auto& l : r.layers)
    if (l.role == CostRole::FirstLayer) {
      fl1 += l.flops;
      found = true;
    }
  if (!found) throw InvalidInputError("energy_snn: no layer tagged as the first layer");
  const double conv = role_sops(r, CostRole::Conv);
  const double fc = role_sops(r, CostRole::Fc);
  double pj = 0;
  if (kind == ModelKind::BaseSgn) {
    pj = kEmacPj * fl1 + kEacPj * (conv + fc);
  } else {
    const double pairs = static_cast<double>(r.k * (r.k - 1)) / 2.0;
    pj = static_cast<double>(r.n_m) * kEmacPj * fl1 +
         kEacPj * (pairs * role_sops(r, CostRole::Smic) + conv + fc + role_sops(r, CostRole::Ssa));
  }
  return pj * 1e-9;
}

void EnergyReport::finalize() {
  flops_total = 0;
  sops_total = 0;
  for (const auto& l : layers) {
    flops_total += l.flops;
    sops_total += l.sops;
  }
  energy_mJ = energy_snn(*this, kind);
}

double EnergyReport::dense_flops() const {
  const double pairs = static_cast<double>(k * (k - 1)) / 2.0;
  double total = 0;
  for (const auto& l : layers) {
    if (l.role == CostRole::FirstLayer) total += static_cast<double>(n_m) * l.flops;
    else if (l.role == CostRole::Smic) total += (kind == ModelKind::MkSgn ? pairs : 0.0) * l.flops;
    else total += l.flops;
  }
  return total;
}

nlohmann::json EnergyReport::to_json() const {
  nlohmann::json j;
  j["model"] = model;
  j["n_m"] = n_m;
  j["k"] = k;
  j["S"] = spike_steps;
  j["e_mac_pJ"] = kEmacPj;
  j["e_ac_pJ"] = kEacPj;
  auto& arr = j["layers"] = nlohmann::json::array();
  for (const auto& l : layers) {
    arr.push_back({{"id", l.id},
                   {"kind", to_string(l.kind)},
                   {"role", to_string(l.role)},
                   {"flops", l.flops},
                   {"r", l.rate},
                   {"S", l.spike_steps},
                   {"sops", l.sops},
                   {"first_layer", l.role == CostRole::FirstLayer}});
  }
  j["totals"] = {{"flops", flops_total}, {"sops", sops_total}, {"energy_mJ", energy_mJ}};
  if (ann_equivalent_mJ) j["ann_equivalent_mJ"] = *ann_equivalent_mJ;
  return j;
}

std::string EnergyReport::to_csv() const {
  std::ostringstream os;
  char buf[256];
  os << "id,kind,role,flops,r,S,sops\n";
  for (const auto& l : layers) {
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%zu,%.17g\n", l.flops, l.rate, l.spike_steps, l.sops);
    os << l.id << ',' << to_string(l.kind) << ',' << to_string(l.role) << buf;
  }
  std::snprintf(buf, sizeof buf, "total,,,%.17g,,%zu,%.17g\n", flops_total, spike_steps, sops_total);
  os << buf;
  return os.str();
}

EnergyReport profile_model(MkSgnModel& model, const ModalityBatch& calibration) {
  NoGradScope no_grad;
  const ModelConfig& cfg = model.config();
  const auto streams = calibration.streams.fusion_order();
  const std::size_t S = cfg.ssc.spike_steps;
  const std::size_t V = cfg.num_joints;
  const std::size_t T = streams[0].dim(2);

  EnergyReport rep;
  rep.model = "mk-sgn";
  rep.kind = ModelKind::MkSgn;
  rep.n_m = kNumModalities;
  rep.k = kNumModalities;
  rep.spike_steps = S;

  // Spike coding: the dense first layer, counted once per modality.
  double in_rate = 0;
  std::array<Tensor, kNumModalities> spikes;
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    in_rate += activity_rate(streams[m]) / kNumModalities;
    spikes[m] = model.encoders()[m].forward(streams[m], false);
  }
  rep.layers.push_back(make_cost("ssc.conv", conv_shape(model.encoders()[0].conv(), V, T),
                                 CostRole::FirstLayer, in_rate, S));

  FusionWeights weights;
  if (cfg.use_smf) {
    weights = model.smf().update(spikes, false).weights;
    // One estimator: LSTM over T on pooled pair input, then a per-frame FC.
    const SmicNet& net = model.smf().nets().front();
    double pair_rate = 0;
    for (const auto& [i, j] : SmfEstimator::kPairs)
      pair_rate += (measure_firing_rate(spikes[i]) + measure_firing_rate(spikes[j])) / 2.0 /
                   SmfEstimator::kPairs.size();
    LayerShape lstm;
    lstm.kind = LayerKind::Lstm;
    lstm.cin = net.lstm.input_size();
    lstm.cout = net.lstm.hidden_size();
    lstm.steps = T;
    rep.layers.push_back(make_cost("smf.smic.lstm", lstm, CostRole::Smic, pair_rate, S));
    LayerShape fc;
    fc.kind = LayerKind::Linear;
    fc.cin = net.fc.in_features();
    fc.cout = net.fc.out_features() * T;
    rep.layers.push_back(make_cost("smf.smic.fc", fc, CostRole::Smic, pair_rate, S));
  }
  Tensor x = fuse_modalities(spikes, weights);

  std::size_t t_cur = T;
  for (std::size_t b = 0; b < model.blocks().size(); ++b) {
    GraphBlock& blk = model.blocks()[b];
    const BlockTrace tr = trace_block(x, blk, model.adjacency(), false);
    const std::string p = "block" + std::to_string(b) + ".";
    const double rx = activity_rate(x);

    LayerShape agg;
    agg.kind = LayerKind::Conv;
    agg.cin = V;
    agg.cout = V * model.adjacency().branches();
    agg.hout = blk.sgc.in_channels;
    agg.wout = t_cur;
    rep.layers.push_back(make_cost(p + "sgc.aggregate", agg, CostRole::Conv, rx, S));
    rep.layers.push_back(
        make_cost(p + "sgc.branch", conv_shape(blk.sgc.branch, V, t_cur), CostRole::Conv, rx, S));
    rep.layers.push_back(
        make_cost(p + "sgc.residual", conv_shape(blk.sgc.residual, V, t_cur), CostRole::Conv, rx, S));
    rep.layers.push_back(make_cost(p + "ssa.qkv", conv_shape(blk.sgc.qkv, V, t_cur), CostRole::Conv,
                                   activity_rate(tr.h), S));
    LayerShape att;
    att.kind = LayerKind::MatmulAttention;
    att.tokens = V;
    att.cin = blk.sgc.out_channels;
    att.slices = t_cur;
    const double qkv_rate = (measure_firing_rate(tr.q) + measure_firing_rate(tr.k) +
                             measure_firing_rate(tr.v)) / 3.0;
    rep.layers.push_back(make_cost(p + "ssa.attention", att, CostRole::Ssa, qkv_rate, S));

    const std::size_t t_out = t_cur / blk.stc.stride;
    const double rsa = activity_rate(tr.h_sa);
    rep.layers.push_back(make_cost(p + "stc.temporal", conv_shape(blk.stc.temporal, V, t_out),
                                   CostRole::Conv, rsa, S));
    if (blk.stc.projection.weight.defined())
      rep.layers.push_back(make_cost(p + "stc.projection", conv_shape(blk.stc.projection, V, t_out),
                                     CostRole::Conv, rsa, S));
    x = tr.out;
    t_cur = t_out;
  }

  const Tensor head_spikes = sn_layer(x, model.head_lif());
  LayerShape head;
  head.kind = LayerKind::Linear;
  head.cin = model.head().in_features();
  head.cout = model.head().out_features();
  rep.layers.push_back(make_cost("head.fc", head, CostRole::Fc, measure_firing_rate(head_spikes), S));

  rep.finalize();
  rep.ann_equivalent_mJ = energy_ann(rep.dense_flops());
  return rep;
}

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
