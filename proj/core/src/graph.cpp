#include "spikegraph/graph.hpp"

#include <cmath>

#include "spikegraph/errors.hpp"
#include "spikegraph/ops.hpp"
#include "spikegraph/tape.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

namespace {

void require5(const Tensor& x, const char* what) {
  if (x.rank() != 5) throw DimensionError(std::string(what) + " expects [S, B, C, V, T], got " + to_string(x.shape()));
}

// Batch norm over the channels of [S, B, C, V, T], statistics over S*B*V*T.
Tensor bn_sn(const Tensor& x, BatchNorm& bn, const LifConfig& lif, bool training) {
  return sn_layer(bn.forward(x, training, 2), lif);
}

Conv2d pointwise(std::size_t cin, std::size_t cout, Rng& rng, std::size_t stride_w = 1) {
  ops::Conv2dOptions opt;
  opt.stride_w = stride_w;
  return Conv2d(cin, cout, 1, 1, opt, rng);
}

struct SgcParts {
  Tensor branch_spikes, residual_spikes, h;
};

SgcParts sgc_parts(const Tensor& x, SaSgcLayer& layer, const AdjacencySet& adj, bool training) {
  require5(x, "sgc_forward");
  if (x.dim(2) != layer.in_channels)
    throw DimensionError("sgc_forward: input channels " + std::to_string(x.dim(2)) + " vs layer " +
                         std::to_string(layer.in_channels));
  if (x.dim(3) != adj.joints())
    throw DimensionError("sgc_forward: joint extent " + std::to_string(x.dim(3)) + " vs adjacency " +
                         std::to_string(adj.joints()));
  if (layer.branch.weight.dim(1) != adj.branches() * layer.in_channels)
    throw DimensionError("sgc_forward: branch weights expect " +
                         std::to_string(layer.branch.weight.dim(1) / layer.in_channels) +
                         " branches, adjacency has " + std::to_string(adj.branches()));
  SgcParts p;
  const Tensor agg = layer.branch.forward(graph_aggregate(x, adj));
  p.branch_spikes = bn_sn(agg, layer.bn_branch, layer.lif, training);
  const Tensor res = layer.residual.forward(x);
  p.residual_spikes = bn_sn(res, layer.bn_residual, layer.lif, training);
  p.h = ops::add(p.residual_spikes, p.branch_spikes);
  return p;
}

struct SsaParts {
  Tensor q, k, v, attention_spikes, h_sa;
};

SsaParts ssa_parts(const Tensor& h, SaSgcLayer& layer, bool training) {
  require5(h, "ssa_forward");
  const std::size_t C = h.dim(2);
  if (C != layer.out_channels)
    throw DimensionError("ssa_forward: channels " + std::to_string(C) + " vs attention weights " +
                         std::to_string(layer.out_channels));
  SsaParts p;
  const Tensor proj = layer.qkv.forward(h);
  const Tensor qkv = bn_sn(proj, layer.bn_qkv, layer.lif, training);
  p.q = ops::slice(qkv, 2, 0, C);
  p.k = ops::slice(qkv, 2, C, 2 * C);
  p.v = ops::slice(qkv, 2, 2 * C, 3 * C);
  // Tokens are the joints of each (spike step, sample, frame) slice.
  const Tensor back = ops::token_attention(p.q, p.k, p.v);
  p.attention_spikes = sn_layer(ops::scale(back, layer.attention_scale), layer.lif);
  p.h_sa = ops::add(h, p.attention_spikes);
  return p;
}

struct StcParts {
  Tensor main_spikes, residual_spikes, out;
};

StcParts stc_parts(const Tensor& h_sa, StcLayer& layer, bool training) {
  require5(h_sa, "stc_forward");
  if (h_sa.dim(2) != layer.channels)
    throw DimensionError("stc_forward: channels " + std::to_string(h_sa.dim(2)) + " vs layer " +
                         std::to_string(layer.channels));
  if (layer.stride > 1 && h_sa.dim(4) % layer.stride != 0)
    throw DimensionError("stc_forward: frame extent " + std::to_string(h_sa.dim(4)) +
                         " is not divisible by stride " + std::to_string(layer.stride));
  StcParts p;
  const Tensor conv = layer.temporal.forward(h_sa);
  p.main_spikes = bn_sn(conv, layer.bn, layer.lif, training);
  if (layer.stride == 1) {
    p.residual_spikes = sn_layer(h_sa, layer.lif);
  } else {
    const Tensor proj = layer.projection.forward(h_sa);
    p.residual_spikes = sn_layer(proj, layer.lif);
  }
  p.out = ops::add(p.main_spikes, p.residual_spikes);
  return p;
}

}  // namespace

Tensor normalize_adjacency(const Tensor& a, bool add_self_loops) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1))
    throw DimensionError("normalize_adjacency expects a square matrix, got " + to_string(a.shape()));
  const std::size_t V = a.dim(0);
  std::vector<double> m(V * V);
  for (std::size_t i = 0; i < V * V; ++i) {
    const double x = a[i];
    if (!std::isfinite(x) || x < 0) throw InvalidInputError("normalize_adjacency: entries must be finite and nonnegative");
    m[i] = x;
  }
  if (add_self_loops)
    for (std::size_t i = 0; i < V; ++i) m[i * V + i] += 1.0;
  std::vector<double> inv_sqrt(V, 0.0);
  for (std::size_t i = 0; i < V; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < V; ++j) d += m[i * V + j];
    inv_sqrt[i] = d > 0 ? 1.0 / std::sqrt(d) : 0.0;
  }
  Tensor out = Tensor::zeros({V, V});
  for (std::size_t i = 0; i < V; ++i)
    for (std::size_t j = 0; j < V; ++j)
      out[i * V + j] = static_cast<Real>(inv_sqrt[i] * m[i * V + j] * inv_sqrt[j]);
  return out;
}

AdjacencySet::AdjacencySet(std::vector<Tensor> matrices) : mats_(std::move(matrices)) {
  if (mats_.empty()) throw InvalidInputError("adjacency set needs at least one branch");
  const std::size_t V = mats_[0].dim(0);
  rows_.resize(mats_.size() * V);
  for (std::size_t k = 0; k < mats_.size(); ++k) {
    if (mats_[k].shape() != Shape{V, V})
      throw DimensionError("adjacency branches must all be " + std::to_string(V) + "x" + std::to_string(V));
    for (std::size_t v = 0; v < V; ++v)
      for (std::size_t u = 0; u < V; ++u) {
        const Real a = mats_[k][v * V + u];
        if (a != 0) rows_[k * V + v].push_back({static_cast<std::uint32_t>(u), static_cast<double>(a)});
      }
  }
}

AdjacencySet AdjacencySet::permuted(const std::vector<std::size_t>& pi) const {
  const std::size_t V = joints();
  if (pi.size() != V) throw DimensionError("permutation length does not match joint count");
  std::vector<Tensor> out;
  for (const auto& m : mats_) {
    Tensor p = Tensor::zeros({V, V});
    for (std::size_t i = 0; i < V; ++i)
      for (std::size_t j = 0; j < V; ++j) p[pi[i] * V + pi[j]] = m[i * V + j];
    out.push_back(p);
  }
  return AdjacencySet(std::move(out));
}

AdjacencySet partition_branches(const SkeletonTopology& topo) {
  topo.validate();
  const std::size_t V = topo.num_joints;
  Tensor self = Tensor::zeros({V, V});
  Tensor inward = Tensor::zeros({V, V});
  Tensor outward = Tensor::zeros({V, V});
  for (auto [child, parent] : topo.edges) {
    inward[parent * V + child] = 1;   // parent gathers from child
    outward[child * V + parent] = 1;  // child gathers from parent
  }
  return AdjacencySet({normalize_adjacency(self, true), normalize_adjacency(inward, true),
                       normalize_adjacency(outward, true)});
}

Tensor graph_aggregate(const Tensor& x, const AdjacencySet& adj) {
  if (x.rank() < 4) throw DimensionError("graph_aggregate expects [..., C, V, T], got " + to_string(x.shape()));
  const std::size_t r = x.rank();
  const std::size_t C = x.dim(r - 3), V = x.dim(r - 2), T = x.dim(r - 1), K = adj.branches();
  const std::size_t N = x.size() / (C * V * T);
  if (V != adj.joints())
    throw DimensionError("graph_aggregate: joint extent " + std::to_string(V) + " vs adjacency " +
                         std::to_string(adj.joints()));
  Shape out_shape(x.shape().begin(), x.shape().end() - 3);
  out_shape.insert(out_shape.end(), {K * C, V, T});
  Tensor out = Tensor::zeros(out_shape);
  const Real* xs = x.data().data();
  Real* ys = out.data().data();
  std::vector<double> acc(T);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t c = 0; c < C; ++c) {
        const Real* plane = xs + (n * C + c) * V * T;
        Real* dst = ys + ((n * K + k) * C + c) * V * T;
        for (std::size_t v = 0; v < V; ++v) {
          std::fill(acc.begin(), acc.end(), 0.0);
          for (const auto& e : adj.row(k, v)) {
            const Real* src = plane + e.col * T;
            for (std::size_t t = 0; t < T; ++t) acc[t] += e.value * src[t];
          }
          for (std::size_t t = 0; t < T; ++t) dst[v * T + t] = static_cast<Real>(acc[t]);
        }
      }
  if (detail::should_record({&x})) {
    TensorImpl* xi = x.impl().get();
    TensorImpl* o = out.impl().get();
    detail::record("graph_aggregate", {x.impl()}, out, [xi, o, adj, N, C, V, T, K]() {
      auto& gx = xi->ensure_grad();
      const Real* gy = o->grad.data();
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 0; k < K; ++k)
          for (std::size_t c = 0; c < C; ++c) {
            Real* dplane = gx.data() + (n * C + c) * V * T;
            const Real* g = gy + ((n * K + k) * C + c) * V * T;
            for (std::size_t v = 0; v < V; ++v)
              for (const auto& e : adj.row(k, v)) {
                Real* d = dplane + e.col * T;
                const Real a = static_cast<Real>(e.value);
                for (std::size_t t = 0; t < T; ++t) d[t] += a * g[v * T + t];
              }
          }
    });
  }
  return out;
}

SaSgcLayer::SaSgcLayer(std::size_t cin, std::size_t cout, std::size_t branches, const BlockConfig& cfg,
                       const LifConfig& l, Rng& rng)
    : in_channels(cin),
      out_channels(cout),
      branch(pointwise(branches * cin, cout, rng)),
      bn_branch(cout),
      residual(pointwise(cin, cout, rng)),
      bn_residual(cout),
      qkv(pointwise(cout, 3 * cout, rng)),
      bn_qkv(3 * cout),
      attention_scale(static_cast<Real>(cfg.attention_scale)),
      lif(l) {
  lif.validate();
}

NamedTensors SaSgcLayer::parameters() const {
  NamedTensors out;
  append_prefixed(out, "branch.", branch.parameters());
  append_prefixed(out, "bn_branch.", bn_branch.parameters());
  append_prefixed(out, "residual.", residual.parameters());
  append_prefixed(out, "bn_residual.", bn_residual.parameters());
  append_prefixed(out, "qkv.", qkv.parameters());
  append_prefixed(out, "bn_qkv.", bn_qkv.parameters());
  return out;
}

NamedTensors SaSgcLayer::buffers() const {
  NamedTensors out;
  append_prefixed(out, "bn_branch.", bn_branch.buffers());
  append_prefixed(out, "bn_residual.", bn_residual.buffers());
  append_prefixed(out, "bn_qkv.", bn_qkv.buffers());
  return out;
}

StcLayer::StcLayer(std::size_t c, std::size_t s, const BlockConfig& cfg, const LifConfig& l, Rng& rng)
    : channels(c), stride(s), bn(c), lif(l) {
  if (s != 1 && s != 2) throw InvalidInputError("STC stride must be 1 or 2");
  if (cfg.temporal_kernel % 2 == 0) throw InvalidInputError("temporal kernel must be odd");
  lif.validate();
  ops::Conv2dOptions opt;
  opt.stride_w = s;
  opt.pad_w = (cfg.temporal_kernel - 1) / 2;
  temporal = Conv2d(c, c, 1, cfg.temporal_kernel, opt, rng);
  if (s > 1) projection = pointwise(c, c, rng, s);
}

NamedTensors StcLayer::parameters() const {
  NamedTensors out;
  append_prefixed(out, "temporal.", temporal.parameters());
  append_prefixed(out, "bn.", bn.parameters());
  if (projection.weight.defined()) append_prefixed(out, "projection.", projection.parameters());
  return out;
}

NamedTensors StcLayer::buffers() const {
  NamedTensors out;
  append_prefixed(out, "bn.", bn.buffers());
  return out;
}

Tensor sgc_forward(const Tensor& x, SaSgcLayer& layer, const AdjacencySet& adj, bool training) {
  return sgc_parts(x, layer, adj, training).h;
}

Tensor ssa_forward(const Tensor& h, SaSgcLayer& layer, bool training) {
  return ssa_parts(h, layer, training).h_sa;
}

Tensor stc_forward(const Tensor& h_sa, StcLayer& layer, bool training) {
  return stc_parts(h_sa, layer, training).out;
}

GraphBlock::GraphBlock(std::size_t cin, std::size_t cout, std::size_t stride, const BlockConfig& cfg,
                       const LifConfig& lif, Rng& rng)
    : sgc(cin, cout, cfg.branches, cfg, lif, rng), stc(cout, stride, cfg, lif, rng) {}

NamedTensors GraphBlock::parameters() const {
  NamedTensors out;
  append_prefixed(out, "sgc.", sgc.parameters());
  append_prefixed(out, "stc.", stc.parameters());
  return out;
}

NamedTensors GraphBlock::buffers() const {
  NamedTensors out;
  append_prefixed(out, "sgc.", sgc.buffers());
  append_prefixed(out, "stc.", stc.buffers());
  return out;
}

Tensor sa_sgc_stc_block(const Tensor& x, GraphBlock& block, const AdjacencySet& adj, bool training) {
  const Tensor h = sgc_forward(x, block.sgc, adj, training);
  const Tensor h_sa = ssa_forward(h, block.sgc, training);
  return stc_forward(h_sa, block.stc, training);
}

BlockTrace trace_block(const Tensor& x, GraphBlock& block, const AdjacencySet& adj, bool training) {
  BlockTrace tr;
  const SgcParts g = sgc_parts(x, block.sgc, adj, training);
  tr.sgc_branch_spikes = g.branch_spikes;
  tr.sgc_residual_spikes = g.residual_spikes;
  tr.h = g.h;
  const SsaParts a = ssa_parts(g.h, block.sgc, training);
  tr.q = a.q;
  tr.k = a.k;
  tr.v = a.v;
  tr.attention_spikes = a.attention_spikes;
  tr.h_sa = a.h_sa;
  const StcParts s = stc_parts(a.h_sa, block.stc, training);
  tr.stc_main_spikes = s.main_spikes;
  tr.stc_residual_spikes = s.residual_spikes;
  tr.out = s.out;
  return tr;
}

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
