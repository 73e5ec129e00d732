#pragma once

#include <vector>

#include "spikegraph/neurons.hpp"
#include "spikegraph/nn.hpp"
#include "spikegraph/skeleton.hpp"
#include "spikegraph/tensor.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

/// D^{-1/2} (A [+ I]) D^{-1/2} with D the row sums; zero-degree rows and
/// columns map to zero. Throws InvalidInputError on negative or non-finite
/// entries.
Tensor normalize_adjacency(const Tensor& a, bool add_self_loops);

/// K normalized V x V propagation matrices plus their sparse row lists.
class AdjacencySet {
 public:
  AdjacencySet() = default;
  explicit AdjacencySet(std::vector<Tensor> matrices);

  std::size_t branches() const { return mats_.size(); }
  std::size_t joints() const { return mats_.empty() ? 0 : mats_[0].dim(0); }
  const Tensor& matrix(std::size_t k) const { return mats_[k]; }
  const std::vector<Tensor>& matrices() const { return mats_; }

  struct Entry {
    std::uint32_t col;
    double value;
  };
  /// Nonzeros of row v of branch k, in increasing column order.
  const std::vector<Entry>& row(std::size_t k, std::size_t v) const { return rows_[k * joints() + v]; }

  /// Relabels joints: entry (pi[i], pi[j]) of the result equals (i, j) here.
  AdjacencySet permuted(const std::vector<std::size_t>& pi) const;

 private:
  std::vector<Tensor> mats_;
  std::vector<std::vector<Entry>> rows_;
};

/// Self, inward (child to parent) and outward (parent to child) branches,
/// each normalized with self-loops.
AdjacencySet partition_branches(const SkeletonTopology& topo);

/// x[N, C, V, T] -> [N, K*C, V, T] with out[n, k*C + c, v, t] =
/// sum_u A_k[v, u] x[n, c, u, t]. Accumulates in double, so the result does
/// not depend on joint order for low-degree graphs.
Tensor graph_aggregate(const Tensor& x, const AdjacencySet& adj);

struct BlockConfig {
  double attention_scale = 0.125;
  std::size_t temporal_kernel = 5;
  std::size_t branches = 3;
};

struct SaSgcLayer {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  Conv2d branch;    // sum_k A_k x W_k as one 1x1 conv over K*Cin channels
  BatchNorm bn_branch;
  Conv2d residual;  // x W_r
  BatchNorm bn_residual;
  Conv2d qkv;       // fused W_Q, W_K, W_V
  BatchNorm bn_qkv;
  Real attention_scale = 0.125f;
  LifConfig lif;

  SaSgcLayer() = default;
  SaSgcLayer(std::size_t cin, std::size_t cout, std::size_t branches, const BlockConfig& cfg,
             const LifConfig& lif, Rng& rng);
  NamedTensors parameters() const;
  NamedTensors buffers() const;
};

struct StcLayer {
  std::size_t channels = 0;
  std::size_t stride = 1;
  Conv2d temporal;
  BatchNorm bn;
  Conv2d projection;  // defined only when stride > 1
  LifConfig lif;

  StcLayer() = default;
  StcLayer(std::size_t channels, std::size_t stride, const BlockConfig& cfg, const LifConfig& lif,
           Rng& rng);
  NamedTensors parameters() const;
  NamedTensors buffers() const;
};

/// Input and outputs are [S, B, C, V, T].
Tensor sgc_forward(const Tensor& x, SaSgcLayer& layer, const AdjacencySet& adj, bool training);
Tensor ssa_forward(const Tensor& h, SaSgcLayer& layer, bool training);
Tensor stc_forward(const Tensor& h_sa, StcLayer& layer, bool training);

struct GraphBlock {
  SaSgcLayer sgc;
  StcLayer stc;

  GraphBlock() = default;
  GraphBlock(std::size_t cin, std::size_t cout, std::size_t stride, const BlockConfig& cfg,
             const LifConfig& lif, Rng& rng);
  NamedTensors parameters() const;
  NamedTensors buffers() const;
};

Tensor sa_sgc_stc_block(const Tensor& x, GraphBlock& block, const AdjacencySet& adj, bool training);

/// Intermediate tensors of one block, for inspection and tests.
struct BlockTrace {
  Tensor sgc_branch_spikes;
  Tensor sgc_residual_spikes;
  Tensor h;
  Tensor q, k, v;
  Tensor attention_spikes;
  Tensor h_sa;
  Tensor stc_main_spikes;
  Tensor stc_residual_spikes;
  Tensor out;
};

BlockTrace trace_block(const Tensor& x, GraphBlock& block, const AdjacencySet& adj, bool training);

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
