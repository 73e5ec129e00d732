#include "gradient_oracle.hpp"

#include "spikegraph/encoding.hpp"
#include "spikegraph/gradcheck.hpp"
#include "spikegraph/graph.hpp"
#include "spikegraph/network.hpp"
#include "spikegraph/ops.hpp"

static_assert(sizeof(spikegraph::Real) == 8, "the oracle must compile against the float64 build");

namespace acceptance {

using namespace spikegraph;

OracleSummary run_gradient_oracle(double rel_tol) {
  constexpr std::size_t B = 2, V = 5, T = 8, S = 2, D = 4, U = 3;
  Rng rng(2024);
  LifConfig lif;
  lif.relaxed = true;
  SscConfig ssc_cfg;
  ssc_cfg.spike_steps = S;
  ssc_cfg.hidden_channels = D;
  SscEncoder ssc(ssc_cfg, lif, rng);
  const AdjacencySet adj = partition_branches(SkeletonTopology::random_tree(V, rng));
  GraphBlock b0(D, 4, 1, {}, lif, rng);
  GraphBlock b1(4, 8, 2, {}, lif, rng);
  Linear head(8, U, rng);

  Tensor x = Tensor::zeros({B, 3, T, V});
  for (auto& v : x.data()) v = rng.uniform(-1.5, 1.5);
  const std::vector<int> labels{0, 2};

  std::vector<Tensor> leaves;
  for (const NamedTensors& group : {ssc.parameters(), b0.parameters(), b1.parameters(), head.parameters()})
    for (const auto& p : group) leaves.push_back(p.tensor);

  const auto loss = [&] {
    Tensor h = ssc.forward(x, true);
    h = sa_sgc_stc_block(h, b0, adj, true);
    h = sa_sgc_stc_block(h, b1, adj, true);
    const Tensor pooled = ops::mean(sn_layer(h, lif), {3, 4});
    return task_loss(ops::mean(head.forward(pooled), {0}), labels);
  };

  GradCheckOptions opt;
  opt.h = 1e-6;
  opt.tol = rel_tol;
  opt.abs_floor = 1e-8;
  opt.required_pass_fraction = 0.0;
  const GradCheckReport r = grad_check(loss, leaves, opt);

  OracleSummary s;
  s.parameters = r.checked;
  s.within_tol = r.within_tol;
  s.max_rel_error = r.max_rel_error;
  s.finite = r.finite;
  s.message = r.message;
  return s;
}

}  // namespace acceptance
