#include "spikegraph/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "spikegraph/errors.hpp"
#include "spikegraph/ops.hpp"
#include "spikegraph/tape.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

namespace {

std::size_t channel_axis(const Tensor& t) {
  if (t.rank() < 4) throw DimensionError("spike tensor must be [S, (B,) D, V, T], got " + to_string(t.shape()));
  return t.rank() - 3;
}

}  // namespace

Tensor make_joint(const Tensor& p_a, const Tensor& p_b) {
  if (p_a.shape() != p_b.shape())
    throw DimensionError("make_joint: " + to_string(p_a.shape()) + " vs " + to_string(p_b.shape()));
  return ops::concat({p_a, p_b}, channel_axis(p_a));
}

std::vector<std::size_t> shuffle_permutation(std::size_t spike_steps, std::uint64_t seed) {
  std::vector<std::size_t> perm(spike_steps);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the order is library-independent.
  for (std::size_t i = spike_steps; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

Tensor make_marginal(const Tensor& p_a, const Tensor& p_b, std::uint64_t seed) {
  if (p_a.shape() != p_b.shape())
    throw DimensionError("make_marginal: " + to_string(p_a.shape()) + " vs " + to_string(p_b.shape()));
  const std::size_t S = p_b.dim(0);
  const auto perm = shuffle_permutation(S, seed);
  std::vector<Tensor> slices;
  slices.reserve(S);
  for (std::size_t s = 0; s < S; ++s) slices.push_back(ops::slice(p_b, 0, perm[s], perm[s] + 1));
  return make_joint(p_a, S == 1 ? p_b : ops::concat(slices, 0));
}

SmicNet::SmicNet(std::size_t pair_channels, std::size_t hidden, const LifConfig& l, Rng& rng)
    : lstm(pair_channels, hidden, rng), fc(hidden, 1, rng), lif(l) {}

NamedTensors SmicNet::parameters() const {
  NamedTensors out;
  append_prefixed(out, "lstm.", lstm.parameters());
  append_prefixed(out, "fc.", fc.parameters());
  return out;
}

Tensor smic_forward(const Tensor& x_in, const SmicNet& net) {
  Tensor x = x_in;
  if (x.rank() == 4) x = ops::reshape(x, {x.dim(0), 1, x.dim(1), x.dim(2), x.dim(3)});
  if (x.rank() != 5) throw DimensionError("smic_forward expects [S, B, 2D, V, T], got " + to_string(x.shape()));
  const std::size_t S = x.dim(0), B = x.dim(1), C = x.dim(2), T = x.dim(4);
  if (C != net.pair_channels())
    throw DimensionError("smic_forward: channel extent " + std::to_string(C) + " vs estimator input " +
                         std::to_string(net.pair_channels()));
  const std::size_t H = net.lstm.hidden_size(), N = S * B;
  // [S, B, C, V, T] -> mean over V -> [T, S*B, C]
  const Tensor pooled = ops::mean(x, {3});
  const Tensor seq = ops::permute(ops::reshape(pooled, {N, C, T}), {2, 0, 1});
  Tensor h = Tensor::zeros({N, H});
  Tensor c = Tensor::zeros({N, H});
  std::vector<Tensor> hs;
  hs.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    const Tensor xt = ops::reshape(ops::slice(seq, 0, t, t + 1), {N, C});
    LstmState st = lstm_cell(xt, h, c, net.lstm);
    h = st.h;
    c = st.c;
    hs.push_back(ops::reshape(h, {N, 1, H}));
  }
  // [S*B, T, H] -> [S, B*T, H] for the spiking neuron over S
  const Tensor stacked = ops::reshape(ops::concat(hs, 1), {S, B * T, H});
  const Tensor spikes = sn_layer(stacked, net.lif);
  const Tensor y = net.fc.forward(spikes);  // [S, B*T, 1]
  const Tensor per = ops::reshape(y, {S, B, T});
  return ops::mean(per, {0, 2});
}

Tensor mi_lower_bound(const Tensor& t_vals, const Tensor& et_vals) {
  if (t_vals.size() == 0 || et_vals.size() == 0) throw InvalidInputError("mi_lower_bound: empty sample set");
  for (Real e : et_vals.data())
    if (!(e > 0) || !std::isfinite(e)) throw NumericalError("mi_lower_bound: et must be positive and finite");
  return ops::sub(ops::mean(t_vals), ops::log(ops::mean(et_vals)));
}

void MiMatrix::set_pair(std::size_t i, std::size_t j, double value) {
  if (i == j) return;
  m[i][j] = value;
  m[j][i] = value;
}

bool MiMatrix::symmetric() const {
  for (std::size_t i = 0; i < kNumModalities; ++i) {
    if (m[i][i] != 0.0) return false;
    for (std::size_t j = 0; j < kNumModalities; ++j)
      if (m[i][j] != m[j][i]) return false;
  }
  return true;
}

FusionWeights compute_mi_weights(const MiMatrix& mi) {
  std::array<double, kNumModalities> row{};
  double total = 0.0;
  for (std::size_t i = 0; i < kNumModalities; ++i) {
    for (std::size_t j = 0; j < kNumModalities; ++j) {
      if (!std::isfinite(mi(i, j))) throw NumericalError("compute_mi_weights: non-finite bound");
      row[i] += mi(i, j);
    }
    total += row[i];
  }
  // Dividing by a negative total would reverse the ranking; its magnitude
  // keeps the order and leaves the min-max result unchanged.
  const double norm = std::abs(total) > 0.0 ? std::abs(total) : 1.0;
  for (double& r : row) r /= norm;
  const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
  FusionWeights out;
  const double span = *hi - *lo;
  if (!(span > 1e-12 * std::max(1.0, std::abs(*hi)))) {
    out.degenerate = true;
    out.w.fill(Real(1));
    return out;
  }
  const double mn = *lo;
  for (std::size_t i = 0; i < kNumModalities; ++i)
    out.w[i] = static_cast<Real>((row[i] - mn) / span);
  return out;
}

Tensor fuse_modalities(const std::array<Tensor, kNumModalities>& spikes, const FusionWeights& w) {
  for (std::size_t i = 1; i < kNumModalities; ++i)
    if (spikes[i].shape() != spikes[0].shape())
      throw DimensionError("fuse_modalities: modality shapes differ: " + to_string(spikes[0].shape()) +
                           " vs " + to_string(spikes[i].shape()));
  return ops::weighted_sum({spikes.begin(), spikes.end()}, {w.w.begin(), w.w.end()});
}

SmfEstimator::SmfEstimator(std::size_t channels, const SmfConfig& cfg, const LifConfig& lif, Rng& rng)
    : cfg_(cfg), counter_(0) {
  LifConfig smic_lif = lif;
  smic_lif.v_threshold = static_cast<Real>(cfg.smic_threshold);
  smic_lif.validate();
  for (std::size_t p = 0; p < kPairs.size(); ++p) {
    nets_.emplace_back(2 * channels, cfg.smic_hidden, smic_lif, rng);
    AdamOptions opt;
    opt.lr = cfg.smic_lr;
    optims_.push_back(std::make_unique<Adam>(nets_.back().parameters(), opt));
  }
}

SmfEstimator::Result SmfEstimator::update(const std::array<Tensor, kNumModalities>& spikes, bool train) {
  Result r;
  const std::uint64_t seed = cfg_.shuffle_seed * 0x9e3779b97f4a7c15ULL + counter_ * 8;
  if (train) ++counter_;
  for (std::size_t p = 0; p < kPairs.size(); ++p) {
    const auto [i, j] = kPairs[p];
    const Tensor a = spikes[i].detach();
    const Tensor b = spikes[j].detach();
    if (train) {
      Tape tape;
      TapeScope scope(tape);
      const Tensor t = smic_forward(make_joint(a, b), nets_[p]);
      const Tensor et = ops::exp(smic_forward(make_marginal(a, b, seed + p), nets_[p]));
      const Tensor bound = mi_lower_bound(t, et);
      r.mi.set_pair(i, j, bound.item());
      optims_[p]->zero_grad();
      tape.backward(ops::scale(bound, Real(-1)));
      optims_[p]->step();
    } else {
      NoGradScope ng;
      const Tensor t = smic_forward(make_joint(a, b), nets_[p]);
      const Tensor et = ops::exp(smic_forward(make_marginal(a, b, seed + p), nets_[p]));
      r.mi.set_pair(i, j, mi_lower_bound(t, et).item());
    }
  }
  r.weights = compute_mi_weights(r.mi);
  return r;
}

NamedTensors SmfEstimator::parameters() const {
  NamedTensors out;
  for (std::size_t p = 0; p < nets_.size(); ++p)
    append_prefixed(out, "pair" + std::to_string(p) + ".", nets_[p].parameters());
  return out;
}

NamedTensors SmfEstimator::optimizer_state() const {
  NamedTensors out;
  for (std::size_t p = 0; p < optims_.size(); ++p)
    append_prefixed(out, "pair" + std::to_string(p) + ".", optims_[p]->state());
  return out;
}

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
