#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include "spikegraph/neurons.hpp"
#include "spikegraph/nn.hpp"
#include "spikegraph/optim.hpp"
#include "spikegraph/tensor.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

inline constexpr std::size_t kNumModalities = 4;

/// Channel concatenation of two spike tensors (channel axis is rank-3 for
/// [S, D, V, T] or rank-3 from the end for [S, B, D, V, T]).
Tensor make_joint(const Tensor& p_a, const Tensor& p_b);

/// Seeded permutation of the S axis.
std::vector<std::size_t> shuffle_permutation(std::size_t spike_steps, std::uint64_t seed);

/// Same as make_joint after permuting p_b's S-slices with `seed`.
Tensor make_marginal(const Tensor& p_a, const Tensor& p_b, std::uint64_t seed);

/// Recurrent estimator: LSTM over frames (inputs pooled over joints), spiking
/// neuron over S, linear map to a scalar, global average.
struct SmicNet {
  LstmWeights lstm;
  Linear fc;
  LifConfig lif;

  SmicNet() = default;
  SmicNet(std::size_t pair_channels, std::size_t hidden, const LifConfig& lif, Rng& rng);
  std::size_t pair_channels() const { return lstm.input_size(); }
  NamedTensors parameters() const;
};

/// x[S, B, 2D, V, T] (or [S, 2D, V, T] for one sample) -> t[B] (or [1]).
Tensor smic_forward(const Tensor& x, const SmicNet& net);

/// mean(t) - log(mean(et)). Throws NumericalError if any et <= 0.
Tensor mi_lower_bound(const Tensor& t_vals, const Tensor& et_vals);

/// Pairwise bounds in the order bone, joint, bone motion, joint motion.
struct MiMatrix {
  std::array<std::array<double, kNumModalities>, kNumModalities> m{};

  double operator()(std::size_t i, std::size_t j) const { return m[i][j]; }
  /// Writes (i, j) and (j, i); the diagonal stays zero.
  void set_pair(std::size_t i, std::size_t j, double value);
  bool symmetric() const;
};

struct FusionWeights {
  std::array<Real, kNumModalities> w{1, 1, 1, 1};
  bool degenerate = false;
};

/// Row sums normalized by the magnitude of their total, then min-max scaled.
FusionWeights compute_mi_weights(const MiMatrix& mi);

/// sum_i w_i * P_i; weights are constants.
Tensor fuse_modalities(const std::array<Tensor, kNumModalities>& spikes, const FusionWeights& w);

struct SmfConfig {
  std::size_t smic_hidden = 64;
  double smic_lr = 1e-3;
  /// Firing threshold of the estimator's neuron. The LSTM output is bounded
  /// by tanh, so the block threshold of 1 would leave it silent and untrainable.
  double smic_threshold = 0.5;
  std::uint64_t shuffle_seed = 0;
};

/// Six pair estimators with their own optimizers, trained by gradient ascent
/// on the bound once per batch, separately from the task loss.
class SmfEstimator {
 public:
  SmfEstimator() = default;
  SmfEstimator(std::size_t channels, const SmfConfig& cfg, const LifConfig& lif, Rng& rng);

  struct Result {
    MiMatrix mi;
    FusionWeights weights;
  };

  /// Estimates the matrix on detached spikes [S, B, D, V, T]; optionally
  /// takes one ascent step per pair. The shuffle seed advances per training
  /// call only, so evaluation is repeatable.
  Result update(const std::array<Tensor, kNumModalities>& spikes, bool train);

  static constexpr std::array<std::pair<std::size_t, std::size_t>, 6> kPairs = {
      {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}};

  NamedTensors parameters() const;
  NamedTensors optimizer_state() const;
  std::uint64_t counter() const { return counter_; }
  void set_counter(std::uint64_t c) { counter_ = c; }
  std::vector<SmicNet>& nets() { return nets_; }

 private:
  SmfConfig cfg_;
  std::vector<SmicNet> nets_;
  std::vector<std::unique_ptr<Adam>> optims_;
  std::uint64_t counter_ = 0;
};

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
