#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "spikegraph/ops.hpp"
#include "spikegraph/tensor.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

/// Seeded generator; every stochastic step in the library draws from one.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}
  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// Uniform(-bound, bound) with bound = gain / sqrt(fan_in).
Tensor init_uniform(const Shape& shape, std::size_t fan_in, Rng& rng, double gain = 1.0);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using NamedTensors = std::vector<NamedTensor>;

void append_prefixed(NamedTensors& into, const std::string& prefix, const NamedTensors& from);

/// y = x W + b with W stored [in, out]; x is [..., in].
struct Linear {
  Tensor weight;
  Tensor bias;  // may be undefined

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);
  Tensor forward(const Tensor& x) const;
  NamedTensors parameters() const;
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

struct Conv2d {
  Tensor weight;  // [Cout, Cin/groups, kh, kw]
  Tensor bias;    // may be undefined
  ops::Conv2dOptions options;

  Conv2d() = default;
  Conv2d(std::size_t cin, std::size_t cout, std::size_t kh, std::size_t kw,
         const ops::Conv2dOptions& opt, Rng& rng, bool with_bias = false);
  Tensor forward(const Tensor& x) const { return ops::conv2d(x, weight, options, bias); }
  NamedTensors parameters() const;
};

struct BatchNorm {
  Tensor gamma;
  Tensor beta;
  ops::RunningStats stats;

  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels);
  Tensor forward(const Tensor& x, bool training, std::size_t channel_axis = 1) {
    return ops::batch_norm(x, gamma, beta, stats, training, ops::kBnMomentum, ops::kBnEps, channel_axis);
  }
  NamedTensors parameters() const;
  NamedTensors buffers() const;
};

/// Gate order along the 4H axis: input, forget, cell, output.
struct LstmWeights {
  Tensor w_ih;  // [in, 4H]
  Tensor w_hh;  // [H, 4H]
  Tensor bias;  // [4H]

  LstmWeights() = default;
  LstmWeights(std::size_t in, std::size_t hidden, Rng& rng);
  std::size_t input_size() const { return w_ih.dim(0); }
  std::size_t hidden_size() const { return w_hh.dim(0); }
  NamedTensors parameters() const;
};

struct LstmState {
  Tensor h;
  Tensor c;
};

/// One step of the gated recurrence for x[N, in], h_prev/c_prev[N, H].
LstmState lstm_cell(const Tensor& x, const Tensor& h_prev, const Tensor& c_prev,
                    const LstmWeights& w);

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
