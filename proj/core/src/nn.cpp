#include "spikegraph/nn.hpp"

#include <cmath>

#include "spikegraph/errors.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

Tensor init_uniform(const Shape& shape, std::size_t fan_in, Rng& rng, double gain) {
  const double bound = gain / std::sqrt(static_cast<double>(std::max<std::size_t>(1, fan_in)));
  Tensor t = Tensor::zeros(shape);
  for (auto& v : t.data()) v = static_cast<Real>(rng.uniform(-bound, bound));
  t.set_requires_grad(true);
  return t;
}

void append_prefixed(NamedTensors& into, const std::string& prefix, const NamedTensors& from) {
  for (const auto& nt : from) into.push_back({prefix + nt.name, nt.tensor});
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias)
    : weight(init_uniform({in, out}, in, rng)) {
  if (with_bias) bias = init_uniform({out}, in, rng);
}

Tensor Linear::forward(const Tensor& x) const {
  Tensor y = ops::matmul(x, weight);
  return bias.defined() ? ops::add(y, bias) : y;
}

NamedTensors Linear::parameters() const {
  NamedTensors out{{"weight", weight}};
  if (bias.defined()) out.push_back({"bias", bias});
  return out;
}

Conv2d::Conv2d(std::size_t cin, std::size_t cout, std::size_t kh, std::size_t kw,
               const ops::Conv2dOptions& opt, Rng& rng, bool with_bias)
    : options(opt) {
  const std::size_t fan_in = (cin / opt.groups) * kh * kw;
  weight = init_uniform({cout, cin / opt.groups, kh, kw}, fan_in, rng, std::sqrt(3.0));
  if (with_bias) bias = init_uniform({cout}, fan_in, rng);
}

NamedTensors Conv2d::parameters() const {
  NamedTensors out{{"weight", weight}};
  if (bias.defined()) out.push_back({"bias", bias});
  return out;
}

BatchNorm::BatchNorm(std::size_t channels)
    : gamma(Tensor::ones({channels})), beta(Tensor::zeros({channels})) {
  gamma.set_requires_grad(true);
  beta.set_requires_grad(true);
  stats.mean = Tensor::zeros({channels});
  stats.var = Tensor::ones({channels});
}

NamedTensors BatchNorm::parameters() const { return {{"gamma", gamma}, {"beta", beta}}; }

NamedTensors BatchNorm::buffers() const {
  return {{"running_mean", stats.mean}, {"running_var", stats.var}};
}

LstmWeights::LstmWeights(std::size_t in, std::size_t hidden, Rng& rng)
    : w_ih(init_uniform({in, 4 * hidden}, hidden, rng)),
      w_hh(init_uniform({hidden, 4 * hidden}, hidden, rng)),
      bias(init_uniform({4 * hidden}, hidden, rng)) {}

NamedTensors LstmWeights::parameters() const {
  return {{"w_ih", w_ih}, {"w_hh", w_hh}, {"bias", bias}};
}

LstmState lstm_cell(const Tensor& x, const Tensor& h_prev, const Tensor& c_prev,
                    const LstmWeights& w) {
  const std::size_t H = w.hidden_size();
  if (x.rank() != 2 || x.dim(1) != w.input_size()) {
    throw DimensionError("lstm_cell: input " + to_string(x.shape()) + " vs w_ih " +
                         to_string(w.w_ih.shape()));
  }
  if (h_prev.shape() != Shape{x.dim(0), H} || c_prev.shape() != Shape{x.dim(0), H}) {
    throw DimensionError("lstm_cell: state extents " + to_string(h_prev.shape()) + " / " +
                         to_string(c_prev.shape()) + " do not match hidden size " +
                         std::to_string(H));
  }
  Tensor gates =
      ops::add(ops::add(ops::matmul(x, w.w_ih), ops::matmul(h_prev, w.w_hh)), w.bias);
  Tensor i = ops::sigmoid(ops::slice(gates, 1, 0, H));
  Tensor f = ops::sigmoid(ops::slice(gates, 1, H, 2 * H));
  Tensor g = ops::tanh(ops::slice(gates, 1, 2 * H, 3 * H));
  Tensor o = ops::sigmoid(ops::slice(gates, 1, 3 * H, 4 * H));
  Tensor c = ops::add(ops::mul(f, c_prev), ops::mul(i, g));
  Tensor h = ops::mul(o, ops::tanh(c));
  return {h, c};
}

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
