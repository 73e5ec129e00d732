#include "spikegraph/optim.hpp"

#include <cmath>

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

Sgd::Sgd(NamedTensors params, SgdOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) velocity_.push_back(Tensor::zeros(p.tensor.shape()));
}

void Sgd::step() {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k].tensor;
    if (!p.has_grad()) continue;
    auto w = p.data();
    auto g = p.grad();
    auto v = velocity_[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double d = g[i] + options_.weight_decay * w[i];
      v[i] = static_cast<Real>(options_.momentum * v[i] + d);
      w[i] = static_cast<Real>(w[i] - options_.lr * v[i]);
    }
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

NamedTensors Sgd::state() const {
  NamedTensors out;
  for (std::size_t k = 0; k < params_.size(); ++k)
    out.push_back({params_[k].name + ".momentum", velocity_[k]});
  return out;
}

Adam::Adam(NamedTensors params, AdamOptions options)
    : params_(std::move(params)), step_count_(Tensor::zeros({1})), options_(options) {
  for (const auto& p : params_) {
    m_.push_back(Tensor::zeros(p.tensor.shape()));
    v_.push_back(Tensor::zeros(p.tensor.shape()));
  }
}

void Adam::step() {
  step_count_[0] += 1;
  const double t = step_count_[0];
  const double c1 = 1.0 - std::pow(options_.beta1, t);
  const double c2 = 1.0 - std::pow(options_.beta2, t);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k].tensor;
    if (!p.has_grad()) continue;
    auto w = p.data();
    auto g = p.grad();
    auto m = m_[k].data();
    auto v = v_[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = static_cast<Real>(options_.beta1 * m[i] + (1.0 - options_.beta1) * g[i]);
      v[i] = static_cast<Real>(options_.beta2 * v[i] + (1.0 - options_.beta2) * g[i] * g[i]);
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      w[i] = static_cast<Real>(w[i] - options_.lr * mh / (std::sqrt(vh) + options_.eps));
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

NamedTensors Adam::state() const {
  NamedTensors out{{"adam.step", step_count_}};
  for (std::size_t k = 0; k < params_.size(); ++k) {
    out.push_back({params_[k].name + ".adam_m", m_[k]});
    out.push_back({params_[k].name + ".adam_v", v_[k]});
  }
  return out;
}

double step_lr(double base_lr, double decay, std::size_t step_epochs, std::size_t epoch) {
  if (step_epochs == 0) return base_lr;
  return base_lr * std::pow(decay, static_cast<double>(epoch / step_epochs));
}

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
