#include "spikegraph/neurons.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "spikegraph/errors.hpp"
#include "spikegraph/ops.hpp"
#include "spikegraph/tape.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

void LifConfig::validate() const {
  if (!(v_threshold > v_reset)) throw InvalidInputError("LIF: v_threshold must exceed v_reset");
  if (!(decay_tau > 0 && decay_tau <= 1)) throw InvalidInputError("LIF: decay_tau must be in (0, 1]");
  if (!(surrogate_window_a > 0)) throw InvalidInputError("LIF: surrogate window must be positive");
}

Real spike_value(Real h, const LifConfig& cfg) {
  if (cfg.relaxed) {
    const Real r = (h - cfg.v_threshold) / cfg.surrogate_window_a + Real(0.5);
    return std::clamp(r, Real(0), Real(1));
  }
  return h >= cfg.v_threshold ? Real(1) : Real(0);
}

Real surrogate_grad(Real h, const LifConfig& cfg) {
  const Real a = cfg.surrogate_window_a;
  const Real d = std::abs(h - cfg.v_threshold);
  // The relaxed forward is flat at the window edges.
  const bool inside = cfg.relaxed ? d < a / 2 : d <= a / 2;
  return inside ? Real(1) / a : Real(0);
}

bool is_binary(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(),
                     [](Real v) { return v == Real(0) || v == Real(1); });
}

double firing_rate(const Tensor& t) {
  if (!is_binary(t)) throw InvalidInputError("firing rate requested for a non-binary tensor");
  if (t.size() == 0) return 0.0;
  double ones = 0;
  for (Real v : t.data()) ones += v;
  return ones / static_cast<double>(t.size());
}

SpikeTensor SpikeTensor::wrap(Tensor t) {
  double s = 0;
  for (Real v : t.data()) s += v;
  const double rate = t.size() ? s / static_cast<double>(t.size()) : 0.0;
  return {std::move(t), rate};
}

namespace {

void check_finite(const Tensor& t, const char* what) {
  bool ok = true;
  for (Real v : t.data()) ok &= std::abs(v) <= std::numeric_limits<Real>::max();
  if (!ok) throw NumericalError(std::string(what) + ": non-finite membrane potential");
}

}  // namespace

Tensor spike_nonlinearity(const Tensor& x, const LifConfig& cfg) {
  check_finite(x, "spike_nonlinearity");
  Tensor out = Tensor::zeros(x.shape());
  auto xs = x.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = spike_value(xs[i], cfg);
  if (detail::should_record({&x})) {
    TensorImpl* xi = x.impl().get();
    TensorImpl* o = out.impl().get();
    detail::record("spike", {x.impl()}, out, [xi, o, cfg]() {
      auto& g = xi->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * surrogate_grad(xi->data[i], cfg);
    });
  }
  return out;
}

LifStep lif_step(const Tensor& input, const Tensor& v_prev, const LifConfig& cfg) {
  if (input.shape() != v_prev.shape()) {
    throw DimensionError("lif_step: input " + to_string(input.shape()) + " vs state " +
                         to_string(v_prev.shape()));
  }
  Tensor h = ops::add(ops::scale(v_prev, cfg.decay_tau), input);
  check_finite(h, "lif_step");
  Tensor s = spike_nonlinearity(h, cfg);
  Tensor v = ops::add(ops::sub(h, ops::mul(s, h)), ops::scale(s, cfg.v_reset));
  return {s, v};
}

Tensor sn_layer(const Tensor& x, const LifConfig& cfg) {
  if (x.rank() == 0 || x.dim(0) == 0) throw InvalidInputError("sn_layer: spike-step extent S must be >= 1");
  check_finite(x, "sn_layer");
  const std::size_t S = x.dim(0);
  const std::size_t n = x.size() / S;
  Tensor out = Tensor::zeros(x.shape());
  std::vector<Real> h_all(x.size());
  std::vector<Real> v(n, cfg.v_reset);
  const Real* xs = x.data().data();
  Real* ys = out.data().data();
  const Real tau = cfg.decay_tau, vth = cfg.v_threshold, vr = cfg.v_reset;
  const Real inv_a = Real(1) / cfg.surrogate_window_a;
  for (std::size_t s = 0; s < S; ++s) {
    const Real* xr = xs + s * n;
    Real* hr = h_all.data() + s * n;
    Real* yr = ys + s * n;
    if (cfg.relaxed) {
      for (std::size_t i = 0; i < n; ++i) {
        const Real h = tau * v[i] + xr[i];
        const Real sp = std::clamp((h - vth) * inv_a + Real(0.5), Real(0), Real(1));
        hr[i] = h;
        yr[i] = sp;
        v[i] = h * (Real(1) - sp) + vr * sp;
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        const Real h = tau * v[i] + xr[i];
        const Real sp = h >= vth ? Real(1) : Real(0);
        hr[i] = h;
        yr[i] = sp;
        v[i] = sp != Real(0) ? vr : h;
      }
    }
  }
  if (detail::should_record({&x})) {
    TensorImpl* xi = x.impl().get();
    TensorImpl* o = out.impl().get();
    detail::record("sn_layer", {x.impl()}, out, [xi, o, cfg, S, n, h_all = std::move(h_all)]() {
      auto& gx = xi->ensure_grad();
      const Real* gy = o->grad.data();
      const Real* ys = o->data.data();
      const Real tau = cfg.decay_tau, vth = cfg.v_threshold, vr = cfg.v_reset;
      const Real a = cfg.surrogate_window_a, half = a / 2, inv_a = Real(1) / a;
      std::vector<Real> dv(n, Real(0));  // dL/dv_t carried backwards
      for (std::size_t s = S; s-- > 0;) {
        const Real* hr = h_all.data() + s * n;
        const Real* yr = ys + s * n;
        const Real* gr = gy + s * n;
        Real* dr = gx.data() + s * n;
        for (std::size_t i = 0; i < n; ++i) {
          const Real h = hr[i];
          const Real d = std::abs(h - vth);
          // The relaxed forward is flat at the window edges.
          const bool inside = cfg.relaxed ? d < half : d <= half;
          const Real sg = inside ? inv_a : Real(0);
          const Real dh = gr[i] * sg + dv[i] * ((Real(1) - yr[i]) + (vr - h) * sg);
          dr[i] += dh;
          dv[i] = tau * dh;
        }
      }
    });
  }
  return out;
}

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
