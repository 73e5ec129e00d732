#include "spikegraph/distill.hpp"

#include <cmath>

#include "spikegraph/errors.hpp"
#include "spikegraph/ops.hpp"
#include "spikegraph/tape.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

void LossWeights::validate() const {
  for (double a : alpha)
    if (!(a >= 0.0)) throw ConfigError("loss alpha weights must be nonnegative");
  for (double v : {beta1, beta2, gamma1, gamma2, gamma3})
    if (!(v >= 0.0)) throw ConfigError("loss beta/gamma weights must be nonnegative");
}

Tensor aggregate_soft_labels(const Tensor& y_b, const Tensor& y_j, const Tensor& y_bm,
                             const Tensor& y_jm, const LossWeights& w) {
  return ops::weighted_sum({y_b, y_j, y_bm, y_jm}, {w.alpha.begin(), w.alpha.end()});
}

Tensor sdk_loss(const Tensor& y, const Tensor& y_mm) {
  if (y.shape() != y_mm.shape() || y.rank() != 2)
    throw DimensionError("sdk_loss expects equal [B, U] operands, got " + to_string(y.shape()) +
                         " and " + to_string(y_mm.shape()));
  const std::size_t B = y.dim(0), U = y.dim(1);
  std::vector<double> norms(B, 0.0);
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    double s = 0.0;
    for (std::size_t u = 0; u < U; ++u) {
      const double d = static_cast<double>(y[b * U + u]) - y_mm[b * U + u];
      s += d * d;
    }
    norms[b] = std::sqrt(s);
    total += norms[b];
  }
  Tensor out = Tensor::scalar(static_cast<Real>(total / static_cast<double>(B)));
  if (detail::should_record({&y, &y_mm})) {
    TensorImpl* yi = y.impl().get();
    TensorImpl* mi = y_mm.impl().get();
    TensorImpl* o = out.impl().get();
    detail::record("sdk_loss", {y.impl(), y_mm.impl()}, out, [yi, mi, o, B, U, norms]() {
      const double g = o->grad[0] / static_cast<double>(B);
      for (std::size_t b = 0; b < B; ++b) {
        if (norms[b] == 0.0) continue;  // subgradient 0 at the kink
        for (std::size_t u = 0; u < U; ++u) {
          const std::size_t i = b * U + u;
          const Real d = static_cast<Real>(g * (static_cast<double>(yi->data[i]) - mi->data[i]) / norms[b]);
          if (yi->requires_grad) yi->ensure_grad()[i] += d;
          if (mi->requires_grad) mi->ensure_grad()[i] -= d;
        }
      }
    });
  }
  return out;
}

Tensor fkd_loss(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.rank() < 2)
    throw DimensionError("fkd_loss expects equal [S, B, ...] operands, got " + to_string(a.shape()) +
                         " and " + to_string(b.shape()));
  const std::size_t S = a.dim(0), B = a.dim(1);
  const std::size_t inner = a.size() / (S * B);
  struct Sample {
    double dot = 0, na = 0, nb = 0;
  };
  std::vector<Sample> st(B);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t j = 0; j < B; ++j) {
      const std::size_t off = (s * B + j) * inner;
      Sample& q = st[j];
      for (std::size_t i = 0; i < inner; ++i) {
        const double x = a[off + i], y = b[off + i];
        q.dot += x * y;
        q.na += x * x;
        q.nb += y * y;
      }
    }
  double loss = 0.0;
  std::vector<double> cosv(B, 0.0);
  for (std::size_t j = 0; j < B; ++j) {
    const Sample& q = st[j];
    if (q.na > 0.0 && q.nb > 0.0) cosv[j] = q.dot / (std::sqrt(q.na) * std::sqrt(q.nb));
    loss += 1.0 - cosv[j];
  }
  Tensor out = Tensor::scalar(static_cast<Real>(loss / static_cast<double>(B)));
  if (detail::should_record({&a, &b})) {
    TensorImpl* ai = a.impl().get();
    TensorImpl* bi = b.impl().get();
    TensorImpl* o = out.impl().get();
    detail::record("fkd_loss", {a.impl(), b.impl()}, out, [ai, bi, o, S, B, inner, st, cosv]() {
      const double g = -static_cast<double>(o->grad[0]) / static_cast<double>(B);
      for (std::size_t j = 0; j < B; ++j) {
        const auto& q = st[j];
        if (!(q.na > 0.0 && q.nb > 0.0)) continue;
        const double nanb = std::sqrt(q.na) * std::sqrt(q.nb);
        for (std::size_t s = 0; s < S; ++s) {
          const std::size_t off = (s * B + j) * inner;
          for (std::size_t i = 0; i < inner; ++i) {
            const double x = ai->data[off + i], y = bi->data[off + i];
            if (ai->requires_grad)
              ai->ensure_grad()[off + i] += static_cast<Real>(g * (y / nanb - cosv[j] * x / q.na));
            if (bi->requires_grad)
              bi->ensure_grad()[off + i] += static_cast<Real>(g * (x / nanb - cosv[j] * y / q.nb));
          }
        }
      }
    });
  }
  return out;
}

Tensor total_loss(const Tensor& l_task, const Tensor& l_sdk, const Tensor& l_fkd1,
                  const Tensor& l_fkd2, const LossWeights& w) {
  for (const Tensor* t : {&l_task, &l_sdk, &l_fkd1, &l_fkd2})
    if (t->size() != 1 || !std::isfinite(t->item())) throw NumericalError("total_loss: components must be finite scalars");
  const Tensor l_fkd = ops::add(ops::scale(l_fkd1, static_cast<Real>(w.beta1)),
                                ops::scale(l_fkd2, static_cast<Real>(w.beta2)));
  return ops::add(ops::add(ops::scale(l_task, static_cast<Real>(w.gamma1)),
                           ops::scale(l_sdk, static_cast<Real>(w.gamma2))),
                  ops::scale(l_fkd, static_cast<Real>(w.gamma3)));
}

FtmModule::FtmModule(std::size_t teacher_channels, std::size_t student_channels, std::size_t spike_steps,
                     const LifConfig& lif, Rng& rng)
    : spike_steps_(spike_steps), lif_(lif) {
  const std::size_t c = kNumModalities * teacher_channels;
  ops::Conv2dOptions dw;
  dw.pad_h = dw.pad_w = 1;
  dw.groups = c;
  depthwise_ = Conv2d(c, c, 3, 3, dw, rng);
  pointwise_ = Conv2d(c, c, 1, 1, {}, rng);
  bn_fuse_ = BatchNorm(c);
  translate_ = Conv2d(c, student_channels, 1, 1, {}, rng);
  bn_translate_ = BatchNorm(student_channels);
}

Tensor FtmModule::forward(const std::array<Tensor, kNumModalities>& taps, bool training) {
  for (const auto& t : taps)
    if (t.shape() != taps[0].shape() || t.rank() != 4)
      throw DimensionError("FTM taps must share one [B, C, V, T] shape, got " + to_string(taps[0].shape()) +
                           " and " + to_string(t.shape()));
  const Tensor cat = ops::concat({taps.begin(), taps.end()}, 1);
  const Tensor fused = bn_fuse_.forward(pointwise_.forward(depthwise_.forward(cat)), training);
  // The translation conv sees S identical copies; compute it once and
  // normalize the replicated tensor.
  const Tensor y = translate_.forward(fused);
  const std::size_t S = spike_steps_, B = y.dim(0), C = y.dim(1), V = y.dim(2), T = y.dim(3);
  const Tensor rep = ops::broadcast_to(ops::reshape(y, {1, B, C, V, T}), {S, B, C, V, T});
  return sn_layer(bn_translate_.forward(rep, training, 2), lif_);
}

NamedTensors FtmModule::parameters() const {
  NamedTensors out;
  append_prefixed(out, "depthwise.", depthwise_.parameters());
  append_prefixed(out, "pointwise.", pointwise_.parameters());
  append_prefixed(out, "bn_fuse.", bn_fuse_.parameters());
  append_prefixed(out, "translate.", translate_.parameters());
  append_prefixed(out, "bn_translate.", bn_translate_.parameters());
  return out;
}

NamedTensors FtmModule::buffers() const {
  NamedTensors out;
  append_prefixed(out, "bn_fuse.", bn_fuse_.buffers());
  append_prefixed(out, "bn_translate.", bn_translate_.buffers());
  return out;
}

Tensor ftm_translate(const std::array<Tensor, kNumModalities>& taps, FtmModule& ftm, bool training) {
  return ftm.forward(taps, training);
}

FtmPair::FtmPair(const ModelConfig& cfg, Rng& rng) {
  const LayerPlan t = cfg.teacher_plan();
  const LayerPlan s = cfg.student_plan();
  for (std::size_t k = 0; k < 2; ++k)
    modules[k] = FtmModule(t.layers[kTeacherTaps[k]].out, s.layers[kStudentTaps[k]].out,
                           cfg.ssc.spike_steps, cfg.lif, rng);
}

NamedTensors FtmPair::parameters() const {
  NamedTensors out;
  append_prefixed(out, "ftm1.", modules[0].parameters());
  append_prefixed(out, "ftm2.", modules[1].parameters());
  return out;
}

NamedTensors FtmPair::buffers() const {
  NamedTensors out;
  append_prefixed(out, "ftm1.", modules[0].buffers());
  append_prefixed(out, "ftm2.", modules[1].buffers());
  return out;
}

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
