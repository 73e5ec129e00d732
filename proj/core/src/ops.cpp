#include "spikegraph/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "spikegraph/errors.hpp"
#include "spikegraph/tape.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION::ops {

namespace {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

std::vector<std::size_t> contiguous_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Iteration plan over `out` with two secondary stride sets (0 = broadcast).
struct Plan {
  Shape out;
  std::vector<std::size_t> sa;
  std::vector<std::size_t> sb;
};

template <class F>
void for_each(const Plan& p, F&& f) {
  const std::size_t r = p.out.size();
  if (r == 0) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t n = numel(p.out);
  const std::size_t inner = p.out[r - 1];
  if (n == 0 || inner == 0) return;
  const std::size_t sa_in = p.sa[r - 1];
  const std::size_t sb_in = p.sb[r - 1];
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; i += inner) {
    std::size_t a = ia, b = ib;
    for (std::size_t j = 0; j < inner; ++j) {
      f(i + j, a, b);
      a += sa_in;
      b += sb_in;
    }
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      ia += p.sa[d];
      ib += p.sb[d];
      if (idx[d] < p.out[d]) break;
      ia -= p.sa[d] * p.out[d];
      ib -= p.sb[d] * p.out[d];
      idx[d] = 0;
    }
  }
}

Plan broadcast_plan(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Plan p;
  p.out.assign(r, 1);
  p.sa.assign(r, 0);
  p.sb.assign(r, 0);
  const auto st_a = contiguous_strides(a);
  const auto st_b = contiguous_strides(b);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t ea = i + a.size() >= r ? a[i + a.size() - r] : 1;
    const std::size_t eb = i + b.size() >= r ? b[i + b.size() - r] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError("cannot broadcast shapes " + to_string(a) + " and " + to_string(b));
    }
    p.out[i] = std::max(ea, eb);
    if (ea != 1) p.sa[i] = st_a[i + a.size() - r];
    if (eb != 1) p.sb[i] = st_b[i + b.size() - r];
  }
  return p;
}

template <class Fwd, class Da, class Db>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Da da, Db db) {
  const Plan p = broadcast_plan(a.shape(), b.shape());
  Tensor out = Tensor::zeros(p.out);
  {
    const Real* xa = a.data().data();
    const Real* xb = b.data().data();
    Real* y = out.data().data();
    if (a.shape() == b.shape()) {
      for (std::size_t i = 0, n = out.size(); i < n; ++i) y[i] = fwd(xa[i], xb[i]);
    } else {
      for_each(p, [&](std::size_t i, std::size_t ia, std::size_t ib) { y[i] = fwd(xa[ia], xb[ib]); });
    }
  }
  if (detail::should_record({&a, &b})) {
    auto ia_ = a.impl();
    auto ib_ = b.impl();
    TensorImpl* o = out.impl().get();
    detail::record(name, {ia_, ib_}, out, [p, ia = ia_.get(), ib = ib_.get(), o, da, db]() {
      const Real* g = o->grad.data();
      const Real* xa = ia->data.data();
      const Real* xb = ib->data.data();
      Real* ga = ia->requires_grad ? ia->ensure_grad().data() : nullptr;
      Real* gb = ib->requires_grad ? ib->ensure_grad().data() : nullptr;
      if (ia->shape == ib->shape) {
        const std::size_t n = o->data.size();
        if (ga)
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * da(xa[i], xb[i]);
        if (gb)
          for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * db(xa[i], xb[i]);
        return;
      }
      for_each(p, [&](std::size_t i, std::size_t ka, std::size_t kb) {
        if (ga) ga[ka] += g[i] * da(xa[ka], xb[kb]);
        if (gb) gb[kb] += g[i] * db(xa[ka], xb[kb]);
      });
    });
  }
  return out;
}

// Derivative expressed through input x and output y.
template <class Fwd, class Deriv>
Tensor unary(const char* name, const Tensor& x, Fwd fwd, Deriv deriv) {
  Tensor out = Tensor::zeros(x.shape());
  {
    const auto xs = x.data();
    auto ys = out.data();
    for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = fwd(xs[i]);
  }
  if (detail::should_record({&x})) {
    TensorImpl* xi = x.impl().get();
    TensorImpl* o = out.impl().get();
    detail::record(name, {x.impl()}, out, [xi, o, deriv]() {
      auto& gx = xi->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o->grad[i] * deriv(xi->data[i], o->data[i]);
    });
  }
  return out;
}

std::vector<bool> axis_mask(std::size_t rank, const std::vector<std::size_t>& axes) {
  std::vector<bool> m(rank, false);
  for (auto a : axes) {
    if (a >= rank) throw DimensionError("reduction axis " + std::to_string(a) + " out of range");
    m[a] = true;
  }
  return m;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](Real x, Real y) { return x + y; }, [](Real, Real) { return 1.0f; },
      [](Real, Real) { return 1.0f; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](Real x, Real y) { return x - y; }, [](Real, Real) { return 1.0f; },
      [](Real, Real) { return -1.0f; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](Real x, Real y) { return x * y; }, [](Real, Real y) { return y; },
      [](Real x, Real) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](Real x, Real y) { return x / y; }, [](Real, Real y) { return 1.0f / y; },
      [](Real x, Real y) { return -x / (y * y); });
}

Tensor scale(const Tensor& x, Real c) {
  return unary(
      "scale", x, [c](Real v) { return c * v; }, [c](Real, Real) { return c; });
}

Tensor add_scalar(const Tensor& x, Real c) {
  return unary(
      "add_scalar", x, [c](Real v) { return v + c; }, [](Real, Real) { return 1.0f; });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](Real v) { return std::exp(v); }, [](Real, Real y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](Real v) { return std::log(v); }, [](Real v, Real) { return 1.0f / v; });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      "sqrt", x, [](Real v) { return std::sqrt(v); },
      [](Real, Real y) { return y > 0.0f ? 0.5f / y : 0.0f; });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](Real v) { return v > 0.0f ? v : 0.0f; },
      [](Real v, Real) { return v > 0.0f ? 1.0f : 0.0f; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x, [](Real v) { return 1.0f / (1.0f + std::exp(-v)); },
      [](Real, Real y) { return y * (1.0f - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](Real v) { return std::tanh(v); }, [](Real, Real y) { return 1.0f - y * y; });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (Real v : x.data()) acc += v;
  Tensor out = Tensor::scalar(static_cast<Real>(acc));
  if (detail::should_record({&x})) {
    TensorImpl* xi = x.impl().get();
    TensorImpl* o = out.impl().get();
    detail::record("sum", {x.impl()}, out, [xi, o]() {
      auto& gx = xi->ensure_grad();
      const Real g = o->grad[0];
      for (auto& v : gx) v += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw InvalidInputError("mean of an empty tensor");
  return scale(sum(x), 1.0f / static_cast<Real>(x.size()));
}

Tensor max(const Tensor& x) {
  if (x.size() == 0) throw InvalidInputError("max of an empty tensor");
  const auto xs = x.data();
  const std::size_t arg =
      static_cast<std::size_t>(std::max_element(xs.begin(), xs.end()) - xs.begin());
  Tensor out = Tensor::scalar(xs[arg]);
  if (detail::should_record({&x})) {
    TensorImpl* xi = x.impl().get();
    TensorImpl* o = out.impl().get();
    detail::record("max", {x.impl()}, out,
                   [xi, o, arg]() { xi->ensure_grad()[arg] += o->grad[0]; });
  }
  return out;
}

Tensor sum(const Tensor& x, const std::vector<std::size_t>& axes, bool keepdim) {
  const Shape& in = x.shape();
  const auto mask = axis_mask(in.size(), axes);
  Shape kept(in.size());
  Shape out_shape;
  for (std::size_t i = 0; i < in.size(); ++i) {
    kept[i] = mask[i] ? 1 : in[i];
    if (!mask[i] || keepdim) out_shape.push_back(kept[i]);
  }
  const auto kst = contiguous_strides(kept);
  Plan p{in, contiguous_strides(in), std::vector<std::size_t>(in.size(), 0)};
  for (std::size_t i = 0; i < in.size(); ++i) p.sb[i] = mask[i] ? 0 : kst[i];

  std::vector<double> acc(numel(kept), 0.0);
  const Real* xs = x.data().data();
  for_each(p, [&](std::size_t, std::size_t ia, std::size_t ib) { acc[ib] += xs[ia]; });
  std::vector<Real> vals(acc.begin(), acc.end());
  Tensor out(out_shape, std::move(vals));
  if (detail::should_record({&x})) {
    TensorImpl* xi = x.impl().get();
    TensorImpl* o = out.impl().get();
    detail::record("sum_axes", {x.impl()}, out, [p, xi, o]() {
      Real* gx = xi->ensure_grad().data();
      const Real* g = o->grad.data();
      for_each(p, [&](std::size_t, std::size_t ia, std::size_t ib) { gx[ia] += g[ib]; });
    });
  }
  return out;
}

Tensor mean(const Tensor& x, const std::vector<std::size_t>& axes, bool keepdim) {
  std::size_t count = 1;
  for (auto a : axes) count *= x.dim(a);
  if (count == 0) throw InvalidInputError("mean over empty axes");
  return scale(sum(x, axes, keepdim), 1.0f / static_cast<Real>(count));
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  Tensor out(shape, std::vector<Real>(x.data().begin(), x.data().end()));
  if (detail::should_record({&x})) {
    TensorImpl* xi = x.impl().get();
    TensorImpl* o = out.impl().get();
    detail::record("reshape", {x.impl()}, out, [xi, o]() {
      // The output gradient is final once this entry runs, so it can be moved.
      if (xi->grad.empty()) {
        xi->grad.swap(o->grad);
        return;
      }
      auto& gx = xi->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o->grad[i];
    });
  }
  return out;
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const Shape& in = x.shape();
  if (order.size() != in.size()) throw DimensionError("permute order rank mismatch");
  std::vector<bool> seen(in.size(), false);
  Shape out_shape(in.size());
  const auto ist = contiguous_strides(in);
  Plan p;
  p.sb.resize(in.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i] >= in.size() || seen[order[i]]) throw DimensionError("invalid permutation");
    seen[order[i]] = true;
    out_shape[i] = in[order[i]];
    p.sb[i] = ist[order[i]];
  }
  p.out = out_shape;
  p.sa = contiguous_strides(out_shape);
  Tensor out = Tensor::zeros(out_shape);
  const Real* xs = x.data().data();
  Real* ys = out.data().data();
  for_each(p, [&](std::size_t i, std::size_t, std::size_t ib) { ys[i] = xs[ib]; });
  if (detail::should_record({&x})) {
    TensorImpl* xi = x.impl().get();
    TensorImpl* o = out.impl().get();
    detail::record("permute", {x.impl()}, out, [p, xi, o]() {
      Real* gx = xi->ensure_grad().data();
      const Real* g = o->grad.data();
      for_each(p, [&](std::size_t i, std::size_t, std::size_t ib) { gx[ib] += g[i]; });
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw InvalidInputError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw DimensionError("concat axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& t : parts) {
    const Shape& s = t.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) {
      throw DimensionError("concat shape mismatch: " + to_string(first) + " vs " + to_string(s));
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t out_row = out_shape[axis] * inner;

  Tensor out = Tensor::zeros(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& t : parts) {
    offsets.push_back(off);
    const std::size_t row = t.shape()[axis] * inner;
    const Real* src = t.data().data();
    Real* dst = out.data().data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src + o * row, row, dst + o * out_row + off);
    }
    off += row;
  }
  if (detail::should_record(parts)) {
    std::vector<std::shared_ptr<TensorImpl>> ins;
    for (const auto& t : parts) ins.push_back(t.impl());
    std::vector<TensorImpl*> raw;
    for (const auto& t : parts) raw.push_back(t.impl().get());
    TensorImpl* o = out.impl().get();
    detail::record("concat", std::move(ins), out, [raw, offsets, outer, inner, axis, out_row, o]() {
      for (std::size_t k = 0; k < raw.size(); ++k) {
        if (!raw[k]->requires_grad) continue;
        const std::size_t row = raw[k]->shape[axis] * inner;
        Real* g = raw[k]->ensure_grad().data();
        for (std::size_t q = 0; q < outer; ++q) {
          const Real* src = o->grad.data() + q * out_row + offsets[k];
          for (std::size_t j = 0; j < row; ++j) g[q * row + j] += src[j];
        }
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& in = x.shape();
  if (axis >= in.size() || begin > end || end > in[axis]) {
    throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for axis " + std::to_string(axis) + " of " + to_string(in));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
  for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
  Shape out_shape = in;
  out_shape[axis] = end - begin;
  const std::size_t in_row = in[axis] * inner;
  const std::size_t out_row = (end - begin) * inner;
  Tensor out = Tensor::zeros(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.data().data() + o * in_row + begin * inner, out_row,
                out.data().data() + o * out_row);
  }
  if (detail::should_record({&x})) {
    TensorImpl* xi = x.impl().get();
    TensorImpl* o = out.impl().get();
    detail::record("slice", {x.impl()}, out, [xi, o, outer, in_row, out_row, begin, inner]() {
      Real* g = xi->ensure_grad().data();
      for (std::size_t q = 0; q < outer; ++q) {
        const Real* src = o->grad.data() + q * out_row;
        Real* dst = g + q * in_row + begin * inner;
        for (std::size_t j = 0; j < out_row; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  const Plan bp = broadcast_plan(x.shape(), shape);
  if (bp.out != shape) {
    throw DimensionError("cannot broadcast " + to_string(x.shape()) + " to " + to_string(shape));
  }
  Plan p{shape, contiguous_strides(shape), bp.sa};
  Tensor out = Tensor::zeros(shape);
  const Real* xs = x.data().data();
  Real* ys = out.data().data();
  for_each(p, [&](std::size_t i, std::size_t, std::size_t ib) { ys[i] = xs[ib]; });
  if (detail::should_record({&x})) {
    TensorImpl* xi = x.impl().get();
    TensorImpl* o = out.impl().get();
    detail::record("broadcast_to", {x.impl()}, out, [p, xi, o]() {
      Real* gx = xi->ensure_grad().data();
      const Real* g = o->grad.data();
      for_each(p, [&](std::size_t i, std::size_t, std::size_t ib) { gx[ib] += g[i]; });
    });
  }
  return out;
}

namespace {

Tensor softmax_impl(const Tensor& x, bool log_form) {
  if (x.rank() == 0) throw DimensionError("softmax of a scalar");
  const std::size_t n = x.shape().back();
  const std::size_t rows = n ? x.size() / n : 0;
  Tensor out = Tensor::zeros(x.shape());
  const Real* xs = x.data().data();
  Real* ys = out.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* row = xs + r * n;
    Real* yr = ys + r * n;
    const Real m = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(static_cast<double>(row[j] - m));
    const double lz = std::log(z);
    for (std::size_t j = 0; j < n; ++j) {
      const double lp = static_cast<double>(row[j] - m) - lz;
      yr[j] = static_cast<Real>(log_form ? lp : std::exp(lp));
    }
  }
  if (detail::should_record({&x})) {
    TensorImpl* xi = x.impl().get();
    TensorImpl* o = out.impl().get();
    detail::record(log_form ? "log_softmax" : "softmax", {x.impl()}, out,
                   [xi, o, n, rows, log_form]() {
                     Real* gx = xi->ensure_grad().data();
                     for (std::size_t r = 0; r < rows; ++r) {
                       const Real* g = o->grad.data() + r * n;
                       const Real* y = o->data.data() + r * n;
                       double s = 0.0;
                       if (log_form) {
                         for (std::size_t j = 0; j < n; ++j) s += g[j];
                         for (std::size_t j = 0; j < n; ++j)
                           gx[r * n + j] += g[j] - static_cast<Real>(std::exp(y[j]) * s);
                       } else {
                         for (std::size_t j = 0; j < n; ++j) s += g[j] * y[j];
                         for (std::size_t j = 0; j < n; ++j)
                           gx[r * n + j] += y[j] * (g[j] - static_cast<Real>(s));
                       }
                     }
                   });
  }
  return out;
}

}  // namespace

Tensor softmax(const Tensor& x) { return softmax_impl(x, false); }
Tensor log_softmax(const Tensor& x) { return softmax_impl(x, true); }

// Below this extent Eigen's blocked GEMM costs more than it saves.
constexpr std::size_t kSmallGemm = 32;

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  const std::size_t m = a.shape()[a.rank() - 2];
  const std::size_t k = a.shape().back();
  const std::size_t kb = b.shape()[b.rank() - 2];
  const std::size_t n = b.shape().back();
  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  const bool a_bcast = batch_a.empty() && !batch_b.empty();
  const bool b_bcast = batch_b.empty() && !batch_a.empty();
  if (k != kb || (!a_bcast && !b_bcast && batch_a != batch_b)) {
    throw DimensionError("matmul shape mismatch: " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  Shape out_shape = a_bcast ? batch_b : batch_a;
  const std::size_t batches = numel(out_shape);
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out = Tensor::zeros(out_shape);

  const Real* pa = a.data().data();
  const Real* pb = b.data().data();
  Real* pc = out.data().data();

  if (b_bcast) {
    // a is [batches*m, k]: one GEMM.
    MapMat(pc, batches * m, n).noalias() = CMapMat(pa, batches * m, k) * CMapMat(pb, k, n);
  } else if (a_bcast) {
    // Gather b into [k, batches*n] so the shared left operand runs as one GEMM.
    RowMat bt(k, batches * n);
    for (std::size_t q = 0; q < batches; ++q)
      bt.block(0, q * n, k, n) = CMapMat(pb + q * k * n, k, n);
    RowMat ct = CMapMat(pa, m, k) * bt;
    for (std::size_t q = 0; q < batches; ++q)
      MapMat(pc + q * m * n, m, n) = ct.block(0, q * n, m, n);
  } else {
    const bool small = std::max({m, k, n}) <= kSmallGemm;
    for (std::size_t q = 0; q < batches; ++q) {
      CMapMat A(pa + q * m * k, m, k), B(pb + q * k * n, k, n);
      if (small) MapMat(pc + q * m * n, m, n).noalias() = A.lazyProduct(B);
      else MapMat(pc + q * m * n, m, n).noalias() = A * B;
    }
  }

  if (detail::should_record({&a, &b})) {
    TensorImpl* ai = a.impl().get();
    TensorImpl* bi = b.impl().get();
    TensorImpl* o = out.impl().get();
    detail::record("matmul", {a.impl(), b.impl()}, out,
                   [ai, bi, o, m, k, n, batches, a_bcast, b_bcast]() {
                     const Real* g = o->grad.data();
                     const Real* pa = ai->data.data();
                     const Real* pb = bi->data.data();
                     if (b_bcast) {
                       CMapMat G(g, batches * m, n);
                       if (ai->requires_grad)
                         MapMat(ai->ensure_grad().data(), batches * m, k).noalias() +=
                             G * CMapMat(pb, k, n).transpose();
                       if (bi->requires_grad)
                         MapMat(bi->ensure_grad().data(), k, n).noalias() +=
                             CMapMat(pa, batches * m, k).transpose() * G;
                     } else if (a_bcast) {
                       RowMat gt(m, batches * n), bt(k, batches * n);
                       for (std::size_t q = 0; q < batches; ++q) {
                         gt.block(0, q * n, m, n) = CMapMat(g + q * m * n, m, n);
                         bt.block(0, q * n, k, n) = CMapMat(pb + q * k * n, k, n);
                       }
                       if (ai->requires_grad)
                         MapMat(ai->ensure_grad().data(), m, k).noalias() += gt * bt.transpose();
                       if (bi->requires_grad) {
                         RowMat gb = CMapMat(pa, m, k).transpose() * gt;
                         Real* dst = bi->ensure_grad().data();
                         for (std::size_t q = 0; q < batches; ++q)
                           MapMat(dst + q * k * n, k, n) += gb.block(0, q * n, k, n);
                       }
                     } else {
                       const bool small = std::max({m, k, n}) <= kSmallGemm;
                       Real* ga = ai->requires_grad ? ai->ensure_grad().data() : nullptr;
                       Real* gb = bi->requires_grad ? bi->ensure_grad().data() : nullptr;
                       for (std::size_t q = 0; q < batches; ++q) {
                         CMapMat G(g + q * m * n, m, n);
                         CMapMat A(pa + q * m * k, m, k), B(pb + q * k * n, k, n);
                         if (ga) {
                           MapMat GA(ga + q * m * k, m, k);
                           if (small) GA.noalias() += G.lazyProduct(B.transpose());
                           else GA.noalias() += G * B.transpose();
                         }
                         if (gb) {
                           MapMat GB(gb + q * k * n, k, n);
                           if (small) GB.noalias() += A.transpose().lazyProduct(G);
                           else GB.noalias() += A.transpose() * G;
                         }
                       }
                     }
                   });
  }
  return out;
}

namespace {

// Eight independent lanes combined in a fixed order: vectorizes like Eigen's
// redux but the result does not depend on the buffer's address, which keeps
// resumed training bit-identical.
template <class F>
double lane_sum(std::size_t n, F term) {
  constexpr std::size_t L = 8;
  Real acc[L] = {};
  std::size_t i = 0;
  for (; i + L <= n; i += L)
    for (std::size_t l = 0; l < L; ++l) acc[l] += term(i + l);
  for (; i < n; ++i) acc[i % L] += term(i);
  double s = 0.0;
  for (Real a : acc) s += a;
  return s;
}

}  // namespace

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, RunningStats& stats,
                  bool training, Real momentum, Real eps, std::size_t channel_axis) {
  if (x.rank() < 2 || channel_axis >= x.rank())
    throw DimensionError("batch_norm: channel axis " + std::to_string(channel_axis) + " invalid for " +
                         to_string(x.shape()));
  std::size_t N = 1;
  for (std::size_t a = 0; a < channel_axis; ++a) N *= x.shape()[a];
  const std::size_t C = x.shape()[channel_axis];
  if (gamma.size() != C || beta.size() != C) {
    throw DimensionError("batch_norm: gamma/beta length must equal channel extent " +
                         std::to_string(C));
  }
  if (!stats.mean.defined()) stats.mean = Tensor::zeros({C});
  if (!stats.var.defined()) stats.var = Tensor::ones({C});
  const std::size_t inner = numel(x.shape()) / std::max<std::size_t>(1, N * C);
  const std::size_t count = N * inner;
  if (training && count == 0) throw InvalidInputError("batch_norm: empty batch in training mode");

  std::vector<Real> mu(C), inv_std(C);
  const Real* xs = x.data().data();
  if (training) {
    for (std::size_t c = 0; c < C; ++c) {
      // Rows are summed in Real lanes, rows combined in double.
      double s = 0.0, ss = 0.0;
      for (std::size_t nn = 0; nn < N; ++nn) {
        const Real* p = xs + (nn * C + c) * inner;
        s += lane_sum(inner, [p](std::size_t i) { return p[i]; });
      }
      const double m = s / static_cast<double>(count);
      const Real mr = static_cast<Real>(m);
      for (std::size_t nn = 0; nn < N; ++nn) {
        const Real* p = xs + (nn * C + c) * inner;
        ss += lane_sum(inner, [p, mr](std::size_t i) { return (p[i] - mr) * (p[i] - mr); });
      }
      const double var = ss / static_cast<double>(count);
      mu[c] = static_cast<Real>(m);
      inv_std[c] = static_cast<Real>(1.0 / std::sqrt(var + eps));
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      stats.mean[c] = (1.0f - momentum) * stats.mean[c] + momentum * static_cast<Real>(m);
      stats.var[c] = (1.0f - momentum) * stats.var[c] + momentum * static_cast<Real>(unbiased);
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = stats.mean[c];
      inv_std[c] = 1.0f / std::sqrt(stats.var[c] + eps);
    }
  }

  Tensor out = Tensor::zeros(x.shape());
  Real* ys = out.data().data();
  for (std::size_t nn = 0; nn < N; ++nn) {
    for (std::size_t c = 0; c < C; ++c) {
      const Real g = gamma[c] * inv_std[c];
      const Real b = beta[c] - mu[c] * g;
      const Real* p = xs + (nn * C + c) * inner;
      Real* q = ys + (nn * C + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) q[i] = p[i] * g + b;
    }
  }

  if (detail::should_record({&x, &gamma, &beta})) {
    TensorImpl* xi = x.impl().get();
    TensorImpl* gi = gamma.impl().get();
    TensorImpl* bi = beta.impl().get();
    TensorImpl* o = out.impl().get();
    detail::record("batch_norm", {x.impl(), gamma.impl(), beta.impl()}, out,
                   [xi, gi, bi, o, mu, inv_std, N, C, inner, count, training]() {
                     const Real* g = o->grad.data();
                     const Real* xs = xi->data.data();
                     for (std::size_t c = 0; c < C; ++c) {
                       double sg = 0.0, sgx = 0.0;
                       const Real m = mu[c], is = inv_std[c];
                       for (std::size_t nn = 0; nn < N; ++nn) {
                         const Real* gr = g + (nn * C + c) * inner;
                         const Real* xr = xs + (nn * C + c) * inner;
                         sg += lane_sum(inner, [gr](std::size_t i) { return gr[i]; });
                         sgx += lane_sum(inner, [gr, xr, m](std::size_t i) { return gr[i] * (xr[i] - m); }) * is;
                       }
                       if (gi->requires_grad) gi->ensure_grad()[c] += static_cast<Real>(sgx);
                       if (bi->requires_grad) bi->ensure_grad()[c] += static_cast<Real>(sg);
                       if (!xi->requires_grad) continue;
                       Real* gx = xi->ensure_grad().data();
                       const Real k = gi->data[c] * inv_std[c];
                       const Real mg = static_cast<Real>(sg / static_cast<double>(count));
                       const Real mgx = static_cast<Real>(sgx / static_cast<double>(count));
                       for (std::size_t nn = 0; nn < N; ++nn) {
                         const std::size_t base = (nn * C + c) * inner;
                         Real* dr = gx + base;
                         const Real* gr = g + base;
                         const Real* xr = xs + base;
                         if (training) {
                           for (std::size_t i = 0; i < inner; ++i)
                             dr[i] += k * (gr[i] - mg - (xr[i] - m) * is * mgx);
                         } else {
                           for (std::size_t i = 0; i < inner; ++i) dr[i] += k * gr[i];
                         }
                       }
                     }
                   });
  }
  return out;
}

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION::ops

namespace spikegraph::inline SPIKEGRAPH_PRECISION::ops {

Tensor weighted_sum(const std::vector<Tensor>& xs, const std::vector<double>& coeffs) {
  if (xs.empty() || xs.size() != coeffs.size())
    throw InvalidInputError("weighted_sum: need one coefficient per tensor");
  for (const auto& x : xs)
    if (x.shape() != xs[0].shape())
      throw DimensionError("weighted_sum shape mismatch: " + to_string(xs[0].shape()) + " vs " +
                           to_string(x.shape()));
  Tensor out = Tensor::zeros(xs[0].shape());
  const std::size_t n = out.size();
  std::vector<double> acc(n, 0.0);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const Real* p = xs[k].data().data();
    const double c = coeffs[k];
    if (c == 0.0) continue;
    for (std::size_t i = 0; i < n; ++i) acc[i] += c * p[i];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<Real>(acc[i]);
  if (detail::should_record(xs)) {
    std::vector<std::shared_ptr<TensorImpl>> ins;
    std::vector<TensorImpl*> raw;
    for (const auto& x : xs) {
      ins.push_back(x.impl());
      raw.push_back(x.impl().get());
    }
    TensorImpl* o = out.impl().get();
    detail::record("weighted_sum", std::move(ins), out, [raw, coeffs, o]() {
      for (std::size_t k = 0; k < raw.size(); ++k) {
        if (!raw[k]->requires_grad) continue;
        auto& g = raw[k]->ensure_grad();
        const Real c = static_cast<Real>(coeffs[k]);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * o->grad[i];
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double p, std::uint64_t seed) {
  if (p < 0.0 || p >= 1.0) throw InvalidInputError("dropout probability must be in [0, 1)");
  if (p == 0.0) return x;
  Tensor mask = Tensor::zeros(x.shape());
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(1.0 - p);
  const Real s = static_cast<Real>(1.0 / (1.0 - p));
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = keep(rng) ? s : Real(0);
  return mul(x, mask);
}

namespace {

// dst[i, u, :] (+)= sum_c x[c, i, :] * y[c, u, :] over [C, V, TT] planes;
// the frame vector stays in registers across the channel reduction.
template <std::size_t TT>
void pair_scores(const Real* x, const Real* y, Real* dst, std::size_t C, std::size_t V) {
  const std::size_t plane = V * TT;
  for (std::size_t i = 0; i < V; ++i)
    for (std::size_t u = 0; u < V; ++u) {
      Real acc[TT] = {};
      for (std::size_t c = 0; c < C; ++c) {
        const Real* xa = x + c * plane + i * TT;
        const Real* ya = y + c * plane + u * TT;
        for (std::size_t t = 0; t < TT; ++t) acc[t] += xa[t] * ya[t];
      }
      Real* d = dst + (i * V + u) * TT;
      for (std::size_t t = 0; t < TT; ++t) d[t] += acc[t];
    }
}

// dst[c, i, :] += sum_u a[i, u, :] * y[c, u, :] (transpose_a: a[u, i, :]).
template <std::size_t TT>
void mix_tokens(const Real* a, const Real* y, Real* dst, std::size_t C, std::size_t V, bool transpose_a) {
  const std::size_t plane = V * TT;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < V; ++i) {
      Real acc[TT] = {};
      for (std::size_t u = 0; u < V; ++u) {
        const Real* aa = a + (transpose_a ? (u * V + i) : (i * V + u)) * TT;
        const Real* ya = y + c * plane + u * TT;
        for (std::size_t t = 0; t < TT; ++t) acc[t] += aa[t] * ya[t];
      }
      Real* d = dst + c * plane + i * TT;
      for (std::size_t t = 0; t < TT; ++t) d[t] += acc[t];
    }
}

void pair_scores_any(const Real* x, const Real* y, Real* dst, std::size_t C, std::size_t V, std::size_t T) {
  switch (T) {
    case 4: return pair_scores<4>(x, y, dst, C, V);
    case 8: return pair_scores<8>(x, y, dst, C, V);
    case 16: return pair_scores<16>(x, y, dst, C, V);
    default: break;
  }
  const std::size_t plane = V * T;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < V; ++i)
      for (std::size_t u = 0; u < V; ++u)
        for (std::size_t t = 0; t < T; ++t) dst[(i * V + u) * T + t] += x[c * plane + i * T + t] * y[c * plane + u * T + t];
}

void mix_tokens_any(const Real* a, const Real* y, Real* dst, std::size_t C, std::size_t V, std::size_t T,
                    bool transpose_a) {
  switch (T) {
    case 4: return mix_tokens<4>(a, y, dst, C, V, transpose_a);
    case 8: return mix_tokens<8>(a, y, dst, C, V, transpose_a);
    case 16: return mix_tokens<16>(a, y, dst, C, V, transpose_a);
    default: break;
  }
  const std::size_t plane = V * T;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < V; ++i)
      for (std::size_t u = 0; u < V; ++u) {
        const Real* aa = a + (transpose_a ? (u * V + i) : (i * V + u)) * T;
        for (std::size_t t = 0; t < T; ++t) dst[c * plane + i * T + t] += aa[t] * y[c * plane + u * T + t];
      }
}

}  // namespace

Tensor token_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() < 3 || q.shape() != k.shape() || q.shape() != v.shape())
    throw DimensionError("token_attention expects equal [..., C, V, T] operands, got " + to_string(q.shape()) +
                         ", " + to_string(k.shape()) + ", " + to_string(v.shape()));
  const std::size_t r = q.rank();
  const std::size_t C = q.dim(r - 3), V = q.dim(r - 2), T = q.dim(r - 1);
  const std::size_t N = q.size() / (C * V * T);
  const std::size_t block = C * V * T;
  // Frames stay innermost so every kernel runs contiguously over T.
  Tensor out = Tensor::zeros(q.shape());
  std::vector<Real> scores(N * V * V * T);  // [n, i, u, t]
  for (std::size_t n = 0; n < N; ++n) {
    Real* A = scores.data() + n * V * V * T;
    pair_scores_any(q.data().data() + n * block, k.data().data() + n * block, A, C, V, T);
    mix_tokens_any(A, v.data().data() + n * block, out.data().data() + n * block, C, V, T, false);
  }
  if (detail::should_record({&q, &k, &v})) {
    TensorImpl* qi = q.impl().get();
    TensorImpl* ki = k.impl().get();
    TensorImpl* vi = v.impl().get();
    TensorImpl* o = out.impl().get();
    detail::record("token_attention", {q.impl(), k.impl(), v.impl()}, out,
                   [qi, ki, vi, o, N, C, V, T, block, scores = std::move(scores)]() {
                     Real* gq = qi->requires_grad ? qi->ensure_grad().data() : nullptr;
                     Real* gk = ki->requires_grad ? ki->ensure_grad().data() : nullptr;
                     Real* gv = vi->requires_grad ? vi->ensure_grad().data() : nullptr;
                     std::vector<Real> da(V * V * T);
                     for (std::size_t n = 0; n < N; ++n) {
                       const std::size_t off = n * block;
                       const Real* A = scores.data() + n * V * V * T;
                       const Real* G = o->grad.data() + off;
                       // dV = A^T G, dA = G V^T, dQ = dA K, dK = dA^T Q.
                       if (gv) mix_tokens_any(A, G, gv + off, C, V, T, true);
                       if (!gq && !gk) continue;
                       std::fill(da.begin(), da.end(), Real(0));
                       pair_scores_any(G, vi->data.data() + off, da.data(), C, V, T);
                       if (gq) mix_tokens_any(da.data(), ki->data.data() + off, gq + off, C, V, T, false);
                       if (gk) mix_tokens_any(da.data(), qi->data.data() + off, gk + off, C, V, T, true);
                     }
                   });
  }
  return out;
}

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION::ops
