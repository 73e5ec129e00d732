#include <Eigen/Core>
#include <algorithm>

#include "spikegraph/errors.hpp"
#include "spikegraph/ops.hpp"
#include "spikegraph/tape.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION::ops {

namespace {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

struct ConvGeom {
  std::size_t batch, cin, h, w, cout, kh, kw, oh, ow, groups;
  std::size_t cin_g() const { return cin / groups; }
  std::size_t cout_g() const { return cout / groups; }
  std::size_t col_rows() const { return cin_g() * kh * kw; }
  std::size_t col_cols() const { return oh * ow; }
  bool pointwise(const Conv2dOptions& o) const {
    return kh == 1 && kw == 1 && o.stride_h == 1 && o.stride_w == 1 && o.pad_h == 0 && o.pad_w == 0;
  }
};

// Unfolds one group of one image into [cin_g*kh*kw, oh*ow].
void im2col(const Real* img, const ConvGeom& g, const Conv2dOptions& o, Real* col) {
  const std::size_t cols = g.col_cols();
  for (std::size_t c = 0; c < g.cin_g(); ++c) {
    const Real* plane = img + c * g.h * g.w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        Real* dst = col + ((c * g.kh + ki) * g.kw + kj) * cols;
        for (std::size_t y = 0; y < g.oh; ++y) {
          const long iy = static_cast<long>(y * o.stride_h + ki) - static_cast<long>(o.pad_h);
          Real* row = dst + y * g.ow;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill_n(row, g.ow, 0.0f);
            continue;
          }
          const Real* src = plane + iy * g.w;
          for (std::size_t x = 0; x < g.ow; ++x) {
            const long ix = static_cast<long>(x * o.stride_w + kj) - static_cast<long>(o.pad_w);
            row[x] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0f : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const Real* col, const ConvGeom& g, const Conv2dOptions& o, Real* img) {
  const std::size_t cols = g.col_cols();
  for (std::size_t c = 0; c < g.cin_g(); ++c) {
    Real* plane = img + c * g.h * g.w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const Real* src = col + ((c * g.kh + ki) * g.kw + kj) * cols;
        for (std::size_t y = 0; y < g.oh; ++y) {
          const long iy = static_cast<long>(y * o.stride_h + ki) - static_cast<long>(o.pad_h);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          Real* dst = plane + iy * g.w;
          for (std::size_t x = 0; x < g.ow; ++x) {
            const long ix = static_cast<long>(x * o.stride_w + kj) - static_cast<long>(o.pad_w);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[y * g.ow + x];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Conv2dOptions& opt, const Tensor& bias) {
  if (x.rank() < 4 || w.rank() != 4) {
    throw DimensionError("conv2d expects x[..., Cin, H, W] and w[Cout, Cin/g, kh, kw], got " +
                         to_string(x.shape()) + " and " + to_string(w.shape()));
  }
  const std::size_t r = x.rank();
  if (opt.groups == 0 || opt.stride_h == 0 || opt.stride_w == 0) {
    throw InvalidInputError("conv2d: groups and strides must be positive");
  }
  ConvGeom g{};
  g.batch = 1;
  for (std::size_t a = 0; a + 3 < r; ++a) g.batch *= x.dim(a);
  g.cin = x.dim(r - 3);
  g.h = x.dim(r - 2);
  g.w = x.dim(r - 1);
  g.cout = w.dim(0);
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  g.groups = opt.groups;
  if (g.cin % g.groups || g.cout % g.groups || w.dim(1) != g.cin / g.groups) {
    throw DimensionError("conv2d channel/group mismatch: x " + to_string(x.shape()) + ", w " +
                         to_string(w.shape()) + ", groups " + std::to_string(g.groups));
  }
  if (g.kh > g.h + 2 * opt.pad_h || g.kw > g.w + 2 * opt.pad_w) {
    throw DimensionError("conv2d kernel " + to_string(w.shape()) +
                         " larger than padded input " + to_string(x.shape()));
  }
  if (bias.defined() && bias.size() != g.cout) throw DimensionError("conv2d bias length mismatch");
  g.oh = conv_out_extent(g.h, g.kh, opt.stride_h, opt.pad_h);
  g.ow = conv_out_extent(g.w, g.kw, opt.stride_w, opt.pad_w);

  Shape out_shape(x.shape().begin(), x.shape().end() - 3);
  out_shape.insert(out_shape.end(), {g.cout, g.oh, g.ow});
  Tensor out = Tensor::zeros(out_shape);
  const bool pw = g.pointwise(opt);
  const std::size_t rows = g.col_rows(), cols = g.col_cols();
  RowMat col(pw ? 0 : rows, pw ? 0 : cols);
  const Real* xs = x.data().data();
  const Real* ws = w.data().data();
  Real* ys = out.data().data();
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t gr = 0; gr < g.groups; ++gr) {
      const Real* img = xs + (b * g.cin + gr * g.cin_g()) * g.h * g.w;
      const Real* colp = img;
      if (!pw) {
        im2col(img, g, opt, col.data());
        colp = col.data();
      }
      MapMat(ys + (b * g.cout + gr * g.cout_g()) * cols, g.cout_g(), cols).noalias() =
          CMapMat(ws + gr * g.cout_g() * rows, g.cout_g(), rows) * CMapMat(colp, rows, cols);
    }
    if (bias.defined()) {
      for (std::size_t c = 0; c < g.cout; ++c) {
        Real* p = ys + (b * g.cout + c) * cols;
        for (std::size_t i = 0; i < cols; ++i) p[i] += bias[c];
      }
    }
  }

  if (detail::should_record({&x, &w, &bias})) {
    TensorImpl* xi = x.impl().get();
    TensorImpl* wi = w.impl().get();
    TensorImpl* bi = bias.defined() ? bias.impl().get() : nullptr;
    TensorImpl* o = out.impl().get();
    std::vector<std::shared_ptr<TensorImpl>> ins{x.impl(), w.impl()};
    if (bias.defined()) ins.push_back(bias.impl());
    detail::record("conv2d", std::move(ins), out, [xi, wi, bi, o, g, opt, pw]() {
      const std::size_t rows = g.col_rows(), cols = g.col_cols();
      RowMat col(pw ? 0 : rows, pw ? 0 : cols);
      RowMat dcol(pw ? 0 : rows, pw ? 0 : cols);
      const Real* gy = o->grad.data();
      const Real* xs = xi->data.data();
      const Real* ws = wi->data.data();
      Real* gw = wi->requires_grad ? wi->ensure_grad().data() : nullptr;
      Real* gx = xi->requires_grad ? xi->ensure_grad().data() : nullptr;
      for (std::size_t b = 0; b < g.batch; ++b) {
        for (std::size_t gr = 0; gr < g.groups; ++gr) {
          const std::size_t in_off = (b * g.cin + gr * g.cin_g()) * g.h * g.w;
          CMapMat G(gy + (b * g.cout + gr * g.cout_g()) * cols, g.cout_g(), cols);
          CMapMat W(ws + gr * g.cout_g() * rows, g.cout_g(), rows);
          if (gw) {
            const Real* colp = xs + in_off;
            if (!pw) {
              im2col(xs + in_off, g, opt, col.data());
              colp = col.data();
            }
            MapMat(gw + gr * g.cout_g() * rows, g.cout_g(), rows).noalias() +=
                G * CMapMat(colp, rows, cols).transpose();
          }
          if (gx) {
            if (pw) {
              MapMat(gx + in_off, rows, cols).noalias() += W.transpose() * G;
            } else {
              dcol.noalias() = W.transpose() * G;
              col2im(dcol.data(), g, opt, gx + in_off);
            }
          }
        }
      }
      if (bi && bi->requires_grad) {
        auto& gb = bi->ensure_grad();
        for (std::size_t b = 0; b < g.batch; ++b)
          for (std::size_t c = 0; c < g.cout; ++c) {
            const Real* p = gy + (b * g.cout + c) * cols;
            double s = 0.0;
            for (std::size_t i = 0; i < cols; ++i) s += p[i];
            gb[c] += static_cast<Real>(s);
          }
      }
    });
  }
  return out;
}

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION::ops
