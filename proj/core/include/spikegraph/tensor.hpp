#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "spikegraph/precision.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  bool is_leaf = true;

  std::vector<Real>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    return grad;
  }
};

/// Dense row-major tensor of Real. Copies share storage; use clone() for a
/// deep copy. Operations that should be differentiated record themselves on
/// the thread's active Tape (see tape.hpp).
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<Real> data);
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(const Shape& shape);
  static Tensor ones(const Shape& shape);
  static Tensor full(const Shape& shape, Real value);
  static Tensor scalar(Real value);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->data.size(); }

  std::span<Real> data() { return impl_->data; }
  std::span<const Real> data() const { return impl_->data; }
  Real item() const;
  Real operator[](std::size_t i) const { return impl_->data[i]; }
  Real& operator[](std::size_t i) { return impl_->data[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }
  std::span<const Real> grad() const { return impl_->grad; }
  std::span<Real> mutable_grad() { return impl_->ensure_grad(); }
  void zero_grad() { impl_->grad.clear(); }

  /// Deep copy without gradient history.
  Tensor clone() const;
  /// Shares nothing with the tape: same values, requires_grad = false.
  Tensor detach() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Binary blob: "SGT1", u32 rank, u32 extents, then float32 payload, all
/// little-endian.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
std::vector<std::uint8_t> serialize_tensor(const Tensor& t);
Tensor deserialize_tensor(std::span<const std::uint8_t> bytes);

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
