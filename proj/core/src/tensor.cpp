#include "spikegraph/tensor.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

#include "spikegraph/errors.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<Real> data) : impl_(std::make_shared<TensorImpl>()) {
  if (numel(shape) != data.size()) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + to_string(shape));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

Tensor Tensor::zeros(const Shape& shape) { return full(shape, 0.0f); }
Tensor Tensor::ones(const Shape& shape) { return full(shape, 1.0f); }
Tensor Tensor::full(const Shape& shape, Real value) {
  return Tensor(shape, std::vector<Real>(numel(shape), value));
}
Tensor Tensor::scalar(Real value) { return Tensor(Shape{}, {value}); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(shape()));
  }
  return impl_->shape[axis];
}

Real Tensor::item() const {
  if (size() != 1) throw InvalidInputError("item() on tensor of shape " + to_string(shape()));
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  return *this;
}

Tensor Tensor::clone() const { return Tensor(impl_->shape, impl_->data); }

Tensor Tensor::detach() const { return clone(); }

namespace {

static_assert(std::endian::native == std::endian::little,
              "tensor serialization assumes a little-endian host");

constexpr char kMagic[4] = {'S', 'G', 'T', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError("truncated tensor blob");
  return v;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put_u32(out, static_cast<std::uint32_t>(e));
  std::vector<float> payload(t.data().begin(), t.data().end());
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!out) throw IoError("failed writing tensor blob");
}

Tensor read_tensor(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("tensor blob: bad magic");
  }
  const std::uint32_t rank = get_u32(in);
  if (rank > 16) throw FormatError("tensor blob: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) e = get_u32(in);
  std::vector<float> payload(numel(shape));
  if (!in.read(reinterpret_cast<char*>(payload.data()),
               static_cast<std::streamsize>(payload.size() * sizeof(float)))) {
    throw FormatError("tensor blob: truncated payload");
  }
  return Tensor(std::move(shape), std::vector<Real>(payload.begin(), payload.end()));
}

std::vector<std::uint8_t> serialize_tensor(const Tensor& t) {
  std::ostringstream os(std::ios::binary);
  write_tensor(os, t);
  const std::string s = os.str();
  return {s.begin(), s.end()};
}

Tensor deserialize_tensor(std::span<const std::uint8_t> bytes) {
  std::istringstream is(std::string(bytes.begin(), bytes.end()), std::ios::binary);
  return read_tensor(is);
}

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
