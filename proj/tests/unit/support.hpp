#pragma once

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "spikegraph/nn.hpp"
#include "spikegraph/tensor.hpp"

namespace spikegraph::test {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(shape);
  for (auto& v : t.data()) v = static_cast<Real>(rng.uniform(lo, hi));
  return t;
}

inline Tensor random_binary(const Shape& shape, Rng& rng, double p = 0.3) {
  Tensor t = Tensor::zeros(shape);
  for (auto& v : t.data()) v = rng.uniform() < p ? Real(1) : Real(0);
  return t;
}

/// Distinct values present in `t`.
inline std::set<Real> value_set(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline ::testing::AssertionResult values_within(const Tensor& t, std::set<Real> allowed) {
  for (std::size_t i = 0; i < t.size(); ++i)
    if (!allowed.count(t[i]))
      return ::testing::AssertionFailure() << "element " << i << " = " << t[i] << " outside allowed set";
  return ::testing::AssertionSuccess();
}

inline ::testing::AssertionResult all_close(const Tensor& a, const Tensor& b, double tol) {
  if (a.shape() != b.shape())
    return ::testing::AssertionFailure() << to_string(a.shape()) << " vs " << to_string(b.shape());
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])) > tol)
      return ::testing::AssertionFailure() << "element " << i << ": " << a[i] << " vs " << b[i];
  return ::testing::AssertionSuccess();
}

inline ::testing::AssertionResult all_equal(const Tensor& a, const Tensor& b) { return all_close(a, b, 0.0); }

}  // namespace spikegraph::test
