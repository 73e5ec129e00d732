#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "spikegraph/tensor.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

struct GradCheckOptions {
  double h = 1e-4;
  double tol = 1e-3;
  /// Errors are measured as |a - n| / max(|a|, |n|, abs_floor).
  double abs_floor = 1e-8;
  /// Fraction of checked elements that must be within tol.
  double required_pass_fraction = 1.0;
  /// Cap on elements probed per leaf (0 = all); probes are evenly strided.
  std::size_t max_elements_per_leaf = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t within_tol = 0;
  bool finite = true;
  bool passed = false;
  std::string message;

  double pass_fraction() const {
    return checked ? static_cast<double>(within_tol) / static_cast<double>(checked) : 1.0;
  }
};

/// Compares tape gradients of the scalar `f` with central differences over
/// every element of `leaves`. `f` must be a pure function of the leaf values.
GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                           const GradCheckOptions& options = {});

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
