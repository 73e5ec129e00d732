#include "spikegraph/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "spikegraph/errors.hpp"
#include "spikegraph/tape.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                           const GradCheckOptions& options) {
  if (!(options.h > 0.0)) throw InvalidInputError("grad_check: step h must be positive");

  for (auto& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f();
    tape.backward(loss);
  }

  GradCheckReport report;
  std::vector<std::vector<Real>> analytic;
  for (const auto& leaf : leaves) {
    std::vector<Real> g(leaf.size(), Real(0));
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), g.begin());
    for (Real v : g) {
      if (!std::isfinite(v)) {
        report.finite = false;
        report.message = "non-finite analytic gradient";
        return report;
      }
    }
    analytic.push_back(std::move(g));
  }

  auto eval = [&]() {
    NoGradScope no_grad;
    return static_cast<double>(f().item());
  };

  for (std::size_t l = 0; l < leaves.size(); ++l) {
    Tensor& leaf = leaves[l];
    const std::size_t n = leaf.size();
    std::size_t stride = 1;
    if (options.max_elements_per_leaf && n > options.max_elements_per_leaf) {
      stride = (n + options.max_elements_per_leaf - 1) / options.max_elements_per_leaf;
    }
    for (std::size_t i = 0; i < n; i += stride) {
      const Real orig = leaf[i];
      leaf[i] = static_cast<Real>(orig + options.h);
      const Real up = leaf[i];
      const double fp = eval();
      leaf[i] = static_cast<Real>(orig - options.h);
      const Real down = leaf[i];
      const double fm = eval();
      leaf[i] = orig;
      // Divide by the representable step actually taken.
      const double numeric = (fp - fm) / (static_cast<double>(up) - static_cast<double>(down));
      const double a = analytic[l][i];
      if (!std::isfinite(numeric)) {
        report.finite = false;
        report.message = "non-finite numeric gradient";
        return report;
      }
      const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
      const double err = std::abs(a - numeric) / denom;
      report.max_rel_error = std::max(report.max_rel_error, err);
      ++report.checked;
      if (err <= options.tol) ++report.within_tol;
    }
  }
  report.passed = report.finite && report.pass_fraction() >= options.required_pass_fraction;
  std::ostringstream os;
  os << report.within_tol << "/" << report.checked << " within " << options.tol
     << ", max rel error " << report.max_rel_error;
  report.message = os.str();
  return report;
}

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
