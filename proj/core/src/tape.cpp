#include "spikegraph/tape.hpp"

#include <cmath>

#include "spikegraph/errors.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

namespace {
thread_local Tape* g_active = nullptr;
}

Tape* active_tape() { return g_active; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active) { g_active = &tape; }
TapeScope::~TapeScope() { g_active = previous_; }

NoGradScope::NoGradScope() : previous_(g_active) { g_active = nullptr; }
NoGradScope::~NoGradScope() { g_active = previous_; }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw InvalidInputError("backward requires a scalar loss");
  }
  if (!loss.requires_grad()) {
    entries_.clear();
    return;
  }
  loss.impl()->ensure_grad()[0] = 1.0f;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // not reachable from the loss
    it->backward();
  }
  // Drop intermediate gradients so only leaves keep theirs.
  for (auto& e : entries_) {
    if (!e.output->is_leaf && e.output.get() != loss.impl().get()) e.output->grad.clear();
  }
  entries_.clear();
}

void backward(const Tensor& loss, Tape& tape) { tape.backward(loss); }

namespace detail {

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (g_active == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

bool should_record(const std::vector<Tensor>& inputs) {
  if (g_active == nullptr) return false;
  for (const auto& t : inputs) {
    if (t.defined() && t.requires_grad()) return true;
  }
  return false;
}

void record(const char* op, std::vector<std::shared_ptr<TensorImpl>> inputs, Tensor& out,
            std::function<void()> backward) {
  out.impl()->requires_grad = true;
  out.impl()->is_leaf = false;
  g_active->record(Tape::Entry{op, std::move(inputs), out.impl(), std::move(backward)});
}

}  // namespace detail

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
