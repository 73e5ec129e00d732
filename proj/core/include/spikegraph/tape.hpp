#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "spikegraph/tensor.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

/// Ordered record of differentiable operations. Backward replays the entries
/// in reverse, each exactly once, then clears the record.
class Tape {
 public:
  struct Entry {
    std::string op;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    std::function<void()> backward;
  };

  void record(Entry entry) { entries_.push_back(std::move(entry)); }
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every recorded input.
  /// Throws InvalidInputError for a non-scalar loss.
  void backward(const Tensor& loss);

 private:
  std::vector<Entry> entries_;
};

/// Makes `tape` the recording target on this thread for the scope lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording on this thread (inference, frozen teacher).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

/// Free-function form of Tape::backward.
void backward(const Tensor& loss, Tape& tape);

namespace detail {

/// True when an op with these inputs must be recorded.
bool should_record(std::initializer_list<const Tensor*> inputs);
bool should_record(const std::vector<Tensor>& inputs);

/// Marks `out` as a non-leaf produced by a recorded op and pushes the entry.
void record(const char* op, std::vector<std::shared_ptr<TensorImpl>> inputs, Tensor& out,
            std::function<void()> backward);

}  // namespace detail

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
