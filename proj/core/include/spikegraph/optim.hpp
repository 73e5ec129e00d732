#pragma once

#include <vector>

#include "spikegraph/nn.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

struct SgdOptions {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

/// SGD with heavy-ball momentum and L2 weight decay.
class Sgd {
 public:
  Sgd(NamedTensors params, SgdOptions options);
  void step();
  void zero_grad();
  void set_lr(double lr) { options_.lr = lr; }
  double lr() const { return options_.lr; }
  /// Momentum buffers, named after their parameters, for checkpointing.
  NamedTensors state() const;

 private:
  NamedTensors params_;
  std::vector<Tensor> velocity_;
  SgdOptions options_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(NamedTensors params, AdamOptions options);
  void step();
  void zero_grad();
  NamedTensors state() const;

 private:
  NamedTensors params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  Tensor step_count_;
  AdamOptions options_;
};

/// Step schedule: lr * decay^(floor(epoch / step_epochs)).
double step_lr(double base_lr, double decay, std::size_t step_epochs, std::size_t epoch);

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
