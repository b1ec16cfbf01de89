#pragma once

#include <span>
#include <unordered_map>

#include "graph.hpp"

namespace snds {

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.0;
  double weight_decay = 0.0;
};

// Momentum SGD with per-parameter velocity state keyed by parameter identity.
// Update: v <- momentum*v + (grad + weight_decay*value); value <- value - lr*v.
class SgdOptimizer {
 public:
  explicit SgdOptimizer(SgdConfig config);

  void set_lr(double lr);
  double lr() const { return config_.lr; }

  void step(std::span<ad::Parameter* const> params);
  void zero_grad(std::span<ad::Parameter* const> params);

 private:
  SgdConfig config_;
  std::unordered_map<const ad::Parameter*, ad::Tensor> velocity_;
};

// Learning rate at `epoch` of `total_epochs`: base_lr*(1+cos(pi*epoch/total))/2.
double cosine_rampdown(int epoch, int total_epochs, double base_lr);

}  // namespace snds
