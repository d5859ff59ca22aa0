#pragma once

#include <vector>

#include "dass/autograd.hpp"

namespace dass {

struct OptimState {
  float lr = 0.025f;
  float momentum = 0.9f;
  float weight_decay = 3e-4f;
  Tensor velocity;  // zero-initialized lazily to the parameter's shape
};

/// One SGD step with momentum and L2 weight decay:
///   v <- momentum * v + grad + weight_decay * param
///   param <- param - lr * v
/// then clears the gradient. Throws ConfigError when `param` has no gradient.
void sgd_step(Variable& param, OptimState& state);

/// Cosine annealing from lr0 at step 0 to 0 at total_steps.
float cosine_lr(int step, int total_steps, float lr0);

/// SGD over a fixed parameter group sharing hyperparameters. Parameters
/// without a gradient in a given step are skipped.
class SgdOptimizer {
 public:
  SgdOptimizer() = default;
  SgdOptimizer(std::vector<Variable> params, float lr, float momentum, float weight_decay);

  void set_lr(float lr) { lr_ = lr; }
  float lr() const { return lr_; }
  void step();
  void zero_grad();

  const std::vector<Variable>& params() const { return params_; }
  std::vector<OptimState>& states() { return states_; }
  const std::vector<OptimState>& states() const { return states_; }

 private:
  std::vector<Variable> params_;
  std::vector<OptimState> states_;
  float lr_ = 0.0f;
};

}  // namespace dass
