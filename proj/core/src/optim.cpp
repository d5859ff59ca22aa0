#include "dass/optim.hpp"

#include <cmath>
#include <numbers>

#include "dass/error.hpp"

namespace dass {

void sgd_step(Variable& param, OptimState& state) {
  if (!param.has_grad()) throw ConfigError("sgd_step: parameter has no gradient");
  Tensor& value = param.mutable_value();
  if (!state.velocity.defined()) state.velocity = Tensor::zeros_like(value);
  const float* g = param.grad().data();
  float* v = state.velocity.data();
  float* w = value.data();
  for (int64_t i = 0; i < value.numel(); ++i) {
    v[i] = state.momentum * v[i] + g[i] + state.weight_decay * w[i];
    w[i] -= state.lr * v[i];
  }
  param.clear_grad();
}

float cosine_lr(int step, int total_steps, float lr0) {
  if (total_steps <= 0) throw ConfigError("cosine_lr: total_steps must be positive");
  if (step < 0 || step > total_steps) {
    throw ConfigError("cosine_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  }
  const double t = static_cast<double>(step) / total_steps;
  return static_cast<float>(lr0 * (1.0 + std::cos(std::numbers::pi * t)) / 2.0);
}

SgdOptimizer::SgdOptimizer(std::vector<Variable> params, float lr, float momentum, float weight_decay)
    : params_(std::move(params)), lr_(lr) {
  states_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    states_[i].momentum = momentum;
    states_[i].weight_decay = weight_decay;
    states_[i].velocity = Tensor::zeros_like(params_[i].value());
  }
}

void SgdOptimizer::step() {
  for (size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) continue;
    states_[i].lr = lr_;
    sgd_step(params_[i], states_[i]);
  }
}

void SgdOptimizer::zero_grad() {
  for (auto& p : params_) p.clear_grad();
}

}  // namespace dass
