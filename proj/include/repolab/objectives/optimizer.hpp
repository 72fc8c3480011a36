#pragma once

#include <span>
#include <vector>

#include "repolab/diff/tensor.hpp"

namespace repolab::objectives {

using diff::Tensor;

enum class OptimizerKind { Sgd, AdamW };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::AdamW;
  double lr = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  // Learning rate ramps linearly from lr/warmup_steps to lr over this many steps.
  int warmup_steps = 0;
  // Global gradient-norm clip; 0 disables.
  double grad_clip = 0.0;
};

double global_norm(std::span<const Tensor> grads);

// Decoupled weight decay: p <- p - lr * wd * p, applied before the gradient
// step. SGD update is p <- p - lr * g; AdamW uses bias-corrected moments.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(config) {}

  // Returns the pre-clip global gradient norm. Throws ShapeMismatch when the
  // tensor lists disagree.
  double step(std::span<Tensor* const> params, std::span<const Tensor> grads);

  double current_lr() const;
  long steps_taken() const { return step_; }
  const OptimizerConfig& config() const { return config_; }

 private:
  OptimizerConfig config_;
  long step_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace repolab::objectives
