#include "repolab/objectives/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "repolab/util/error.hpp"

namespace repolab::objectives {

double global_norm(std::span<const Tensor> grads) {
  double s = 0.0;
  for (const Tensor& g : grads) {
    for (double v : g.data()) s += v * v;
  }
  return std::sqrt(s);
}

double Optimizer::current_lr() const {
  if (config_.warmup_steps <= 0) return config_.lr;
  const double ramp = static_cast<double>(step_ + 1) / static_cast<double>(config_.warmup_steps);
  return config_.lr * std::min(1.0, ramp);
}

double Optimizer::step(std::span<Tensor* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) throw Error(ErrorKind::ShapeMismatch, "optimizer: parameter/gradient count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape()) {
      throw Error(ErrorKind::ShapeMismatch, "optimizer: gradient shape differs for tensor " + std::to_string(i));
    }
  }
  const double norm = global_norm(grads);
  const double clip = (config_.grad_clip > 0.0 && norm > config_.grad_clip) ? config_.grad_clip / norm : 1.0;
  const double lr = current_lr();
  const double decay = 1.0 - lr * config_.weight_decay;

  if (config_.kind == OptimizerKind::AdamW && m_.empty()) {
    for (const Tensor* p : params) {
      m_.push_back(Tensor::zeros_like(*p));
      v_.push_back(Tensor::zeros_like(*p));
    }
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    const auto g = grads[i].data();
    if (config_.weight_decay != 0.0) {
      for (double& x : p) x *= decay;
    }
    if (config_.kind == OptimizerKind::Sgd) {
      for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * clip * g[k];
      continue;
    }
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = clip * g[k];
      m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * gk;
      v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * gk * gk;
      p[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + config_.eps);
    }
  }
  return norm;
}

}  // namespace repolab::objectives
