#include "repolab/diff/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "repolab/util/error.hpp"

namespace repolab::diff {

namespace {
double evaluate(const ScalarFn& f, const Tensor& x) {
  Graph g;
  Var leaf = g.leaf(x);
  return f(g, leaf).value().item();
}
}  // namespace

Tensor analytic_grad(const ScalarFn& f, const Tensor& x) {
  Graph g;
  Var leaf = g.leaf(x);
  Var out = f(g, leaf);
  g.backward(out);
  return g.grad(leaf);
}

Tensor numeric_grad(const ScalarFn& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw Error(ErrorKind::InvalidConfig, "grad_check eps must be positive");
  Tensor out = Tensor::zeros_like(x);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = evaluate(f, probe);
    probe[i] = orig - eps;
    const double down = evaluate(f, probe);
    probe[i] = orig;
    out[i] = (up - down) / (2.0 * eps);
  }
  return out;
}

double grad_check(const ScalarFn& f, const Tensor& x, double eps) {
  const Tensor analytic = analytic_grad(f, x);
  const Tensor central = numeric_grad(f, x, eps);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double err = std::abs(analytic[i] - central[i]) / std::max(std::abs(analytic[i]) + std::abs(central[i]), kGradCheckFloor);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace repolab::diff
