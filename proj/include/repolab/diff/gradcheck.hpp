#pragma once

#include <functional>

#include "repolab/diff/graph.hpp"

namespace repolab::diff {

// Builds a scalar from a leaf holding x.
using ScalarFn = std::function<Var(Graph&, Var x)>;

// Central differences carry roundoff near 1e-11 even where the true
// gradient is exactly zero (an attention key bias, say), so the relative
// error's denominator never drops below this floor.
inline constexpr double kGradCheckFloor = 1e-4;

// Max over coordinates of |analytic - central| / max(|analytic| + |central|, kGradCheckFloor).
double grad_check(const ScalarFn& f, const Tensor& x, double eps = 1e-5);

// Analytic gradient of f at x.
Tensor analytic_grad(const ScalarFn& f, const Tensor& x);
// Central-difference gradient of f at x.
Tensor numeric_grad(const ScalarFn& f, const Tensor& x, double eps = 1e-5);

}  // namespace repolab::diff
