#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "repolab/diff/graph.hpp"

namespace repolab::objectives {

using diff::Graph;
using diff::Tensor;
using diff::Var;

// Scalar-output domain classifier over d-model states.
//   depth 2: q = sigmoid(tanh(h W1 + b1) W2 + b2), W1 [d, width], W2 [width, 1]
//   depth 1: q = sigmoid(h W + b),                  W  [d, 1]
struct DiscriminatorParams {
  int depth = 2;
  int width = 16;
  std::vector<Tensor> tensors;  // weight, bias per layer
  // Frozen input standardization h -> (h - input_mean) * input_scale, applied
  // after the reversal node. Empty means identity. Residual states grow to
  // norms in the tens, which would saturate the tanh layer at init.
  std::vector<double> input_mean;
  std::vector<double> input_scale;

  int input_width() const { return static_cast<int>(tensors.front().rows()); }
  bool identical(const DiscriminatorParams& other) const;
};

// Throws InvalidConfig for depth outside {1, 2} or non-positive widths.
DiscriminatorParams init_discriminator(int d_model, int depth, int width, std::uint64_t seed);

// Sets input_mean / input_scale from sample states (rows). Dimensions with
// spread below 1e-8 keep scale 1. Throws EmptyBatch, ShapeMismatch.
void calibrate_discriminator(DiscriminatorParams& disc, const std::vector<std::vector<double>>& states);

struct DiscVars {
  std::vector<Var> vars;
  std::optional<Var> shift;  // [d], holds -input_mean
  std::optional<Var> scale;  // [d, d] diagonal
};

DiscVars bind_discriminator(Graph& graph, const DiscriminatorParams& disc, bool trainable);

// h is [n, d]; returns q as [n, 1]. With through_grl the input passes a
// gradient reversal node scaled by grl_lambda.
Var discriminator_forward(const DiscVars& disc, Var h, bool through_grl, double grl_lambda = 1.0);

// Single-state convenience: q for one d-model vector.
double discriminator_probability(const DiscriminatorParams& disc, std::span<const double> h);

}  // namespace repolab::objectives
