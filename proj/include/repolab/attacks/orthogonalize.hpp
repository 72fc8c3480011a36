#pragma once

#include <vector>

#include "repolab/model/transformer.hpp"

namespace repolab::attacks {

struct DirectionEntry {
  std::vector<double> unit;  // empty when degenerate
  double raw_norm = 0.0;
  bool degenerate = true;
};

// One entry per block, entry l - 1 for the output of block l.
struct UnlearnedDirection {
  std::vector<DirectionEntry> blocks;
};

constexpr double kDegenerateNorm = 1e-8;

// mean(a) - mean(b) over rows, normalized unless its norm is below
// kDegenerateNorm. Throws EmptyForgetSet, ShapeMismatch.
DirectionEntry diff_in_means(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b);

// Reference minus unlearned mean state at the output of `block` (1-based)
// over every token of the forget sequences. Throws EmptyForgetSet,
// InvalidLayer.
DirectionEntry diff_in_means_direction(const model::TransformerParams& reference,
                                       const model::TransformerParams& unlearned,
                                       const std::vector<std::vector<int>>& forget_set, int block);

UnlearnedDirection diff_in_means_directions(const model::TransformerParams& reference,
                                            const model::TransformerParams& unlearned,
                                            const std::vector<std::vector<int>>& forget_set);

// Weights plus an inference-time projection. view() composes with forward
// and generate; the weights are never modified.
struct SteeredModel {
  const model::TransformerParams* params = nullptr;
  model::ResidualProjection projection;

  model::ModelView view() const { return model::ModelView(*params, &projection); }
};

// Throws AllDegenerate when no block has a usable direction.
SteeredModel orthogonalize_inference(const model::TransformerParams& model, const UnlearnedDirection& directions);

}  // namespace repolab::attacks
