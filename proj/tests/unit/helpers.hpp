#pragma once

#include <cmath>
#include <vector>

#include "repolab/corpus/synth.hpp"
#include "repolab/diff/tensor.hpp"
#include "repolab/model/params.hpp"
#include "repolab/util/rng.hpp"

namespace testing {

inline repolab::diff::Tensor random_tensor(repolab::diff::Shape shape, std::uint64_t seed, double lo = -1.0,
                                           double hi = 1.0) {
  repolab::Rng rng(seed);
  std::vector<double> v(repolab::diff::numel_of(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return repolab::diff::Tensor(std::move(shape), std::move(v));
}

// Small enough for finite differences over every parameter.
inline repolab::model::ModelConfig tiny_config() {
  repolab::model::ModelConfig c;
  c.vocab_size = 64;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_mlp = 16;
  c.context_length = 32;
  c.probe_layer = 2;
  return c;
}

// init_params scales weights by 0.02; larger weights give the losses some
// curvature so finite-difference checks are not trivially satisfied.
inline repolab::model::TransformerParams lively_params(const repolab::model::ModelConfig& c, std::uint64_t seed) {
  auto p = repolab::model::init_params(c, seed);
  repolab::Rng rng(seed + 99);
  for (auto& t : p.tensors) {
    for (double& x : t.value.data()) x += 0.3 * rng.normal();
  }
  return p;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace testing
