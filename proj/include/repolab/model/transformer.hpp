#pragma once

#include <optional>
#include <span>
#include <vector>

#include "repolab/diff/graph.hpp"
#include "repolab/model/params.hpp"

namespace repolab::model {

using diff::Graph;
using diff::Var;

struct Segment {
  std::size_t start = 0;
  std::size_t length = 0;
};

// Several sequences stacked along the token axis. Attention never crosses a
// segment boundary and positions restart at zero in each segment.
struct PackedBatch {
  std::vector<int> tokens;
  std::vector<Segment> segments;

  static PackedBatch from(std::span<const std::vector<int>> sequences);
  static PackedBatch single(std::span<const int> sequence);
  std::size_t total_tokens() const { return tokens.size(); }
};

// Inference-time edit of the residual stream: after block l (1-based) the
// state h becomes h - (u.h) u for the unit vector u = directions[l-1], when
// that entry is non-empty.
struct ResidualProjection {
  std::vector<std::vector<double>> directions;

  bool active(int layer) const {
    return layer >= 1 && static_cast<std::size_t>(layer) <= directions.size() && !directions[layer - 1].empty();
  }
};

struct ForwardOptions {
  const ResidualProjection* projection = nullptr;
  // When set, token embeddings are one_hot [tokens, vocab] x tok_emb instead
  // of a row gather, so gradients reach the token choice.
  std::optional<Var> one_hot;
};

struct ParamVars {
  std::vector<Var> vars;
  const Var& operator[](std::size_t i) const { return vars[i]; }
};

// Trainable leaves or frozen constants for every tensor, in params order.
ParamVars bind_params(Graph& graph, const TransformerParams& params, bool trainable);

// Graph-level forward. Per-block vectors are indexed by block (0-based);
// residual has n_layers + 1 entries, residual[0] being the embedding sum and
// residual[l] the output of block l.
struct GraphForward {
  Var logits;
  std::vector<Var> residual;
  std::vector<Var> attention_out;
  std::vector<Var> mlp_keys;
  std::vector<Var> mlp_contrib;
};

GraphForward build_forward(Graph& graph, const ModelConfig& config, const ParamVars& params,
                           const PackedBatch& batch, const ForwardOptions& options = {});

struct TraceSpec {
  bool residual = false;
  bool attention_out = false;
  bool mlp_keys = false;
  bool mlp_contrib = false;

  static TraceSpec all() { return {true, true, true, true}; }
};

// Token axis first in every tensor. attention_out, mlp_keys and mlp_contrib
// hold one entry per block; residual holds n_layers + 1 entries.
struct HiddenTrace {
  std::optional<std::vector<Tensor>> residual;
  std::optional<std::vector<Tensor>> attention_out;
  std::optional<std::vector<Tensor>> mlp_keys;
  std::optional<std::vector<Tensor>> mlp_contrib;
};

struct ForwardResult {
  Tensor logits;  // [tokens, vocab]
  HiddenTrace trace;
};

// A model as seen by evaluation code: parameters plus an optional
// inference-time residual projection.
struct ModelView {
  const TransformerParams* params = nullptr;
  const ResidualProjection* projection = nullptr;

  ModelView() = default;
  ModelView(const TransformerParams& p, const ResidualProjection* proj = nullptr) : params(&p), projection(proj) {}
};

// Throws TokenOutOfRange, SequenceTooLong.
void validate_tokens(const ModelConfig& config, std::span<const int> tokens);

ForwardResult forward(const ModelView& model, std::span<const int> tokens, const TraceSpec& spec = {});
// Packed variant; rows follow batch.tokens.
ForwardResult forward_batch(const ModelView& model, const PackedBatch& batch, const TraceSpec& spec = {});

// Rows [segment.start, segment.start + segment.length) of a packed tensor.
Tensor segment_rows(const Tensor& packed, const Segment& segment);

}  // namespace repolab::model
