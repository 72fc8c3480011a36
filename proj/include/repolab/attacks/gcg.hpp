#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "repolab/diff/graph.hpp"
#include "repolab/model/params.hpp"

namespace repolab::attacks {

enum class Placement { Suffix, Prefix };
enum class DistillDistance { Mse, Cosine };

struct GcgConfig {
  int suffix_len = 4;
  int iters = 50;
  int top_k = 8;
  int candidates = 32;
  // Residual indices (block outputs, 1..n_layers) compared by the enhanced
  // attack. Empty selects the probe layer and the midpoint block.
  std::vector<int> layers;
  Placement placement = Placement::Suffix;
  DistillDistance distance = DistillDistance::Mse;
  // Every adversarial slot starts as this token.
  int init_token = 3;
  std::uint64_t seed = 0;
};

struct AdversarialSuffix {
  std::vector<int> tokens;
  Placement placement = Placement::Suffix;
  double loss = 0.0;
  // trace[0] is the loss at initialization, then the best-so-far loss after
  // each iteration.
  std::vector<double> trace;

  // Prompt with the adversarial tokens placed: appended for Suffix, inserted
  // after the first prompt token (the bos slot) for Prefix.
  std::vector<int> apply(std::span<const int> prompt) const;
  // Positions of the adversarial tokens within apply(prompt).
  std::vector<std::size_t> positions(std::size_t prompt_len) const;
};

// Greedy coordinate search minimizing the distance between the unlearned
// and reference states on the target positions of prompt + adv + target.
// Throws InvalidLayer, InvalidTarget, InvalidConfig.
AdversarialSuffix gcg_enhanced(const model::TransformerParams& unlearned, const model::TransformerParams& reference,
                               std::span<const int> prompt, std::span<const int> target, const GcgConfig& cfg);

// The enhanced attack's objective on a graph: one_hot_tokens [seq, vocab]
// feeds the unlearned model's embeddings, and the result sums over `layers`
// the mean distance to the reference states on the last n_target rows.
diff::Var distillation_loss(diff::Graph& graph, diff::Var one_hot_tokens, const model::TransformerParams& unlearned,
                            const model::TransformerParams& reference, std::span<const int> seq,
                            const std::vector<int>& layers, std::size_t n_target, DistillDistance distance);

// Same search with the mean cross-entropy of the target continuation.
// Throws InvalidTarget, InvalidConfig.
AdversarialSuffix gcg_classic(const model::TransformerParams& model, std::span<const int> prompt,
                              std::span<const int> target, const GcgConfig& cfg);

}  // namespace repolab::attacks
