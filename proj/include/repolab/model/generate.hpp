#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "repolab/model/transformer.hpp"

namespace repolab::model {

enum class DecodeMode { Greedy, Temperature };

struct DecodeConfig {
  DecodeMode mode = DecodeMode::Greedy;
  int max_new_tokens = 8;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  // Generation stops after this token is emitted; negative disables.
  int eos_token = -1;
  // Logits of these tokens are set to -inf before choosing.
  std::vector<int> suppress_tokens;
};

// Returns prompt followed by the generated tokens. Throws SequenceTooLong
// when prompt + max_new_tokens exceeds the context.
std::vector<int> generate(const ModelView& model, std::span<const int> prompt, const DecodeConfig& config);

// Decodes every prompt in lockstep with one packed forward per step. Prompt i
// samples from its own stream, so results match generate() on that prompt
// with the same config when i == 0.
std::vector<std::vector<int>> generate_batch(const ModelView& model, const std::vector<std::vector<int>>& prompts,
                                             const DecodeConfig& config);

}  // namespace repolab::model
