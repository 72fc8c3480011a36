#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "repolab/corpus/vocab.hpp"

namespace repolab::corpus {

// Role assignment over the benign ids. A prompt is
//   bos, family, topic, w_1 .. w_n, style
// where the w_i are words of the topic and the style token (calm or
// provocative) closes the prompt. A benign continuation walks the topic's
// word cycle from w_n with a family-specific stride; the toxic variant
// swaps evenly spaced slots for topic-keyed toxic tokens.
struct TemplateLayout {
  static constexpr int kFamilies = 4;
  static constexpr int kTopics = 6;
  static constexpr int kWordsPerTopic = 6;
  static constexpr int kOodFamily = 3;
  static constexpr int kBenignNeeded = kFamilies + 2 + kTopics + kTopics * kWordsPerTopic;

  std::vector<int> family_tokens;
  std::vector<int> topic_tokens;
  int calm_token = -1;
  int provocative_token = -1;
  std::vector<std::vector<int>> words;  // [topic][index]
  std::vector<int> toxic;
  int bos = 1;

  // Throws InfeasibleTemplate if the vocabulary lacks the needed roles.
  static TemplateLayout from(const Vocabulary& vocab);

  static int stride(int family);
  int toxic_token(int topic, int occurrence) const;
  bool provocative(std::span<const int> prompt) const;
  int family_of(std::span<const int> prompt) const;
};

enum class Split { Train, HeldOut };

const char* to_string(Split split);

struct PairedTriple {
  std::vector<int> prompt;
  std::vector<int> retain;
  std::vector<int> forget;
  Split split = Split::Train;

  std::vector<int> retain_sequence() const;  // s_r = [prompt; retain]
  std::vector<int> forget_sequence() const;  // s_f = [prompt; forget]
  bool operator==(const PairedTriple&) const = default;
};

struct Dataset {
  std::vector<PairedTriple> triples;

  std::vector<const PairedTriple*> view(Split split) const;
  bool operator==(const Dataset&) const = default;
};

struct GenConfig {
  int n_triples = 2048;
  int prompt_len_min = 6;
  int prompt_len_max = 9;
  int cont_len_min = 8;
  int cont_len_max = 8;
  double toxic_density = 0.5;
  int family = 0;
  double provocative_fraction = 0.5;
  double held_out_fraction = 0.1;
  std::uint64_t seed = 7;
};

// Throws InfeasibleTemplate.
Dataset synth_pair_corpus(const Vocabulary& vocab, const GenConfig& config);

// Number and positions of toxic slots in a continuation of length `length`.
// Throws InfeasibleTemplate when the density yields no slot.
std::vector<int> toxic_slots(int length, double density);

struct OodConfig {
  int n_prompts = 256;
  int prompt_len_min = 6;
  int prompt_len_max = 9;
  double provocative_fraction = 1.0;
  std::uint64_t seed = 11;
};

// Prompts from a family that synth_pair_corpus never emits.
std::vector<std::vector<int>> synth_ood_prompts(const Vocabulary& vocab, const OodConfig& config);

struct TextPair {
  std::vector<int> prompt;
  std::vector<int> continuation;
  bool operator==(const TextPair&) const = default;
};

struct NeutralConfig {
  int n_pairs = 256;
  // Family 0 is the template family the pair corpus is built from, so this
  // is a fresh draw from the retain distribution.
  std::vector<int> families{0};
  int prompt_len_min = 6;
  int prompt_len_max = 9;
  int cont_len = 8;
  std::uint64_t seed = 13;
};

// Calm prompts with benign continuations; the utility corpus.
std::vector<TextPair> synth_neutral_corpus(const Vocabulary& vocab, const NeutralConfig& config);

struct PretrainConfig {
  int n_sequences = 6144;
  int prompt_len_min = 6;
  int prompt_len_max = 9;
  int cont_len = 8;
  double toxic_density = 0.5;
  // Probability that a sequence continues toxically, by prompt style.
  double toxic_given_provocative = 0.8;
  double toxic_given_calm = 0.06;
  std::uint64_t seed = 17;
};

// Mixture over all four families and both styles used to train the
// reference model from scratch.
std::vector<std::vector<int>> synth_pretraining_corpus(const Vocabulary& vocab, const PretrainConfig& config);

}  // namespace repolab::corpus
