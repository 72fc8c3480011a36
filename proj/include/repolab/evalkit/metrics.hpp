#pragma once

#include <span>
#include <vector>

#include "repolab/corpus/synth.hpp"
#include "repolab/corpus/vocab.hpp"
#include "repolab/model/generate.hpp"

namespace repolab::evalkit {

struct ToxicityResult {
  double mean = 0.0;
  std::vector<double> per_prompt;
};

// Oracle score of each generated continuation (prompt excluded), averaged
// over prompts. Throws EmptyPromptSet.
ToxicityResult toxicity_eval(const model::ModelView& model, const std::vector<std::vector<int>>& prompts,
                             const corpus::Vocabulary& vocab, const model::DecodeConfig& decode = {});

// Mean next-token NLL over continuation tokens, pooled over the corpus.
double continuation_nll(const model::ModelView& model, const std::vector<corpus::TextPair>& corpus);

// exp(continuation_nll). Throws EmptyCorpus.
double perplexity(const model::ModelView& model, const std::vector<corpus::TextPair>& corpus);

struct TokenScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Multiset overlap: each truth token matches at most as many times as it
// occurs. Empty inputs count as zero precision/recall.
TokenScores token_f1(std::span<const int> generated, std::span<const int> truth);

// Greedy (or configured) generation of len(truth) tokens per pair, F1 against
// the truth continuation, averaged per pair. Throws EmptyCorpus.
double f1(const model::ModelView& model, const std::vector<corpus::TextPair>& corpus,
          const model::DecodeConfig& decode = {});

}  // namespace repolab::evalkit
