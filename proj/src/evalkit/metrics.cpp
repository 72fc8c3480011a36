#include "repolab/evalkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "repolab/util/error.hpp"

namespace repolab::evalkit {

ToxicityResult toxicity_eval(const model::ModelView& model, const std::vector<std::vector<int>>& prompts,
                             const corpus::Vocabulary& vocab, const model::DecodeConfig& decode) {
  if (prompts.empty()) throw Error(ErrorKind::EmptyPromptSet, "toxicity evaluation needs at least one prompt");
  const auto outputs = model::generate_batch(model, prompts, decode);
  ToxicityResult r;
  r.per_prompt.reserve(prompts.size());
  double total = 0.0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const std::span<const int> cont = std::span<const int>(outputs[i]).subspan(prompts[i].size());
    r.per_prompt.push_back(corpus::toxicity_oracle(cont, vocab));
    total += r.per_prompt.back();
  }
  r.mean = total / static_cast<double>(prompts.size());
  return r;
}

double continuation_nll(const model::ModelView& model, const std::vector<corpus::TextPair>& corpus) {
  if (corpus.empty()) throw Error(ErrorKind::EmptyCorpus, "perplexity needs a non-empty corpus");
  constexpr std::size_t kChunk = 64;
  double nll = 0.0;
  std::size_t count = 0;
  for (std::size_t c0 = 0; c0 < corpus.size(); c0 += kChunk) {
    std::vector<std::vector<int>> seqs;
    for (std::size_t i = c0; i < std::min(corpus.size(), c0 + kChunk); ++i) {
      std::vector<int> s = corpus[i].prompt;
      s.insert(s.end(), corpus[i].continuation.begin(), corpus[i].continuation.end());
      seqs.push_back(std::move(s));
    }
    const model::PackedBatch packed = model::PackedBatch::from(seqs);
    const diff::Tensor logits = model::forward_batch(model, packed).logits;
    const std::size_t v = logits.cols();
    for (std::size_t k = 0; k < seqs.size(); ++k) {
      const model::Segment& seg = packed.segments[k];
      const std::size_t from = std::max<std::size_t>(corpus[c0 + k].prompt.size(), 1);
      for (std::size_t t = from; t < seg.length; ++t) {
        const double* row = logits.data().data() + (seg.start + t - 1) * v;
        const double mx = *std::max_element(row, row + v);
        double z = 0.0;
        for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
        nll -= row[seqs[k][t]] - mx - std::log(z);
        ++count;
      }
    }
  }
  if (count == 0) throw Error(ErrorKind::EmptyCorpus, "corpus has no continuation tokens");
  return nll / static_cast<double>(count);
}

double perplexity(const model::ModelView& model, const std::vector<corpus::TextPair>& corpus) {
  return std::exp(continuation_nll(model, corpus));
}

TokenScores token_f1(std::span<const int> generated, std::span<const int> truth) {
  std::map<int, int> remaining;
  for (int t : truth) ++remaining[t];
  int matched = 0;
  for (int t : generated) {
    auto it = remaining.find(t);
    if (it != remaining.end() && it->second > 0) {
      --it->second;
      ++matched;
    }
  }
  TokenScores s;
  if (!generated.empty()) s.precision = static_cast<double>(matched) / static_cast<double>(generated.size());
  if (!truth.empty()) s.recall = static_cast<double>(matched) / static_cast<double>(truth.size());
  if (s.precision + s.recall > 0.0) s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

double f1(const model::ModelView& model, const std::vector<corpus::TextPair>& corpus,
          const model::DecodeConfig& decode) {
  if (corpus.empty()) throw Error(ErrorKind::EmptyCorpus, "f1 needs a non-empty corpus");
  // Pairs are grouped by continuation length so each group decodes in one batch.
  std::map<std::size_t, std::vector<std::size_t>> by_len;
  for (std::size_t i = 0; i < corpus.size(); ++i) by_len[corpus[i].continuation.size()].push_back(i);
  std::vector<double> scores(corpus.size(), 0.0);
  for (const auto& [len, idx] : by_len) {
    if (len == 0) continue;
    model::DecodeConfig cfg = decode;
    cfg.max_new_tokens = static_cast<int>(len);
    std::vector<std::vector<int>> prompts;
    for (std::size_t i : idx) prompts.push_back(corpus[i].prompt);
    const auto outs = model::generate_batch(model, prompts, cfg);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto gen = std::span<const int>(outs[k]).subspan(prompts[k].size());
      scores[idx[k]] = token_f1(gen, corpus[idx[k]].continuation).f1;
    }
  }
  double total = 0.0;
  for (double s : scores) total += s;
  return total / static_cast<double>(corpus.size());
}

}  // namespace repolab::evalkit
