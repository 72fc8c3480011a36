#include "repolab/corpus/synth.hpp"

#include <algorithm>
#include <cmath>

#include "repolab/util/error.hpp"
#include "repolab/util/rng.hpp"

namespace repolab::corpus {

TemplateLayout TemplateLayout::from(const Vocabulary& vocab) {
  if (static_cast<int>(vocab.benign_ids.size()) < kBenignNeeded) {
    throw Error(ErrorKind::InfeasibleTemplate, "templates need " + std::to_string(kBenignNeeded) +
                                                   " benign tokens, vocabulary has " +
                                                   std::to_string(vocab.benign_ids.size()));
  }
  if (vocab.toxic_ids.empty()) throw Error(ErrorKind::InfeasibleTemplate, "vocabulary has no toxic tokens");
  TemplateLayout t;
  t.bos = vocab.bos;
  auto next = vocab.benign_ids.begin();
  for (int f = 0; f < kFamilies; ++f) t.family_tokens.push_back(*next++);
  t.calm_token = *next++;
  t.provocative_token = *next++;
  for (int k = 0; k < kTopics; ++k) t.topic_tokens.push_back(*next++);
  t.words.assign(kTopics, {});
  for (int k = 0; k < kTopics; ++k) {
    for (int w = 0; w < kWordsPerTopic; ++w) t.words[k].push_back(*next++);
  }
  t.toxic = vocab.toxic_ids;
  return t;
}

int TemplateLayout::stride(int family) {
  static constexpr int kStrides[kFamilies] = {1, kWordsPerTopic - 1, 2, 3};
  return kStrides[family];
}

int TemplateLayout::toxic_token(int topic, int occurrence) const {
  return toxic[static_cast<std::size_t>(2 * topic + occurrence) % toxic.size()];
}

bool TemplateLayout::provocative(std::span<const int> prompt) const {
  return !prompt.empty() && prompt.back() == provocative_token;
}

int TemplateLayout::family_of(std::span<const int> prompt) const {
  if (prompt.size() < 2) return -1;
  auto it = std::find(family_tokens.begin(), family_tokens.end(), prompt[1]);
  return it == family_tokens.end() ? -1 : static_cast<int>(it - family_tokens.begin());
}

const char* to_string(Split split) { return split == Split::Train ? "train" : "held-out"; }

std::vector<int> PairedTriple::retain_sequence() const {
  std::vector<int> s = prompt;
  s.insert(s.end(), retain.begin(), retain.end());
  return s;
}

std::vector<int> PairedTriple::forget_sequence() const {
  std::vector<int> s = prompt;
  s.insert(s.end(), forget.begin(), forget.end());
  return s;
}

std::vector<const PairedTriple*> Dataset::view(Split split) const {
  std::vector<const PairedTriple*> out;
  for (const auto& t : triples) {
    if (t.split == split) out.push_back(&t);
  }
  return out;
}

std::vector<int> toxic_slots(int length, double density) {
  if (length < 1 || !(density > 0.0) || density > 1.0) {
    throw Error(ErrorKind::InfeasibleTemplate, "toxic density " + std::to_string(density) +
                                                   " with continuation length " + std::to_string(length));
  }
  const int k = static_cast<int>(std::lround(density * length));
  if (k < 1) {
    throw Error(ErrorKind::InfeasibleTemplate, "toxic density " + std::to_string(density) +
                                                   " leaves no toxic slot in a continuation of length " +
                                                   std::to_string(length));
  }
  std::vector<int> slots;
  for (int i = 0; i < k; ++i) slots.push_back(i * length / k);
  return slots;
}

namespace {

struct Draw {
  std::vector<int> prompt;
  std::vector<int> retain;
  std::vector<int> forget;
};

Draw draw_sequence(const TemplateLayout& t, int family, bool provocative, int prompt_len, int cont_len,
                   double density, Rng& rng) {
  if (prompt_len < 5) throw Error(ErrorKind::InfeasibleTemplate, "prompts need at least 5 tokens");
  Draw d;
  const int topic = static_cast<int>(rng.index(TemplateLayout::kTopics));
  d.prompt = {t.bos, t.family_tokens[static_cast<std::size_t>(family)], t.topic_tokens[static_cast<std::size_t>(topic)]};
  int last = 0;
  for (int i = 0; i < prompt_len - 4; ++i) {
    last = static_cast<int>(rng.index(TemplateLayout::kWordsPerTopic));
    d.prompt.push_back(t.words[static_cast<std::size_t>(topic)][static_cast<std::size_t>(last)]);
  }
  d.prompt.push_back(provocative ? t.provocative_token : t.calm_token);

  const int stride = TemplateLayout::stride(family);
  for (int j = 0; j < cont_len; ++j) {
    const int w = (last + stride * (j + 1)) % TemplateLayout::kWordsPerTopic;
    d.retain.push_back(t.words[static_cast<std::size_t>(topic)][static_cast<std::size_t>(w)]);
  }
  d.forget = d.retain;
  const std::vector<int> slots = toxic_slots(cont_len, density);
  for (std::size_t i = 0; i < slots.size(); ++i) {
    d.forget[static_cast<std::size_t>(slots[i])] = t.toxic_token(topic, static_cast<int>(i));
  }
  return d;
}

void check_ranges(int lo, int hi, const char* what) {
  if (lo > hi || lo < 1) {
    throw Error(ErrorKind::InfeasibleTemplate, std::string(what) + " range [" + std::to_string(lo) + ", " +
                                                   std::to_string(hi) + "] is empty");
  }
}

}  // namespace

Dataset synth_pair_corpus(const Vocabulary& vocab, const GenConfig& config) {
  const TemplateLayout t = TemplateLayout::from(vocab);
  check_ranges(config.prompt_len_min, config.prompt_len_max, "prompt length");
  check_ranges(config.cont_len_min, config.cont_len_max, "continuation length");
  for (int len = config.cont_len_min; len <= config.cont_len_max; ++len) toxic_slots(len, config.toxic_density);
  if (config.family < 0 || config.family >= TemplateLayout::kFamilies || config.family == TemplateLayout::kOodFamily) {
    throw Error(ErrorKind::InfeasibleTemplate, "family " + std::to_string(config.family) + " is not a training family");
  }
  Rng rng(config.seed);
  Dataset ds;
  ds.triples.reserve(static_cast<std::size_t>(std::max(config.n_triples, 0)));
  for (int i = 0; i < config.n_triples; ++i) {
    const bool provocative = rng.bernoulli(config.provocative_fraction);
    const int plen = rng.range(config.prompt_len_min, config.prompt_len_max);
    const int clen = rng.range(config.cont_len_min, config.cont_len_max);
    Draw d = draw_sequence(t, config.family, provocative, plen, clen, config.toxic_density, rng);
    ds.triples.push_back(PairedTriple{std::move(d.prompt), std::move(d.retain), std::move(d.forget), Split::Train});
  }
  // Held-out membership is a seeded shuffle of indices so the split does not
  // correlate with generation order.
  std::vector<std::size_t> order(ds.triples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng split_rng(Rng::mix(config.seed, 1));
  split_rng.shuffle(order);
  const auto n_held = static_cast<std::size_t>(std::lround(config.held_out_fraction * static_cast<double>(order.size())));
  for (std::size_t i = 0; i < n_held; ++i) ds.triples[order[i]].split = Split::HeldOut;
  return ds;
}

std::vector<std::vector<int>> synth_ood_prompts(const Vocabulary& vocab, const OodConfig& config) {
  const TemplateLayout t = TemplateLayout::from(vocab);
  check_ranges(config.prompt_len_min, config.prompt_len_max, "prompt length");
  Rng rng(config.seed);
  std::vector<std::vector<int>> prompts;
  for (int i = 0; i < config.n_prompts; ++i) {
    const bool provocative = rng.bernoulli(config.provocative_fraction);
    const int plen = rng.range(config.prompt_len_min, config.prompt_len_max);
    prompts.push_back(draw_sequence(t, TemplateLayout::kOodFamily, provocative, plen, 1, 1.0, rng).prompt);
  }
  return prompts;
}

std::vector<TextPair> synth_neutral_corpus(const Vocabulary& vocab, const NeutralConfig& config) {
  const TemplateLayout t = TemplateLayout::from(vocab);
  check_ranges(config.prompt_len_min, config.prompt_len_max, "prompt length");
  if (config.families.empty()) throw Error(ErrorKind::InfeasibleTemplate, "neutral corpus needs a family");
  for (int f : config.families) {
    if (f < 0 || f >= TemplateLayout::kFamilies || f == TemplateLayout::kOodFamily) {
      throw Error(ErrorKind::InfeasibleTemplate, "family " + std::to_string(f) + " is not a training family");
    }
  }
  Rng rng(config.seed);
  std::vector<TextPair> pairs;
  for (int i = 0; i < config.n_pairs; ++i) {
    const int family = config.families[rng.index(config.families.size())];
    const int plen = rng.range(config.prompt_len_min, config.prompt_len_max);
    Draw d = draw_sequence(t, family, false, plen, config.cont_len, 1.0, rng);
    pairs.push_back(TextPair{std::move(d.prompt), std::move(d.retain)});
  }
  return pairs;
}

std::vector<std::vector<int>> synth_pretraining_corpus(const Vocabulary& vocab, const PretrainConfig& config) {
  const TemplateLayout t = TemplateLayout::from(vocab);
  check_ranges(config.prompt_len_min, config.prompt_len_max, "prompt length");
  toxic_slots(config.cont_len, config.toxic_density);
  Rng rng(config.seed);
  std::vector<std::vector<int>> out;
  out.reserve(static_cast<std::size_t>(std::max(config.n_sequences, 0)));
  for (int i = 0; i < config.n_sequences; ++i) {
    const int family = static_cast<int>(rng.index(TemplateLayout::kFamilies));
    const bool provocative = rng.bernoulli(0.5);
    const int plen = rng.range(config.prompt_len_min, config.prompt_len_max);
    Draw d = draw_sequence(t, family, provocative, plen, config.cont_len, config.toxic_density, rng);
    const bool toxic = rng.bernoulli(provocative ? config.toxic_given_provocative : config.toxic_given_calm);
    std::vector<int> s = std::move(d.prompt);
    const auto& cont = toxic ? d.forget : d.retain;
    s.insert(s.end(), cont.begin(), cont.end());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace repolab::corpus
