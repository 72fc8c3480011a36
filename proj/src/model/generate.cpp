#include "repolab/model/generate.hpp"

#include <cmath>
#include <limits>

#include "repolab/util/error.hpp"
#include "repolab/util/rng.hpp"

namespace repolab::model {

namespace {

int choose_token(std::span<const double> logits, const DecodeConfig& config, Rng& rng) {
  std::vector<double> z(logits.begin(), logits.end());
  for (int t : config.suppress_tokens) {
    if (t >= 0 && static_cast<std::size_t>(t) < z.size()) z[static_cast<std::size_t>(t)] = -std::numeric_limits<double>::infinity();
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < z.size(); ++i) {
    if (z[i] > z[best]) best = i;
  }
  if (config.mode == DecodeMode::Greedy) return static_cast<int>(best);

  std::vector<double> p(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp((z[i] - z[best]) / config.temperature);
    total += p[i];
  }
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    u -= p[i];
    if (u < 0.0) return static_cast<int>(i);
  }
  return static_cast<int>(best);
}

}  // namespace

std::vector<std::vector<int>> generate_batch(const ModelView& model, const std::vector<std::vector<int>>& prompts,
                                             const DecodeConfig& config) {
  const ModelConfig& mc = model.params->config;
  if (config.max_new_tokens < 0) throw Error(ErrorKind::InvalidConfig, "max-new-tokens must be >= 0");
  if (config.mode == DecodeMode::Temperature && !(config.temperature > 0.0)) {
    throw Error(ErrorKind::InvalidConfig, "temperature must be positive");
  }
  for (const auto& prompt : prompts) {
    if (prompt.empty()) throw Error(ErrorKind::InvalidConfig, "prompt must be non-empty");
    if (prompt.size() + static_cast<std::size_t>(config.max_new_tokens) > static_cast<std::size_t>(mc.context_length)) {
      throw Error(ErrorKind::SequenceTooLong, "prompt of " + std::to_string(prompt.size()) + " tokens plus " +
                                                  std::to_string(config.max_new_tokens) + " new tokens exceeds context");
    }
    validate_tokens(mc, prompt);
  }

  std::vector<std::vector<int>> seqs = prompts;
  std::vector<bool> done(prompts.size(), false);
  std::vector<Rng> rngs;
  rngs.reserve(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) rngs.emplace_back(Rng::mix(config.seed, i));

  for (int step = 0; step < config.max_new_tokens; ++step) {
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      if (!done[i]) active.push_back(i);
    }
    if (active.empty()) break;
    std::vector<std::vector<int>> pending;
    pending.reserve(active.size());
    for (std::size_t i : active) pending.push_back(seqs[i]);
    const PackedBatch batch = PackedBatch::from(pending);
    const ForwardResult fr = forward_batch(model, batch, {});
    for (std::size_t k = 0; k < active.size(); ++k) {
      const Segment& seg = batch.segments[k];
      const int next = choose_token(fr.logits.row(seg.start + seg.length - 1), config, rngs[active[k]]);
      seqs[active[k]].push_back(next);
      if (next == config.eos_token) done[active[k]] = true;
    }
  }
  return seqs;
}

std::vector<int> generate(const ModelView& model, std::span<const int> prompt, const DecodeConfig& config) {
  std::vector<std::vector<int>> one{std::vector<int>(prompt.begin(), prompt.end())};
  return generate_batch(model, one, config).front();
}

}  // namespace repolab::model
