#pragma once

#include <vector>

#include "repolab/attacks/attack.hpp"
#include "repolab/corpus/synth.hpp"
#include "repolab/corpus/vocab.hpp"
#include "repolab/model/generate.hpp"

namespace repolab::attacks {

enum class RelearnView { Forget, Retain };

// Toxicity prompts used to score each attacked model.
struct RelearnEval {
  const std::vector<std::vector<int>>* prompts = nullptr;
  const corpus::Vocabulary* vocab = nullptr;
  model::DecodeConfig decode;
};

struct RelearnRun {
  model::TransformerParams params;
  std::vector<std::size_t> subset;  // indices into the train split
  double toxicity = 0.0;
};

struct RelearnOutcome {
  std::vector<RelearnRun> runs;
  double mean_toxicity = 0.0;
  double stderr_toxicity = 0.0;  // sample sd / sqrt(n), 0 for one run
};

// The attacked models alone, toxicity left at 0. Throws SubsetTooLarge.
std::vector<RelearnRun> relearn_models(const model::TransformerParams& model, const corpus::Dataset& dataset,
                                       RelearnView view, const AttackConfig& cfg);

// Mean and standard error of per-run scores.
std::pair<double, double> mean_stderr(const std::vector<double>& values);

// Fine-tunes with next-token cross-entropy on cfg.subset_size sequences drawn
// without replacement from the train split (s_f for Forget, s_r for Retain),
// once per run with a run-specific subset. Throws SubsetTooLarge.
RelearnOutcome relearn(const model::TransformerParams& model, const corpus::Dataset& dataset, RelearnView view,
                       const AttackConfig& cfg, const RelearnEval& eval);

struct SweepPoint {
  int subset_size = 0;
  double mean_toxicity = 0.0;
  double stderr_toxicity = 0.0;
};

// One relearn call per size, other settings from cfg.
std::vector<SweepPoint> relearn_sweep(const model::TransformerParams& model, const corpus::Dataset& dataset,
                                      RelearnView view, const std::vector<int>& sizes, const AttackConfig& cfg,
                                      const RelearnEval& eval);

}  // namespace repolab::attacks
