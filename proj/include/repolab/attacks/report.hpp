#pragma once

#include <optional>
#include <string>
#include <vector>

#include "repolab/attacks/attack.hpp"
#include "repolab/attacks/gcg.hpp"
#include "repolab/corpus/synth.hpp"
#include "repolab/corpus/vocab.hpp"
#include "repolab/model/generate.hpp"

namespace repolab::attacks {

struct NamedModel {
  std::string name;
  const model::TransformerParams* params = nullptr;
  // Hash of the vocabulary the model was trained with; empty skips the check.
  std::string vocab_hash;
};

struct EvalSet {
  std::string name;
  std::vector<std::vector<int>> prompts;
};

struct AttackSpec {
  std::string label;  // row label, defaults to the kind name
  AttackConfig config;
  GcgConfig gcg;
  // GCG is run on the first gcg_prompts prompts of each eval set; pre and
  // post are both measured on that subset.
  int gcg_prompts = 8;
};

struct AttackContext {
  const model::TransformerParams* reference = nullptr;
  const corpus::Dataset* dataset = nullptr;
  const corpus::Vocabulary* vocab = nullptr;
  model::DecodeConfig decode;
  // Forget sequences used for the diff-in-means direction.
  int direction_sequences = 256;
};

struct AttackRow {
  std::string method;
  std::string attack;
  std::string eval_set;
  double pre = 0.0;
  double post = 0.0;
  double post_stderr = 0.0;
  int n_runs = 1;
  std::uint64_t seed = 0;
};

// Rows ordered model-major, then attack, then eval set. Relearning trains
// once per (model, attack) and scores every eval set on each run. GCG targets
// are the reference model's greedy continuation of each prompt. Throws
// VocabMismatch.
std::vector<AttackRow> attack_report(const std::vector<NamedModel>& models, const std::vector<AttackSpec>& attacks,
                                     const std::vector<EvalSet>& eval_sets, const AttackContext& context);

// One JSON object per row, newline-terminated.
std::string format_rows(const std::vector<AttackRow>& rows);
// Inverse of format_rows. Throws ParseError with the line number.
std::vector<AttackRow> parse_rows(const std::string& text);
// Aligned text table with "post (pre)" cells.
std::string render_table(const std::vector<AttackRow>& rows);

struct SweepRow {
  int subset_size = 0;
  std::string method;
  std::string eval_set;
  double mean_toxicity = 0.0;
  double stderr_toxicity = 0.0;
  std::optional<double> baseline;  // toxicity before the attack
};

// Header: subset-size,method,eval-set,mean-toxicity,stderr,baseline
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace repolab::attacks
