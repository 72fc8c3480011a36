#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "repolab/corpus/synth.hpp"
#include "repolab/corpus/vocab.hpp"
#include "repolab/model/generate.hpp"

namespace repolab::evalkit {

struct EvalReport {
  std::string model_id;
  std::string eval_set_id;
  double toxicity_mean = 0.0;
  double perplexity = 0.0;
  double f1 = 0.0;
  // Filled by with_ratios; 1 for the reference itself.
  double ppl_ratio = 1.0;
  double f1_ratio = 1.0;
  std::size_t n_prompts = 0;
  std::uint64_t seed = 0;
};

struct EvalInputs {
  std::string eval_set_id;
  const std::vector<std::vector<int>>* prompts = nullptr;
  const std::vector<corpus::TextPair>* utility = nullptr;  // PPL and F1 corpus
  const corpus::Vocabulary* vocab = nullptr;
  model::DecodeConfig decode;
};

// Toxicity on the prompts, perplexity and F1 on the utility corpus. Ratios are
// left at 1 until with_ratios is applied.
EvalReport evaluate(const model::ModelView& model, const std::string& model_id, const EvalInputs& inputs);

// Sets ppl_ratio and f1_ratio against the matching reference report.
// Throws MissingReference when reference covers another eval set.
EvalReport with_ratios(EvalReport report, const EvalReport& reference);

enum class TradeoffAxis { PplRatio, F1Ratio };
const char* to_string(TradeoffAxis axis);

struct ScatterPoint {
  std::string method;
  double x = 0.0;
  double y = 0.0;
  std::string eval_set;
};

struct ScatterData {
  TradeoffAxis axis = TradeoffAxis::PplRatio;
  std::vector<ScatterPoint> points;  // one per report, input order
  double guide = 1.0;                // dashed ratio = 1 line
  double ideal_x = 1.0;              // no utility change
  double ideal_y = 0.0;              // no toxicity
};

// Ratios are recomputed against the reference report sharing each point's
// eval set. Throws MissingReference when no such report exists.
ScatterData tradeoff_report(const std::vector<EvalReport>& reports, const std::vector<EvalReport>& references,
                            TradeoffAxis axis = TradeoffAxis::PplRatio);

// Header: method,x,y,eval-set
std::string scatter_csv(const ScatterData& data);

// One JSON object per report, newline-terminated.
std::string format_reports(const std::vector<EvalReport>& reports);
// Inverse of format_reports. Throws ParseError with the line number.
std::vector<EvalReport> parse_reports(const std::string& text);

}  // namespace repolab::evalkit
