#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "repolab/analysis/drift.hpp"
#include "repolab/analysis/neurons.hpp"
#include "repolab/analysis/probe.hpp"
#include "repolab/attacks/report.hpp"
#include "repolab/cli/config.hpp"
#include "repolab/cli/manifest.hpp"
#include "repolab/evalkit/reports.hpp"
#include "repolab/objectives/trainer.hpp"

namespace repolab::cli {

using Logger = std::function<void(const std::string&)>;

// Everything the stages derive deterministically from the config.
struct Workspace {
  ConfigTree config;
  corpus::Vocabulary vocab;
  corpus::Dataset dataset;
  std::vector<std::vector<int>> forget_prompts;  // held-out provocative prompts
  std::vector<std::vector<int>> retain_prompts;  // held-out calm prompts
  std::vector<std::vector<int>> ood_prompts;
  std::vector<corpus::TextPair> utility;
};

// Synthesizes the pair corpus unless `dataset` is given.
Workspace make_workspace(const ConfigTree& config, const corpus::Dataset* dataset = nullptr);

corpus::GenConfig gen_config(const ConfigTree& config);
model::ModelConfig model_config(const ConfigTree& config);
objectives::MethodConfig method_config(const ConfigTree& config, objectives::Method method);
objectives::Schedule detox_schedule(const ConfigTree& config);
model::DecodeConfig decode_config(const ConfigTree& config);
std::vector<attacks::AttackSpec> attack_specs(const ConfigTree& config);

model::TransformerParams train_reference(const Workspace& ws, const Logger& log = {});

objectives::TrainResult detox_model(const Workspace& ws, const model::TransformerParams& reference,
                                    objectives::Method method, const Logger& log = {});

struct NamedParams {
  std::string name;
  model::TransformerParams params;
};

// Toxicity on forget-style and OOD prompts, utility on the utility corpus,
// ratios against the reference (first entry named "reference").
std::vector<evalkit::EvalReport> evaluate_models(const Workspace& ws, const std::vector<NamedParams>& models);

struct ModelAnalysis {
  std::string name;
  analysis::DomainProbeResult domain_probe;
  analysis::LocalizationScore localization;
  std::vector<double> weight_distance;
  analysis::DriftMap example_drift;  // first analysis sequence
  analysis::KeyValueReport keyvalue;
  std::vector<analysis::AlignmentCurve> curves;
};

struct AnalysisBundle {
  analysis::ToxicDirection direction;
  analysis::DomainProbeResult reference_probe;
  std::vector<ModelAnalysis> models;
};

// Held-out forget sequences used for drift maps, with their toxic positions.
std::vector<std::vector<int>> analysis_sequences(const Workspace& ws);
std::vector<std::size_t> toxic_positions(const std::vector<int>& sequence, const corpus::Vocabulary& vocab);

AnalysisBundle analyze_models(const Workspace& ws, const model::TransformerParams& reference,
                              const std::vector<NamedParams>& edited, const Logger& log = {});
std::string format_analysis(const AnalysisBundle& bundle);

// Relearn-forget post-attack toxicity per method and subset size.
std::vector<attacks::SweepRow> relearn_sweep_rows(const Workspace& ws, const std::vector<NamedParams>& models,
                                                  const std::vector<evalkit::EvalReport>& pre);

struct PipelineSummary {
  std::vector<evalkit::EvalReport> eval;
  std::vector<attacks::AttackRow> attacks;
  AnalysisBundle analysis;
  std::map<std::string, double> stage_seconds;
  std::map<std::string, std::string> checkpoint_digests;
};

// synth -> reference -> every pipeline.methods detox -> attacks -> analysis
// -> eval -> figures, all written into `run`. `attacks_enabled` false skips
// the attack stage.
PipelineSummary run_pipeline(const Workspace& ws, const RunDir& run, RunManifest& manifest, const Logger& log = {},
                             bool attacks_enabled = true);

}  // namespace repolab::cli
