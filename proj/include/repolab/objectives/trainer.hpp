#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "repolab/corpus/synth.hpp"
#include "repolab/objectives/repo_step.hpp"

namespace repolab::objectives {

enum class Method { Repo, SureSegment, Ce, Dpo, Npo, Rmu, Cb };

const char* to_string(Method method);
// Throws ConfigError for unknown names.
Method parse_method(const std::string& name);

struct BaselineConfig {
  double lr = 3e-5;
  double beta = 0.5;
  // Weighting for NPO / RMU / CB; unset means the method default
  // (0.2, 0.95, 100).
  std::optional<double> alpha;
  double c = 8.0;  // RMU control-vector norm
  std::uint64_t control_seed = 5;
  int segment_length = 4;  // sure-segment window
  LogitClamp clamp{};
  double grad_clip = 10.0;  // DPO and NPO only

  double resolved_alpha(Method method) const;
  void validate(Method method) const;
};

struct MethodConfig {
  Method method = Method::Repo;
  RepoConfig repo{};
  BaselineConfig baseline{};
};

struct Schedule {
  int epochs = 10;
  int batch_size = 32;
  int warmup_steps = 100;
  double weight_decay = 0.001;
  OptimizerKind optimizer = OptimizerKind::AdamW;
  std::uint64_t seed = 0;
};

struct StepRecord {
  long step = 0;
  int epoch = 0;
  std::string method;
  std::vector<std::pair<std::string, double>> components;
  double grad_norm = 0.0;
  std::optional<double> disc_grad_norm;
  double lr = 0.0;
};

struct TrainResult {
  model::TransformerParams params;
  std::optional<DiscriminatorParams> disc;
  std::vector<StepRecord> log;
};

// Called after every epoch with the epoch index and current parameters.
using EpochHook = std::function<void(int epoch, const model::TransformerParams& params)>;

// Runs the per-method step over seed-shuffled batches of the train split.
// Throws NonFiniteLoss naming the step, EmptyBatch when the split is empty.
TrainResult train(const MethodConfig& method, const model::TransformerParams& initial,
                  const model::TransformerParams& reference, const corpus::Dataset& dataset, const Schedule& schedule,
                  const EpochHook& on_epoch = {});

// Plain next-token cross-entropy on whole sequences; used to pretrain the
// reference model and by the relearning attack.
TrainResult train_lm(const model::TransformerParams& initial, const std::vector<std::vector<int>>& sequences,
                     const Schedule& schedule, double lr, const std::string& label = "lm");

// One JSON object per record, newline-terminated.
std::string format_log(const std::vector<StepRecord>& log);

}  // namespace repolab::objectives
