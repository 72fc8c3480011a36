#pragma once

#include <span>
#include <string>
#include <vector>

#include "repolab/corpus/vocab.hpp"
#include "repolab/model/transformer.hpp"

namespace repolab::analysis {

enum class DriftKind { Residual, AttentionOut, MlpContribution, KeyActivation };

const char* to_string(DriftKind kind);
// Throws ConfigError.
DriftKind parse_drift_kind(const std::string& name);

// values[l][t] = 1 - cos(edited, reference) of the channel state at block l
// (0-based) and token t. Cells where either state has norm below 1e-12 are
// flagged, hold 0, and are skipped by localization_score.
struct DriftMap {
  DriftKind kind = DriftKind::Residual;
  std::vector<std::vector<double>> values;
  std::vector<std::vector<bool>> flagged;
  std::vector<std::string> tokens;

  std::size_t n_layers() const { return values.size(); }
  std::size_t n_tokens() const { return values.empty() ? 0 : values.front().size(); }
};

// 1 - cos(a, b); sets flagged and returns 0 when either norm is below 1e-12.
double one_minus_cosine(std::span<const double> a, std::span<const double> b, bool& flagged);

// Residual rows are the block outputs 1..n_layers. Throws ConfigMismatch.
DriftMap drift_heatmap(const model::TransformerParams& reference, const model::TransformerParams& edited,
                       std::span<const int> sequence, DriftKind kind, const corpus::Vocabulary* vocab = nullptr);

// Per block: mean over its tensors of |W_edit - W_ref| / |W_ref| (Frobenius),
// tensors with zero reference norm skipped. Throws ConfigMismatch.
std::vector<double> weight_block_distance(const model::TransformerParams& reference,
                                          const model::TransformerParams& edited);

struct LocalizationScore {
  double ratio = 0.0;
  double numerator = 0.0;    // mean deep drift on toxic columns
  double denominator = 0.0;  // mean deep drift on the other columns
  bool infinite = false;     // denominator below 1e-12; ratio is +inf
};

// Deep rows are the last quarter of the layer axis (at least one row).
// Throws EmptyPositions, InvalidConfig for positions off the token axis.
LocalizationScore localization_score(const DriftMap& drift, std::span<const std::size_t> toxic_positions);

// Pooled over several maps: cell means taken across all maps together.
LocalizationScore localization_score(std::span<const DriftMap> drifts,
                                     std::span<const std::vector<std::size_t>> toxic_positions);

}  // namespace repolab::analysis
