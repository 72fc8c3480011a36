#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "repolab/analysis/drift.hpp"
#include "repolab/analysis/probe.hpp"

namespace repolab::analysis {

// MLP neurons are numbered layer * d_mlp + j across all blocks.
struct NeuronRef {
  int layer = 0;
  int index = 0;
};

NeuronRef neuron_ref(const model::ModelConfig& config, int id);

// cos(value vector of each neuron, direction), reference weights.
std::vector<double> value_alignment(const model::TransformerParams& params, std::span<const double> direction);

// Mean over all tokens of |key_edit - key_ref| per neuron id.
std::vector<double> mean_activation_change(const model::TransformerParams& reference,
                                           const model::TransformerParams& edited,
                                           const std::vector<std::vector<int>>& sequences);

// Centered moving mean taking window / 2 neighbours on each side; near the
// ends both sides shrink to the distance from the nearer edge.
std::vector<double> smooth(std::span<const double> y, int window);

enum class AlignmentGroup { Top, Bottom, Random };
const char* to_string(AlignmentGroup group);

struct AlignmentCurve {
  AlignmentGroup group = AlignmentGroup::Top;
  std::vector<int> neurons;
  std::vector<double> x;  // cosine with the direction, ascending
  std::vector<double> y_raw;
  std::vector<double> y;  // smoothed
  int window = 20;
};

// Top-K and bottom-K by cosine (ties to the lower neuron id), then K drawn
// uniformly from the rest. Throws KTooLarge when 3K exceeds the neuron count.
std::vector<AlignmentCurve> neuron_alignment_curve(const model::TransformerParams& reference,
                                                   const model::TransformerParams& edited,
                                                   const ToxicDirection& direction,
                                                   const std::vector<std::vector<int>>& sequences, int k = 64,
                                                   int window = 20, std::uint64_t seed = 0);

enum class DimensionChannel { MlpContribution, KeyActivation };

struct DimensionDrift {
  DimensionChannel channel = DimensionChannel::MlpContribution;
  std::vector<std::vector<int>> toxic_dims;     // per layer, neuron indices within the layer
  std::vector<std::vector<int>> nontoxic_dims;  // per layer
  DriftMap toxic;
  DriftMap nontoxic;
};

// Per layer, the n_toxic neurons with the largest cosine to the direction and
// the n_nontoxic with |cosine| closest to zero among the rest. The key channel
// compares the selected key activations; the contribution channel compares
// sum_j key_j * value_j over the selection. Throws ConfigMismatch, KTooLarge.
DimensionDrift dimension_drift_heatmap(const model::TransformerParams& reference,
                                       const model::TransformerParams& edited, std::span<const int> sequence,
                                       const ToxicDirection& direction, DimensionChannel channel, int n_toxic = 10,
                                       int n_nontoxic = 10);

struct KeyValueReport {
  std::vector<int> neurons;            // top-K aligned, descending alignment
  std::vector<double> alignment;       // cosine with the direction
  std::vector<double> value_cosine;    // cos(value_ref, value_edit)
  std::vector<double> key_cosine;      // cos(key_ref, key_edit)
  std::vector<double> activation_change;
};

// Throws KTooLarge, ConfigMismatch.
KeyValueReport keyvalue_cosine_report(const model::TransformerParams& reference,
                                      const model::TransformerParams& edited, const ToxicDirection& direction, int k,
                                      const std::vector<std::vector<int>>& sequences);

}  // namespace repolab::analysis
