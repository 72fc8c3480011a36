#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "repolab/corpus/synth.hpp"
#include "repolab/model/transformer.hpp"
#include "repolab/objectives/discriminator.hpp"

namespace repolab::objectives {

using model::ModelConfig;
using model::ParamVars;
using model::TransformerParams;

enum class KlDirection {
  RefToPolicy,  // KL(pi_ref || pi_theta)
  PolicyToRef,  // KL(pi_theta || pi_ref)
};

enum class DomainScope { FullSequence, ContinuationOnly };

// Next-token targets are tokens[p] for p >= score_from, predicted from the
// logits at p - 1.
struct ScoredSequence {
  std::vector<int> tokens;
  std::size_t score_from = 1;
};

struct LabeledSequence {
  std::vector<int> tokens;
  std::size_t prompt_len = 0;
  double label = 0.0;
};

// A scalar objective together with its named components.
struct LossTerms {
  Var total;
  std::vector<std::pair<std::string, Var>> parts;

  Var part(const std::string& name) const;
};

// The model inside a graph: its config and bound tensors.
struct PolicyRef {
  const ModelConfig& config;
  const ParamVars& params;
};

// All losses below throw EmptyBatch on an empty batch.

// Mean over sequences of the per-sequence token mean of the chosen KL,
// over every position of each sequence.
Var retain_loss(Graph& graph, const PolicyRef& policy, const TransformerParams& reference,
                std::span<const std::vector<int>> sequences, KlDirection direction = KlDirection::RefToPolicy);

// Mean over sequences of (1/T) sum_t BCE(q_t, d) on the probe-layer states,
// T and the token range set by scope.
Var domain_loss(Graph& graph, const PolicyRef& policy, const DiscVars& disc, std::span<const LabeledSequence> batch,
                DomainScope scope = DomainScope::FullSequence, bool through_grl = false, double grl_lambda = 1.0);

// As domain_loss, but states are mean-pooled over consecutive windows of
// segment_length tokens (the last window may be shorter) before the
// discriminator; BCE is averaged over windows, then over sequences.
Var sure_segment_domain_loss(Graph& graph, const PolicyRef& policy, const DiscVars& disc,
                             std::span<const LabeledSequence> batch, int segment_length,
                             DomainScope scope = DomainScope::FullSequence, bool through_grl = false,
                             double grl_lambda = 1.0);

// Token-weighted mean next-token cross-entropy over all scored positions.
Var ce_loss(Graph& graph, const PolicyRef& policy, std::span<const ScoredSequence> batch);
// ce_loss scoring every token after the first.
Var ce_retain_loss(Graph& graph, const PolicyRef& policy, std::span<const std::vector<int>> sequences);

struct LogitClamp {
  double lo = -30.0;
  double hi = 30.0;
};

// mean_i -log sigmoid(beta * ((log pi(x_r) - log pi(x_f)) - (same under ref)))
Var dpo_loss(Graph& graph, const PolicyRef& policy, const TransformerParams& reference,
             std::span<const corpus::PairedTriple> batch, double beta, LogitClamp clamp = {});

// parts: "forget" = mean_i -(2/beta) log sigmoid(-beta (log pi(x_f) - log pi_ref(x_f))),
//        "retain" = clamped ce_retain_loss on s_r;
// total = alpha * forget + (1 - alpha) * retain.
LossTerms npo_loss(Graph& graph, const PolicyRef& policy, const TransformerParams& reference,
                   std::span<const corpus::PairedTriple> batch, double beta, double alpha, LogitClamp clamp = {});

// Fixed control direction with norm c drawn from seed.
std::vector<double> control_vector(int d_model, double c, std::uint64_t seed);

// parts: "forget" = mean over forget-continuation tokens of the mean squared
// difference between the probe-layer state and u; "retain" = the same
// against reference states over every s_r token; total = forget + alpha * retain.
LossTerms rmu_loss(Graph& graph, const PolicyRef& policy, const TransformerParams& reference,
                   std::span<const corpus::PairedTriple> batch, std::span<const double> control, double alpha);

// parts: "reroute" = mean over forget-continuation tokens of
// relu(cos(h, h_ref)); "retain" = mean squared state difference on s_r;
// total = alpha * reroute + retain.
LossTerms cb_loss(Graph& graph, const PolicyRef& policy, const TransformerParams& reference,
                  std::span<const corpus::PairedTriple> batch, double alpha);

// Helpers shared with the training step.

// Per-sequence sum over rows: out[i] = sum of per_row over ranges[i].
// per_row has shape [R]; result has shape [ranges.size()].
Var range_sums(Graph& graph, Var per_row, std::span<const std::pair<std::size_t, std::size_t>> ranges);

// Domain loss from already computed states of a packed batch.
Var domain_from_states(Graph& graph, Var states, const model::PackedBatch& packed,
                       std::span<const LabeledSequence> batch, const DiscVars& disc, DomainScope scope,
                       int segment_length, bool through_grl, double grl_lambda);

// Retain KL from policy logits of a packed batch against constant reference logits.
Var retain_from_logits(Graph& graph, Var policy_logits, const Tensor& reference_logits,
                       const model::PackedBatch& packed, KlDirection direction);

// The two labeled sequences (s_r with d = 0, s_f with d = 1) of each triple,
// retain sequences first.
std::vector<LabeledSequence> domain_batch(std::span<const corpus::PairedTriple> batch);

}  // namespace repolab::objectives
