#pragma once

#include <span>
#include <vector>

#include "repolab/corpus/synth.hpp"
#include "repolab/model/transformer.hpp"

namespace repolab::analysis {

using Matrix = std::vector<std::vector<double>>;

struct LogisticFit {
  std::vector<double> w;
  double bias = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct ProbeOptions {
  // Penalty (ridge / 2) * |w|^2 added to the mean log-loss; keeps the
  // optimum finite on separable data.
  double ridge = 1e-3;
  double tolerance = 1e-8;
  int max_iterations = 100;
};

// Newton iterations on the penalised mean log-loss, stopping when the
// gradient norm falls below tolerance. Throws DegenerateClasses unless both
// labels occur.
LogisticFit fit_logistic(const Matrix& x, std::span<const int> y, const ProbeOptions& options = {});

double logistic_accuracy(const LogisticFit& fit, const Matrix& x, std::span<const int> y);

struct ToxicDirection {
  std::vector<double> w;  // unit norm
  double bias = 0.0;      // bias of the unnormalised probe
  double train_accuracy = 0.0;
  double held_out_accuracy = 0.0;
  int layer = 0;
};

// Probe on reference states at `layer`, labels = token class (toxic 1,
// benign 0, specials skipped), fit on the train split and scored on the
// held-out split. Throws DegenerateClasses, InvalidLayer.
ToxicDirection fit_toxic_direction(const model::TransformerParams& reference, const corpus::Dataset& dataset,
                                   const corpus::Vocabulary& vocab, int layer, const ProbeOptions& options = {});

struct DomainProbeResult {
  double train_accuracy = 0.0;
  double held_out_accuracy = 0.0;
  std::size_t n_train = 0;
  std::size_t n_held_out = 0;
};

// Separates continuation-token states of s_f (label 1) from those of s_r
// (label 0) at `layer`; fit on train triples, scored on held-out triples.
DomainProbeResult domain_probe(const model::ModelView& model, const corpus::Dataset& dataset, int layer,
                               const ProbeOptions& options = {});

// Residual states at `layer` for every token of every sequence, in order.
std::vector<Matrix> layer_states(const model::ModelView& model, const std::vector<std::vector<int>>& sequences,
                                 int layer);

}  // namespace repolab::analysis
