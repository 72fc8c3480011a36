#include "repolab/analysis/probe.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "repolab/util/error.hpp"

namespace repolab::analysis {

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void check_layer(const model::ModelConfig& config, int layer) {
  if (layer < 0 || layer > config.n_layers) {
    throw Error(ErrorKind::InvalidLayer, "layer " + std::to_string(layer) + " outside [0, " +
                                             std::to_string(config.n_layers) + "]");
  }
}

}  // namespace

LogisticFit fit_logistic(const Matrix& x, std::span<const int> y, const ProbeOptions& options) {
  if (x.size() != y.size()) throw Error(ErrorKind::ShapeMismatch, "probe: feature and label counts differ");
  std::size_t positives = 0;
  for (int v : y) positives += v == 1 ? 1 : 0;
  if (positives == 0 || positives == y.size()) {
    throw Error(ErrorKind::DegenerateClasses, "probe needs both classes, got " + std::to_string(positives) + " of " +
                                                  std::to_string(y.size()) + " positive");
  }
  const auto n = static_cast<Eigen::Index>(x.size());
  const auto d = static_cast<Eigen::Index>(x.front().size());
  // Column d carries the intercept, which is not penalised.
  Eigen::MatrixXd a(n, d + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) a(i, j) = x[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    a(i, d) = 1.0;
  }
  Eigen::VectorXd labels(n);
  for (Eigen::Index i = 0; i < n; ++i) labels(i) = y[static_cast<std::size_t>(i)];
  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(d + 1, options.ridge);
  penalty(d) = 0.0;

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(d + 1);
  LogisticFit fit;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (int it = 0; it < options.max_iterations; ++it) {
    Eigen::VectorXd z = a * theta;
    Eigen::VectorXd p(n), s(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p(i) = sigmoid(z(i));
      s(i) = p(i) * (1.0 - p(i));
    }
    Eigen::VectorXd grad = inv_n * (a.transpose() * (p - labels)) + penalty.cwiseProduct(theta);
    fit.iterations = it;
    if (grad.norm() < options.tolerance) {
      fit.converged = true;
      break;
    }
    Eigen::MatrixXd h = inv_n * (a.transpose() * s.asDiagonal() * a);
    h.diagonal() += penalty;
    h.diagonal().array() += 1e-12;
    theta -= h.ldlt().solve(grad);
  }
  fit.w.assign(theta.data(), theta.data() + d);
  fit.bias = theta(d);
  return fit;
}

double logistic_accuracy(const LogisticFit& fit, const Matrix& x, std::span<const int> y) {
  if (x.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double z = fit.bias;
    for (std::size_t j = 0; j < fit.w.size(); ++j) z += fit.w[j] * x[i][j];
    correct += ((z > 0.0 ? 1 : 0) == y[i]) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(x.size());
}

std::vector<Matrix> layer_states(const model::ModelView& model, const std::vector<std::vector<int>>& sequences,
                                 int layer) {
  check_layer(model.params->config, layer);
  std::vector<Matrix> out;
  out.reserve(sequences.size());
  model::TraceSpec spec;
  spec.residual = true;
  constexpr std::size_t kChunk = 64;
  for (std::size_t lo = 0; lo < sequences.size(); lo += kChunk) {
    const std::size_t hi = std::min(sequences.size(), lo + kChunk);
    const auto batch = model::PackedBatch::from(std::span(sequences).subspan(lo, hi - lo));
    const auto res = model::forward_batch(model, batch, spec);
    const diff::Tensor& h = (*res.trace.residual)[static_cast<std::size_t>(layer)];
    for (const auto& seg : batch.segments) {
      Matrix m;
      for (std::size_t t = 0; t < seg.length; ++t) {
        const auto r = h.row(seg.start + t);
        m.emplace_back(r.begin(), r.end());
      }
      out.push_back(std::move(m));
    }
  }
  return out;
}

namespace {

struct Samples {
  Matrix x;
  std::vector<int> y;
};

Samples token_class_samples(const model::ModelView& view, const std::vector<const corpus::PairedTriple*>& triples,
                            const corpus::Vocabulary& vocab, int layer) {
  std::vector<std::vector<int>> seqs;
  for (const auto* t : triples) {
    seqs.push_back(t->retain_sequence());
    seqs.push_back(t->forget_sequence());
  }
  const auto states = layer_states(view, seqs, layer);
  Samples s;
  for (std::size_t k = 0; k < seqs.size(); ++k) {
    // Prompt tokens appear in both sequences of a triple; keep one copy.
    const std::size_t from = (k % 2 == 1) ? triples[k / 2]->prompt.size() : 0;
    for (std::size_t p = from; p < seqs[k].size(); ++p) {
      const corpus::TokenClass c = vocab.class_of(seqs[k][p]);
      if (c == corpus::TokenClass::Special) continue;
      s.x.push_back(states[k][p]);
      s.y.push_back(c == corpus::TokenClass::Toxic ? 1 : 0);
    }
  }
  return s;
}

Samples domain_samples(const model::ModelView& view, const std::vector<const corpus::PairedTriple*>& triples,
                       int layer) {
  std::vector<std::vector<int>> seqs;
  for (const auto* t : triples) {
    seqs.push_back(t->retain_sequence());
    seqs.push_back(t->forget_sequence());
  }
  const auto states = layer_states(view, seqs, layer);
  Samples s;
  for (std::size_t k = 0; k < seqs.size(); ++k) {
    for (std::size_t p = triples[k / 2]->prompt.size(); p < seqs[k].size(); ++p) {
      s.x.push_back(states[k][p]);
      s.y.push_back(static_cast<int>(k % 2));
    }
  }
  return s;
}

}  // namespace

ToxicDirection fit_toxic_direction(const model::TransformerParams& reference, const corpus::Dataset& dataset,
                                   const corpus::Vocabulary& vocab, int layer, const ProbeOptions& options) {
  const model::ModelView view(reference);
  const Samples train = token_class_samples(view, dataset.view(corpus::Split::Train), vocab, layer);
  const Samples held = token_class_samples(view, dataset.view(corpus::Split::HeldOut), vocab, layer);
  if (train.x.empty()) throw Error(ErrorKind::DegenerateClasses, "no train tokens to probe");
  const LogisticFit fit = fit_logistic(train.x, train.y, options);
  ToxicDirection dir;
  dir.layer = layer;
  dir.bias = fit.bias;
  dir.train_accuracy = logistic_accuracy(fit, train.x, train.y);
  dir.held_out_accuracy = logistic_accuracy(fit, held.x, held.y);
  const double n = diff::norm2(fit.w);
  if (!(n > 0.0)) throw Error(ErrorKind::DegenerateClasses, "probe weight vector is zero");
  dir.w = fit.w;
  for (double& v : dir.w) v /= n;
  return dir;
}

DomainProbeResult domain_probe(const model::ModelView& model, const corpus::Dataset& dataset, int layer,
                               const ProbeOptions& options) {
  const Samples train = domain_samples(model, dataset.view(corpus::Split::Train), layer);
  const Samples held = domain_samples(model, dataset.view(corpus::Split::HeldOut), layer);
  if (train.x.empty()) throw Error(ErrorKind::DegenerateClasses, "no train tokens to probe");
  const LogisticFit fit = fit_logistic(train.x, train.y, options);
  DomainProbeResult r;
  r.train_accuracy = logistic_accuracy(fit, train.x, train.y);
  r.held_out_accuracy = logistic_accuracy(fit, held.x, held.y);
  r.n_train = train.x.size();
  r.n_held_out = held.x.size();
  return r;
}

}  // namespace repolab::analysis
