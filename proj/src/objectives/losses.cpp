#include "repolab/objectives/losses.hpp"

#include <cmath>

#include "repolab/util/error.hpp"
#include "repolab/util/rng.hpp"

namespace repolab::objectives {

using model::PackedBatch;
using model::Segment;

Var LossTerms::part(const std::string& name) const {
  for (const auto& [key, value] : parts) {
    if (key == name) return value;
  }
  throw Error(ErrorKind::InvalidConfig, "loss has no component '" + name + "'");
}

namespace {

void require_nonempty(std::size_t n, const char* what) {
  if (n == 0) throw Error(ErrorKind::EmptyBatch, std::string(what) + " received an empty batch");
}

Var weighted_sum(Graph& graph, Var per_row, std::vector<double> weights) {
  const std::size_t n = weights.size();
  return diff::sum(diff::mul(per_row, graph.constant(Tensor({n}, std::move(weights)))));
}

Var probe_states(const model::GraphForward& fwd, const ModelConfig& config) {
  return fwd.residual[static_cast<std::size_t>(config.probe_layer)];
}

PackedBatch pack(std::span<const std::vector<int>> sequences) { return PackedBatch::from(sequences); }

std::vector<std::vector<int>> tokens_of(std::span<const LabeledSequence> batch) {
  std::vector<std::vector<int>> out;
  out.reserve(batch.size());
  for (const auto& s : batch) out.push_back(s.tokens);
  return out;
}

// Continuation log-likelihood rows: for a segment of a sequence whose prompt
// has prompt_len tokens, rows prompt_len-1 .. len-2 predict the continuation.
struct ContinuationRows {
  std::vector<int> rows;
  std::vector<int> targets;
  std::vector<std::pair<std::size_t, std::size_t>> ranges;  // per sequence, into rows
};

ContinuationRows continuation_rows(const PackedBatch& packed, std::span<const std::size_t> prompt_lens) {
  ContinuationRows out;
  for (std::size_t i = 0; i < packed.segments.size(); ++i) {
    const Segment& seg = packed.segments[i];
    const std::size_t start = out.rows.size();
    for (std::size_t p = prompt_lens[i]; p < seg.length; ++p) {
      out.rows.push_back(static_cast<int>(seg.start + p - 1));
      out.targets.push_back(packed.tokens[seg.start + p]);
    }
    out.ranges.emplace_back(start, out.rows.size() - start);
  }
  return out;
}

// log sigmoid(z) for z of shape [n, 1], via a two-way log-softmax against zero.
Var log_sigmoid(Graph& graph, Var z) {
  const std::size_t n = z.value().rows();
  Var zeros = graph.constant(Tensor({n, 1}));
  const Var cols[] = {zeros, z};
  std::vector<int> one(n, 1);
  return diff::pick(diff::log_softmax(diff::concat_cols(cols)), one);
}

std::vector<double> reference_sequence_logprobs(const TransformerParams& reference, const PackedBatch& packed,
                                                const ContinuationRows& cr, LogitClamp clamp) {
  const Tensor logits = model::forward_batch(model::ModelView(reference), packed).logits;
  const std::size_t vocab = logits.cols();
  std::vector<double> out;
  std::vector<double> row(vocab);
  for (const auto& [start, count] : cr.ranges) {
    double total = 0.0;
    for (std::size_t k = start; k < start + count; ++k) {
      const auto r = logits.row(static_cast<std::size_t>(cr.rows[k]));
      double mx = -INFINITY;
      for (std::size_t c = 0; c < vocab; ++c) {
        row[c] = std::min(std::max(r[c], clamp.lo), clamp.hi);
        mx = std::max(mx, row[c]);
      }
      double z = 0.0;
      for (std::size_t c = 0; c < vocab; ++c) z += std::exp(row[c] - mx);
      total += row[static_cast<std::size_t>(cr.targets[k])] - mx - std::log(z);
    }
    out.push_back(total);
  }
  return out;
}

// Summed clamped continuation log-probabilities per sequence, shape [n].
Var policy_sequence_logprobs(Graph& graph, Var logits, const ContinuationRows& cr, LogitClamp clamp) {
  Var rows = diff::gather_rows(logits, cr.rows);
  Var lp = diff::pick(diff::log_softmax(diff::clamp(rows, clamp.lo, clamp.hi)), cr.targets);
  return range_sums(graph, lp, cr.ranges);
}

Var column(Var v) { return diff::reshape(v, {v.value().numel(), 1}); }

std::vector<std::vector<int>> pair_sequences(std::span<const corpus::PairedTriple> batch) {
  std::vector<std::vector<int>> seqs;
  seqs.reserve(2 * batch.size());
  for (const auto& t : batch) seqs.push_back(t.retain_sequence());
  for (const auto& t : batch) seqs.push_back(t.forget_sequence());
  return seqs;
}

std::vector<std::size_t> pair_prompt_lens(std::span<const corpus::PairedTriple> batch) {
  std::vector<std::size_t> lens;
  for (int rep = 0; rep < 2; ++rep) {
    for (const auto& t : batch) lens.push_back(t.prompt.size());
  }
  return lens;
}

// Mean squared elementwise difference per row, shape [rows].
Var row_mse(Var a, Var b) {
  const double d = static_cast<double>(a.value().cols());
  return diff::scale(diff::row_sum(diff::square(diff::sub(a, b))), 1.0 / d);
}

}  // namespace

Var range_sums(Graph& graph, Var per_row, std::span<const std::pair<std::size_t, std::size_t>> ranges) {
  const std::size_t n = per_row.value().numel();
  Tensor m({ranges.size(), n});
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    for (std::size_t k = ranges[i].first; k < ranges[i].first + ranges[i].second; ++k) m.at(i, k) = 1.0;
  }
  Var out = diff::matmul(graph.constant(std::move(m)), column(per_row));
  return diff::reshape(out, {ranges.size()});
}

std::vector<LabeledSequence> domain_batch(std::span<const corpus::PairedTriple> batch) {
  std::vector<LabeledSequence> out;
  out.reserve(2 * batch.size());
  for (const auto& t : batch) out.push_back(LabeledSequence{t.retain_sequence(), t.prompt.size(), 0.0});
  for (const auto& t : batch) out.push_back(LabeledSequence{t.forget_sequence(), t.prompt.size(), 1.0});
  return out;
}

Var retain_from_logits(Graph& graph, Var policy_logits, const Tensor& reference_logits, const PackedBatch& packed,
                       KlDirection direction) {
  Var ref = graph.constant(reference_logits);
  Var kl = direction == KlDirection::RefToPolicy ? diff::kl_from_logits(ref, policy_logits)
                                                 : diff::kl_from_logits(policy_logits, ref);
  std::vector<double> w;
  w.reserve(packed.tokens.size());
  const double n_seq = static_cast<double>(packed.segments.size());
  for (const Segment& seg : packed.segments) {
    for (std::size_t t = 0; t < seg.length; ++t) w.push_back(1.0 / (n_seq * static_cast<double>(seg.length)));
  }
  return weighted_sum(graph, kl, std::move(w));
}

Var retain_loss(Graph& graph, const PolicyRef& policy, const TransformerParams& reference,
                std::span<const std::vector<int>> sequences, KlDirection direction) {
  require_nonempty(sequences.size(), "retain_loss");
  const PackedBatch packed = pack(sequences);
  const model::GraphForward fwd = model::build_forward(graph, policy.config, policy.params, packed);
  const Tensor ref_logits = model::forward_batch(model::ModelView(reference), packed).logits;
  return retain_from_logits(graph, fwd.logits, ref_logits, packed, direction);
}

Var domain_from_states(Graph& graph, Var states, const PackedBatch& packed, std::span<const LabeledSequence> batch,
                       const DiscVars& disc, DomainScope scope, int segment_length, bool through_grl,
                       double grl_lambda) {
  if (segment_length < 1) throw Error(ErrorKind::InvalidConfig, "segment length must be at least 1");
  const double n_seq = static_cast<double>(batch.size());
  const auto len = static_cast<std::size_t>(segment_length);
  std::vector<std::vector<std::size_t>> windows;  // packed rows per pooled unit
  std::vector<double> labels;
  std::vector<double> weights;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Segment& seg = packed.segments[i];
    const std::size_t from = scope == DomainScope::FullSequence ? 0 : batch[i].prompt_len;
    if (from >= seg.length) throw Error(ErrorKind::EmptyBatch, "sequence has no tokens in the domain scope");
    const std::size_t n_units = (seg.length - from + len - 1) / len;
    for (std::size_t u = 0; u < n_units; ++u) {
      std::vector<std::size_t> rows;
      for (std::size_t p = from + u * len; p < std::min(seg.length, from + (u + 1) * len); ++p) {
        rows.push_back(seg.start + p);
      }
      windows.push_back(std::move(rows));
      labels.push_back(batch[i].label);
      weights.push_back(1.0 / (n_seq * static_cast<double>(n_units)));
    }
  }
  Var pooled;
  if (len == 1) {
    std::vector<int> rows;
    rows.reserve(windows.size());
    for (const auto& w : windows) rows.push_back(static_cast<int>(w.front()));
    pooled = diff::gather_rows(states, rows);
  } else {
    Tensor pool({windows.size(), states.value().rows()});
    for (std::size_t u = 0; u < windows.size(); ++u) {
      for (std::size_t r : windows[u]) pool.at(u, r) = 1.0 / static_cast<double>(windows[u].size());
    }
    pooled = diff::matmul(graph.constant(std::move(pool)), states);
  }
  Var q = discriminator_forward(disc, pooled, through_grl, grl_lambda);
  return weighted_sum(graph, diff::reshape(diff::bce(q, labels), {labels.size()}), std::move(weights));
}

Var domain_loss(Graph& graph, const PolicyRef& policy, const DiscVars& disc, std::span<const LabeledSequence> batch,
                DomainScope scope, bool through_grl, double grl_lambda) {
  return sure_segment_domain_loss(graph, policy, disc, batch, 1, scope, through_grl, grl_lambda);
}

Var sure_segment_domain_loss(Graph& graph, const PolicyRef& policy, const DiscVars& disc,
                             std::span<const LabeledSequence> batch, int segment_length, DomainScope scope,
                             bool through_grl, double grl_lambda) {
  require_nonempty(batch.size(), "domain_loss");
  const auto seqs = tokens_of(batch);
  const PackedBatch packed = pack(seqs);
  const model::GraphForward fwd = model::build_forward(graph, policy.config, policy.params, packed);
  return domain_from_states(graph, probe_states(fwd, policy.config), packed, batch, disc, scope, segment_length,
                            through_grl, grl_lambda);
}

namespace {
Var ce_from_logits(Var logits, const PackedBatch& packed, std::span<const ScoredSequence> batch,
                   const LogitClamp* clamp) {
  std::vector<int> rows;
  std::vector<int> targets;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Segment& seg = packed.segments[i];
    for (std::size_t p = std::max<std::size_t>(batch[i].score_from, 1); p < seg.length; ++p) {
      rows.push_back(static_cast<int>(seg.start + p - 1));
      targets.push_back(packed.tokens[seg.start + p]);
    }
  }
  if (rows.empty()) throw Error(ErrorKind::EmptyBatch, "no scored tokens in the batch");
  Var picked = diff::gather_rows(logits, rows);
  if (clamp) picked = diff::clamp(picked, clamp->lo, clamp->hi);
  return diff::mean(diff::cross_entropy_rows(picked, targets));
}
}  // namespace

Var ce_loss(Graph& graph, const PolicyRef& policy, std::span<const ScoredSequence> batch) {
  require_nonempty(batch.size(), "ce_loss");
  std::vector<std::vector<int>> seqs;
  for (const auto& s : batch) seqs.push_back(s.tokens);
  const PackedBatch packed = pack(seqs);
  const model::GraphForward fwd = model::build_forward(graph, policy.config, policy.params, packed);
  return ce_from_logits(fwd.logits, packed, batch, nullptr);
}

Var ce_retain_loss(Graph& graph, const PolicyRef& policy, std::span<const std::vector<int>> sequences) {
  std::vector<ScoredSequence> scored;
  for (const auto& s : sequences) scored.push_back(ScoredSequence{s, 1});
  return ce_loss(graph, policy, scored);
}

Var dpo_loss(Graph& graph, const PolicyRef& policy, const TransformerParams& reference,
             std::span<const corpus::PairedTriple> batch, double beta, LogitClamp clamp) {
  require_nonempty(batch.size(), "dpo_loss");
  if (!(beta > 0.0)) throw Error(ErrorKind::InvalidConfig, "dpo beta must be positive");
  const auto seqs = pair_sequences(batch);
  const PackedBatch packed = pack(seqs);
  const auto lens = pair_prompt_lens(batch);
  const ContinuationRows cr = continuation_rows(packed, lens);
  const model::GraphForward fwd = model::build_forward(graph, policy.config, policy.params, packed);
  Var lp = policy_sequence_logprobs(graph, fwd.logits, cr, clamp);
  const std::vector<double> ref = reference_sequence_logprobs(reference, packed, cr, clamp);
  const std::size_t b = batch.size();
  Var lr = diff::slice_rows(column(lp), 0, b);
  Var lf = diff::slice_rows(column(lp), b, b);
  Tensor ref_margin({b, 1});
  for (std::size_t i = 0; i < b; ++i) ref_margin[i] = ref[i] - ref[b + i];
  Var z = diff::scale(diff::sub(diff::sub(lr, lf), graph.constant(std::move(ref_margin))), beta);
  return diff::scale(diff::mean(log_sigmoid(graph, z)), -1.0);
}

LossTerms npo_loss(Graph& graph, const PolicyRef& policy, const TransformerParams& reference,
                   std::span<const corpus::PairedTriple> batch, double beta, double alpha, LogitClamp clamp) {
  require_nonempty(batch.size(), "npo_loss");
  if (!(beta > 0.0)) throw Error(ErrorKind::InvalidConfig, "npo beta must be positive");
  if (alpha < 0.0 || alpha > 1.0) throw Error(ErrorKind::InvalidConfig, "npo alpha must lie in [0, 1]");
  const auto seqs = pair_sequences(batch);
  const PackedBatch packed = pack(seqs);
  const auto lens = pair_prompt_lens(batch);
  const model::GraphForward fwd = model::build_forward(graph, policy.config, policy.params, packed);
  const std::size_t b = batch.size();

  // Forget term over the s_f half.
  std::vector<std::vector<int>> forget_seqs(seqs.begin() + static_cast<std::ptrdiff_t>(b), seqs.end());
  const PackedBatch forget_packed = pack(forget_seqs);
  const std::vector<std::size_t> forget_lens(lens.begin() + static_cast<std::ptrdiff_t>(b), lens.end());
  ContinuationRows cr = continuation_rows(forget_packed, forget_lens);
  const std::size_t offset = packed.segments[b].start;
  ContinuationRows shifted = cr;
  for (int& r : shifted.rows) r += static_cast<int>(offset);
  Var lf = column(policy_sequence_logprobs(graph, fwd.logits, shifted, clamp));
  const std::vector<double> ref = reference_sequence_logprobs(reference, forget_packed, cr, clamp);
  Var delta = diff::sub(lf, graph.constant(Tensor({b, 1}, ref)));
  Var forget = diff::scale(diff::mean(log_sigmoid(graph, diff::scale(delta, -beta))), -2.0 / beta);

  // Clamped CE over the s_r half.
  std::vector<ScoredSequence> scored;
  for (std::size_t i = 0; i < b; ++i) scored.push_back(ScoredSequence{seqs[i], 1});
  Var retain = ce_from_logits(fwd.logits, packed, scored, &clamp);

  LossTerms out;
  out.total = diff::add(diff::scale(forget, alpha), diff::scale(retain, 1.0 - alpha));
  out.parts = {{"forget", forget}, {"retain", retain}};
  return out;
}

std::vector<double> control_vector(int d_model, double c, std::uint64_t seed) {
  if (!(c > 0.0)) throw Error(ErrorKind::InvalidConfig, "control vector norm must be positive");
  Rng rng(seed);
  std::vector<double> u(static_cast<std::size_t>(d_model));
  double n = 0.0;
  while (n == 0.0) {
    for (double& v : u) v = rng.normal();
    n = diff::norm2(u);
  }
  for (double& v : u) v *= c / n;
  return u;
}

namespace {

struct StatePair {
  PackedBatch packed;
  std::vector<std::size_t> lens;
  Var states;     // policy probe states for every packed row
  Tensor ref;     // reference probe states, same rows
  std::size_t b;  // triples; rows of s_r come first
};

StatePair pair_states(Graph& graph, const PolicyRef& policy, const TransformerParams& reference,
                      std::span<const corpus::PairedTriple> batch) {
  StatePair sp;
  const auto seqs = pair_sequences(batch);
  sp.packed = pack(seqs);
  sp.lens = pair_prompt_lens(batch);
  sp.b = batch.size();
  const model::GraphForward fwd = model::build_forward(graph, policy.config, policy.params, sp.packed);
  sp.states = probe_states(fwd, policy.config);
  model::TraceSpec spec;
  spec.residual = true;
  const auto res = model::forward_batch(model::ModelView(reference), sp.packed, spec);
  sp.ref = (*res.trace.residual)[static_cast<std::size_t>(policy.config.probe_layer)];
  return sp;
}

std::vector<int> forget_continuation_rows(const StatePair& sp) {
  std::vector<int> rows;
  for (std::size_t i = sp.b; i < 2 * sp.b; ++i) {
    const Segment& seg = sp.packed.segments[i];
    for (std::size_t p = sp.lens[i]; p < seg.length; ++p) rows.push_back(static_cast<int>(seg.start + p));
  }
  return rows;
}

std::vector<int> retain_rows(const StatePair& sp) {
  std::vector<int> rows;
  const Segment& last = sp.packed.segments[sp.b - 1];
  for (std::size_t r = 0; r < last.start + last.length; ++r) rows.push_back(static_cast<int>(r));
  return rows;
}

Tensor take_rows(const Tensor& t, const std::vector<int>& rows) {
  const std::size_t m = t.cols();
  Tensor out({rows.size(), m});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = t.row(static_cast<std::size_t>(rows[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace

LossTerms rmu_loss(Graph& graph, const PolicyRef& policy, const TransformerParams& reference,
                   std::span<const corpus::PairedTriple> batch, std::span<const double> control, double alpha) {
  require_nonempty(batch.size(), "rmu_loss");
  if (control.size() != static_cast<std::size_t>(policy.config.d_model)) {
    throw Error(ErrorKind::ShapeMismatch, "control vector width differs from d-model");
  }
  const StatePair sp = pair_states(graph, policy, reference, batch);
  const auto frows = forget_continuation_rows(sp);
  const auto rrows = retain_rows(sp);
  Var hf = diff::gather_rows(sp.states, frows);
  Tensor target({frows.size(), control.size()});
  for (std::size_t i = 0; i < frows.size(); ++i) std::copy(control.begin(), control.end(), target.row(i).begin());
  Var forget = diff::mean(row_mse(hf, graph.constant(std::move(target))));
  Var hr = diff::gather_rows(sp.states, rrows);
  Var retain = diff::mean(row_mse(hr, graph.constant(take_rows(sp.ref, rrows))));
  LossTerms out;
  out.total = diff::add(forget, diff::scale(retain, alpha));
  out.parts = {{"forget", forget}, {"retain", retain}};
  return out;
}

LossTerms cb_loss(Graph& graph, const PolicyRef& policy, const TransformerParams& reference,
                  std::span<const corpus::PairedTriple> batch, double alpha) {
  require_nonempty(batch.size(), "cb_loss");
  if (!(alpha > 0.0)) throw Error(ErrorKind::InvalidConfig, "cb alpha must be positive");
  const StatePair sp = pair_states(graph, policy, reference, batch);
  const auto frows = forget_continuation_rows(sp);
  const auto rrows = retain_rows(sp);
  Var hf = diff::gather_rows(sp.states, frows);
  Var reroute = diff::mean(diff::relu(diff::row_cosine(hf, graph.constant(take_rows(sp.ref, frows)))));
  Var hr = diff::gather_rows(sp.states, rrows);
  Var retain = diff::mean(row_mse(hr, graph.constant(take_rows(sp.ref, rrows))));
  LossTerms out;
  out.total = diff::add(diff::scale(reroute, alpha), retain);
  out.parts = {{"reroute", reroute}, {"retain", retain}};
  return out;
}

}  // namespace repolab::objectives
