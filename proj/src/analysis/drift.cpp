#include "repolab/analysis/drift.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "repolab/diff/tensor.hpp"
#include "repolab/util/error.hpp"

namespace repolab::analysis {

namespace {
constexpr std::pair<DriftKind, const char*> kKindNames[] = {
    {DriftKind::Residual, "residual"},
    {DriftKind::AttentionOut, "attention-out"},
    {DriftKind::MlpContribution, "mlp-contribution"},
    {DriftKind::KeyActivation, "key-activation"},
};

void require_same_config(const model::TransformerParams& a, const model::TransformerParams& b) {
  if (!(a.config == b.config) || a.tensors.size() != b.tensors.size()) {
    throw Error(ErrorKind::ConfigMismatch, "models do not share one configuration");
  }
}

const std::vector<diff::Tensor>& channel(const model::HiddenTrace& trace, DriftKind kind) {
  switch (kind) {
    case DriftKind::AttentionOut: return *trace.attention_out;
    case DriftKind::MlpContribution: return *trace.mlp_contrib;
    case DriftKind::KeyActivation: return *trace.mlp_keys;
    default: return *trace.residual;
  }
}

double frobenius(const diff::Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

struct Sums {
  double toxic = 0.0, other = 0.0;
  std::size_t n_toxic = 0, n_other = 0;
};

void accumulate(const DriftMap& drift, std::span<const std::size_t> positions, Sums& s) {
  if (positions.empty()) throw Error(ErrorKind::EmptyPositions, "no toxic positions given");
  const std::size_t n_tok = drift.n_tokens();
  std::vector<bool> toxic(n_tok, false);
  for (std::size_t p : positions) {
    if (p >= n_tok) throw Error(ErrorKind::InvalidConfig, "position " + std::to_string(p) + " is off the token axis");
    toxic[p] = true;
  }
  const std::size_t rows = drift.n_layers();
  const std::size_t deep = std::max<std::size_t>(1, rows / 4);
  for (std::size_t l = rows - deep; l < rows; ++l) {
    for (std::size_t t = 0; t < n_tok; ++t) {
      if (drift.flagged[l][t]) continue;
      if (toxic[t]) {
        s.toxic += drift.values[l][t];
        ++s.n_toxic;
      } else {
        s.other += drift.values[l][t];
        ++s.n_other;
      }
    }
  }
}

LocalizationScore finish(const Sums& s) {
  LocalizationScore r;
  r.numerator = s.n_toxic ? s.toxic / static_cast<double>(s.n_toxic) : 0.0;
  r.denominator = s.n_other ? s.other / static_cast<double>(s.n_other) : 0.0;
  if (r.denominator < 1e-12) {
    r.infinite = true;
    r.ratio = std::numeric_limits<double>::infinity();
  } else {
    r.ratio = r.numerator / r.denominator;
  }
  return r;
}

}  // namespace

const char* to_string(DriftKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "?";
}

DriftKind parse_drift_kind(const std::string& name) {
  for (const auto& [k, text] : kKindNames) {
    if (name == text) return k;
  }
  throw Error(ErrorKind::ConfigError, "unknown drift kind '" + name + "'");
}

double one_minus_cosine(std::span<const double> a, std::span<const double> b, bool& flagged) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    ab += a[j] * b[j];
    aa += a[j] * a[j];
    bb += b[j] * b[j];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  flagged = na < 1e-12 || nb < 1e-12;
  if (flagged) return 0.0;
  const double c = std::clamp(ab / (na * nb), -1.0, 1.0);
  return 1.0 - c;
}

DriftMap drift_heatmap(const model::TransformerParams& reference, const model::TransformerParams& edited,
                       std::span<const int> sequence, DriftKind kind, const corpus::Vocabulary* vocab) {
  require_same_config(reference, edited);
  const model::TraceSpec spec = model::TraceSpec::all();
  const auto ref = model::forward(model::ModelView(reference), sequence, spec).trace;
  const auto edt = model::forward(model::ModelView(edited), sequence, spec).trace;
  const auto& a = channel(ref, kind);
  const auto& b = channel(edt, kind);
  const std::size_t first = kind == DriftKind::Residual ? 1 : 0;
  DriftMap m;
  m.kind = kind;
  for (std::size_t l = first; l < a.size(); ++l) {
    const std::size_t w = a[l].cols();
    std::vector<double> row(sequence.size());
    std::vector<bool> flags(sequence.size());
    for (std::size_t t = 0; t < sequence.size(); ++t) {
      bool f = false;
      row[t] = one_minus_cosine(std::span<const double>(a[l].data()).subspan(t * w, w),
                                std::span<const double>(b[l].data()).subspan(t * w, w), f);
      flags[t] = f;
    }
    m.values.push_back(std::move(row));
    m.flagged.push_back(std::move(flags));
  }
  for (int t : sequence) m.tokens.push_back(vocab ? vocab->tokens.at(static_cast<std::size_t>(t)) : std::to_string(t));
  return m;
}

std::vector<double> weight_block_distance(const model::TransformerParams& reference,
                                          const model::TransformerParams& edited) {
  require_same_config(reference, edited);
  const int n = reference.config.n_layers;
  std::vector<double> sum(static_cast<std::size_t>(n), 0.0);
  std::vector<int> count(static_cast<std::size_t>(n), 0);
  for (std::size_t i = 0; i < reference.tensors.size(); ++i) {
    const auto& r = reference.tensors[i];
    if (r.block < 0 || r.block >= n) continue;
    if (r.value.shape() != edited.tensors[i].value.shape()) {
      throw Error(ErrorKind::ConfigMismatch, "tensor " + r.name + " differs in shape");
    }
    const double base = frobenius(r.value);
    if (base == 0.0) continue;
    diff::Tensor delta = edited.tensors[i].value;
    for (std::size_t k = 0; k < delta.numel(); ++k) delta[k] -= r.value[k];
    sum[static_cast<std::size_t>(r.block)] += frobenius(delta) / base;
    ++count[static_cast<std::size_t>(r.block)];
  }
  for (std::size_t b = 0; b < sum.size(); ++b) {
    if (count[b]) sum[b] /= count[b];
  }
  return sum;
}

LocalizationScore localization_score(const DriftMap& drift, std::span<const std::size_t> toxic_positions) {
  Sums s;
  accumulate(drift, toxic_positions, s);
  return finish(s);
}

LocalizationScore localization_score(std::span<const DriftMap> drifts,
                                     std::span<const std::vector<std::size_t>> toxic_positions) {
  if (drifts.size() != toxic_positions.size()) throw Error(ErrorKind::InvalidConfig, "one position list per map");
  if (drifts.empty()) throw Error(ErrorKind::EmptyPositions, "no drift maps given");
  Sums s;
  for (std::size_t i = 0; i < drifts.size(); ++i) accumulate(drifts[i], toxic_positions[i], s);
  return finish(s);
}

}  // namespace repolab::analysis
