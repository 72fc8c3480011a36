#include "repolab/analysis/neurons.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "repolab/util/error.hpp"
#include "repolab/util/rng.hpp"

namespace repolab::analysis {

namespace {

void require_same_config(const model::TransformerParams& a, const model::TransformerParams& b) {
  if (!(a.config == b.config)) throw Error(ErrorKind::ConfigMismatch, "models do not share one configuration");
}

double cosine(const double* a, const double* b, std::size_t d) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    ab += a[j] * b[j];
    aa += a[j] * a[j];
    bb += b[j] * b[j];
  }
  const double n = std::sqrt(aa * bb);
  return n > 0.0 ? ab / n : 0.0;
}

const double* row_of(const diff::Tensor& t, std::size_t r) { return t.data().data() + r * t.cols(); }

// Neuron ids ordered by descending value, ties to the lower id.
std::vector<int> order_desc(const std::vector<double>& v) {
  std::vector<int> ids(v.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::stable_sort(ids.begin(), ids.end(), [&v](int a, int b) { return v[a] > v[b]; });
  return ids;
}

AlignmentCurve make_curve(AlignmentGroup g, std::vector<int> ids, const std::vector<double>& cos,
                          const std::vector<double>& change, int window) {
  std::stable_sort(ids.begin(), ids.end(), [&cos](int a, int b) { return cos[a] < cos[b]; });
  AlignmentCurve c;
  c.group = g;
  c.window = window;
  c.neurons = ids;
  for (int id : ids) {
    c.x.push_back(cos[static_cast<std::size_t>(id)]);
    c.y_raw.push_back(change[static_cast<std::size_t>(id)]);
  }
  c.y = smooth(c.y_raw, window);
  return c;
}

}  // namespace

NeuronRef neuron_ref(const model::ModelConfig& config, int id) { return {id / config.d_mlp, id % config.d_mlp}; }

std::vector<double> value_alignment(const model::TransformerParams& params, std::span<const double> direction) {
  const auto d = static_cast<std::size_t>(params.config.d_model);
  if (direction.size() != d) throw Error(ErrorKind::ConfigMismatch, "direction width differs from d_model");
  std::vector<double> out;
  for (int l = 0; l < params.config.n_layers; ++l) {
    const diff::Tensor& w_out = params[params.block(l).w_out];
    for (std::size_t j = 0; j < w_out.rows(); ++j) out.push_back(cosine(row_of(w_out, j), direction.data(), d));
  }
  return out;
}

std::vector<double> mean_activation_change(const model::TransformerParams& reference,
                                           const model::TransformerParams& edited,
                                           const std::vector<std::vector<int>>& sequences) {
  require_same_config(reference, edited);
  if (sequences.empty()) throw Error(ErrorKind::EmptyBatch, "no sequences for activation change");
  const auto m = static_cast<std::size_t>(reference.config.d_mlp);
  const auto n_layers = static_cast<std::size_t>(reference.config.n_layers);
  std::vector<double> sum(n_layers * m, 0.0);
  std::size_t count = 0;
  model::TraceSpec spec;
  spec.mlp_keys = true;
  constexpr std::size_t kChunk = 64;
  for (std::size_t c0 = 0; c0 < sequences.size(); c0 += kChunk) {
    const std::vector<std::vector<int>> chunk(
        sequences.begin() + static_cast<std::ptrdiff_t>(c0),
        sequences.begin() + static_cast<std::ptrdiff_t>(std::min(sequences.size(), c0 + kChunk)));
    const model::PackedBatch packed = model::PackedBatch::from(chunk);
    const auto a = model::forward_batch(model::ModelView(reference), packed, spec).trace.mlp_keys;
    const auto b = model::forward_batch(model::ModelView(edited), packed, spec).trace.mlp_keys;
    for (std::size_t l = 0; l < n_layers; ++l) {
      const auto& ka = (*a)[l].data();
      const auto& kb = (*b)[l].data();
      for (std::size_t i = 0; i < ka.size(); ++i) sum[l * m + i % m] += std::abs(kb[i] - ka[i]);
    }
    count += packed.total_tokens();
  }
  for (double& v : sum) v /= static_cast<double>(count);
  return sum;
}

std::vector<double> smooth(std::span<const double> y, int window) {
  if (window < 1) throw Error(ErrorKind::InvalidConfig, "smoothing window must be positive");
  const auto n = static_cast<std::ptrdiff_t>(y.size());
  const std::ptrdiff_t half = window / 2;
  std::vector<double> out(y.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const std::ptrdiff_t r = std::min({half, i, n - 1 - i});
    double s = 0.0;
    for (std::ptrdiff_t j = i - r; j <= i + r; ++j) s += y[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = s / static_cast<double>(2 * r + 1);
  }
  return out;
}

const char* to_string(AlignmentGroup group) {
  switch (group) {
    case AlignmentGroup::Top: return "top-aligned";
    case AlignmentGroup::Bottom: return "bottom-aligned";
    default: return "random";
  }
}

std::vector<AlignmentCurve> neuron_alignment_curve(const model::TransformerParams& reference,
                                                   const model::TransformerParams& edited,
                                                   const ToxicDirection& direction,
                                                   const std::vector<std::vector<int>>& sequences, int k, int window,
                                                   std::uint64_t seed) {
  require_same_config(reference, edited);
  const int total = reference.config.n_layers * reference.config.d_mlp;
  if (k < 1 || 3 * k > total) {
    throw Error(ErrorKind::KTooLarge, "K=" + std::to_string(k) + " needs 3K <= " + std::to_string(total) + " neurons");
  }
  const std::vector<double> cos = value_alignment(reference, direction.w);
  const std::vector<double> change = mean_activation_change(reference, edited, sequences);
  const std::vector<int> desc = order_desc(cos);
  std::vector<int> top(desc.begin(), desc.begin() + k);
  // Bottom: ascending cosine, ties to the lower id.
  std::vector<int> asc(cos.size());
  std::iota(asc.begin(), asc.end(), 0);
  std::stable_sort(asc.begin(), asc.end(), [&cos](int a, int b) { return cos[a] < cos[b]; });
  std::vector<int> bottom(asc.begin(), asc.begin() + k);
  std::vector<bool> used(cos.size(), false);
  for (int id : top) used[static_cast<std::size_t>(id)] = true;
  for (int id : bottom) used[static_cast<std::size_t>(id)] = true;
  std::vector<int> rest;
  for (int id = 0; id < total; ++id) {
    if (!used[static_cast<std::size_t>(id)]) rest.push_back(id);
  }
  Rng rng(seed);
  rng.shuffle(rest);
  rest.resize(static_cast<std::size_t>(k));
  return {make_curve(AlignmentGroup::Top, top, cos, change, window),
          make_curve(AlignmentGroup::Bottom, bottom, cos, change, window),
          make_curve(AlignmentGroup::Random, rest, cos, change, window)};
}

DimensionDrift dimension_drift_heatmap(const model::TransformerParams& reference,
                                       const model::TransformerParams& edited, std::span<const int> sequence,
                                       const ToxicDirection& direction, DimensionChannel channel, int n_toxic,
                                       int n_nontoxic) {
  require_same_config(reference, edited);
  const auto& cfg = reference.config;
  if (n_toxic < 1 || n_nontoxic < 1 || n_toxic + n_nontoxic > cfg.d_mlp) {
    throw Error(ErrorKind::KTooLarge, "dimension subsets exceed d_mlp");
  }
  const std::vector<double> cos = value_alignment(reference, direction.w);
  const auto m = static_cast<std::size_t>(cfg.d_mlp);
  const auto d = static_cast<std::size_t>(cfg.d_model);
  DimensionDrift out;
  out.channel = channel;
  for (int l = 0; l < cfg.n_layers; ++l) {
    std::vector<double> layer_cos(cos.begin() + static_cast<std::ptrdiff_t>(l * m),
                                  cos.begin() + static_cast<std::ptrdiff_t>((l + 1) * m));
    const std::vector<int> desc = order_desc(layer_cos);
    std::vector<int> tox(desc.begin(), desc.begin() + n_toxic);
    std::vector<int> rest(desc.begin() + n_toxic, desc.end());
    std::stable_sort(rest.begin(), rest.end(), [&layer_cos](int a, int b) {
      return std::abs(layer_cos[a]) < std::abs(layer_cos[b]);
    });
    rest.resize(static_cast<std::size_t>(n_nontoxic));
    std::sort(tox.begin(), tox.end());
    std::sort(rest.begin(), rest.end());
    out.toxic_dims.push_back(tox);
    out.nontoxic_dims.push_back(rest);
  }

  model::TraceSpec spec;
  spec.mlp_keys = true;
  const auto ka = *model::forward(model::ModelView(reference), sequence, spec).trace.mlp_keys;
  const auto kb = *model::forward(model::ModelView(edited), sequence, spec).trace.mlp_keys;
  auto state = [&](const model::TransformerParams& p, const diff::Tensor& keys, int l, std::size_t t,
                   const std::vector<int>& dims) {
    std::vector<double> v;
    if (channel == DimensionChannel::KeyActivation) {
      for (int j : dims) v.push_back(keys[t * m + static_cast<std::size_t>(j)]);
    } else {
      const diff::Tensor& w_out = p[p.block(l).w_out];
      v.assign(d, 0.0);
      for (int j : dims) {
        const double k = keys[t * m + static_cast<std::size_t>(j)];
        const double* row = row_of(w_out, static_cast<std::size_t>(j));
        for (std::size_t c = 0; c < d; ++c) v[c] += k * row[c];
      }
    }
    return v;
  };
  auto build = [&](const std::vector<std::vector<int>>& dims) {
    DriftMap map;
    map.kind = channel == DimensionChannel::KeyActivation ? DriftKind::KeyActivation : DriftKind::MlpContribution;
    for (int l = 0; l < cfg.n_layers; ++l) {
      std::vector<double> row(sequence.size());
      std::vector<bool> flags(sequence.size());
      for (std::size_t t = 0; t < sequence.size(); ++t) {
        const auto a = state(reference, ka[static_cast<std::size_t>(l)], l, t, dims[static_cast<std::size_t>(l)]);
        const auto b = state(edited, kb[static_cast<std::size_t>(l)], l, t, dims[static_cast<std::size_t>(l)]);
        bool f = false;
        row[t] = one_minus_cosine(b, a, f);
        flags[t] = f;
      }
      map.values.push_back(std::move(row));
      map.flagged.push_back(std::move(flags));
    }
    for (int tok : sequence) map.tokens.push_back(std::to_string(tok));
    return map;
  };
  out.toxic = build(out.toxic_dims);
  out.nontoxic = build(out.nontoxic_dims);
  return out;
}

KeyValueReport keyvalue_cosine_report(const model::TransformerParams& reference,
                                      const model::TransformerParams& edited, const ToxicDirection& direction, int k,
                                      const std::vector<std::vector<int>>& sequences) {
  require_same_config(reference, edited);
  const auto& cfg = reference.config;
  const int total = cfg.n_layers * cfg.d_mlp;
  if (k < 1 || k > total) throw Error(ErrorKind::KTooLarge, "K=" + std::to_string(k) + " exceeds the neuron count");
  const std::vector<double> cos = value_alignment(reference, direction.w);
  const std::vector<double> change = mean_activation_change(reference, edited, sequences);
  const std::vector<int> desc = order_desc(cos);
  const auto d = static_cast<std::size_t>(cfg.d_model);
  KeyValueReport r;
  for (int i = 0; i < k; ++i) {
    const int id = desc[static_cast<std::size_t>(i)];
    const NeuronRef n = neuron_ref(cfg, id);
    const auto slots = reference.block(n.layer);
    const auto j = static_cast<std::size_t>(n.index);
    r.neurons.push_back(id);
    r.alignment.push_back(cos[static_cast<std::size_t>(id)]);
    r.value_cosine.push_back(cosine(row_of(reference[slots.w_out], j), row_of(edited[slots.w_out], j), d));
    r.key_cosine.push_back(cosine(row_of(reference[slots.w_in], j), row_of(edited[slots.w_in], j), d));
    r.activation_change.push_back(change[static_cast<std::size_t>(id)]);
  }
  return r;
}

}  // namespace repolab::analysis
