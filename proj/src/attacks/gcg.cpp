#include "repolab/attacks/gcg.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "repolab/model/transformer.hpp"
#include "repolab/util/error.hpp"
#include "repolab/util/rng.hpp"

namespace repolab::attacks {

using diff::Tensor;

std::vector<int> AdversarialSuffix::apply(std::span<const int> prompt) const {
  std::vector<int> out;
  out.reserve(prompt.size() + tokens.size());
  if (placement == Placement::Suffix) {
    out.assign(prompt.begin(), prompt.end());
    out.insert(out.end(), tokens.begin(), tokens.end());
  } else {
    if (!prompt.empty()) out.push_back(prompt.front());
    out.insert(out.end(), tokens.begin(), tokens.end());
    if (prompt.size() > 1) out.insert(out.end(), prompt.begin() + 1, prompt.end());
  }
  return out;
}

std::vector<std::size_t> AdversarialSuffix::positions(std::size_t prompt_len) const {
  const std::size_t first = placement == Placement::Suffix ? prompt_len : std::min<std::size_t>(1, prompt_len);
  std::vector<std::size_t> out(tokens.size());
  std::iota(out.begin(), out.end(), first);
  return out;
}

namespace {

// Loss over the target rows of a full sequence. `grad_loss` builds the same
// quantity on a graph whose token embeddings come from a one-hot leaf.
struct Objective {
  std::function<std::vector<double>(const std::vector<std::vector<int>>&)> batch_loss;
  std::function<Tensor(const std::vector<int>&)> one_hot_grad;
};

std::size_t target_start(const std::vector<int>& seq, std::size_t n_target) { return seq.size() - n_target; }

Tensor one_hot(const std::vector<int>& seq, std::size_t vocab) {
  Tensor t({seq.size(), vocab}, 0.0);
  for (std::size_t i = 0; i < seq.size(); ++i) t[i * vocab + static_cast<std::size_t>(seq[i])] = 1.0;
  return t;
}

double row_distance(const double* a, const double* b, std::size_t d, DistillDistance kind) {
  if (kind == DistillDistance::Mse) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return s / static_cast<double>(d);
  }
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    ab += a[j] * b[j];
    aa += a[j] * a[j];
    bb += b[j] * b[j];
  }
  return 1.0 - ab / std::sqrt(std::max(aa * bb, 1e-24));
}

Objective distill_objective(const model::TransformerParams& unlearned, const model::TransformerParams& reference,
                            const std::vector<int>& layers, std::size_t n_target, DistillDistance distance) {
  Objective obj;
  obj.batch_loss = [&unlearned, &reference, layers, n_target, distance](const std::vector<std::vector<int>>& seqs) {
    model::TraceSpec spec;
    spec.residual = true;
    const model::PackedBatch packed = model::PackedBatch::from(seqs);
    const auto hu = model::forward_batch(model::ModelView(unlearned), packed, spec).trace.residual;
    const auto hr = model::forward_batch(model::ModelView(reference), packed, spec).trace.residual;
    const auto d = static_cast<std::size_t>(unlearned.config.d_model);
    std::vector<double> out(seqs.size(), 0.0);
    for (std::size_t k = 0; k < seqs.size(); ++k) {
      const model::Segment& seg = packed.segments[k];
      const std::size_t t0 = seg.start + target_start(seqs[k], n_target);
      for (int l : layers) {
        const Tensor& a = (*hu)[static_cast<std::size_t>(l)];
        const Tensor& b = (*hr)[static_cast<std::size_t>(l)];
        double s = 0.0;
        for (std::size_t r = t0; r < t0 + n_target; ++r) s += row_distance(a.data().data() + r * d, b.data().data() + r * d, d, distance);
        out[k] += s / static_cast<double>(n_target);
      }
    }
    return out;
  };
  obj.one_hot_grad = [&unlearned, &reference, layers, n_target, distance](const std::vector<int>& seq) {
    diff::Graph g;
    diff::Var x = g.leaf(one_hot(seq, static_cast<std::size_t>(unlearned.config.vocab_size)));
    g.backward(distillation_loss(g, x, unlearned, reference, seq, layers, n_target, distance));
    return g.grad(x);
  };
  return obj;
}

Objective target_ce_objective(const model::TransformerParams& model, const std::vector<int>& target) {
  Objective obj;
  obj.batch_loss = [&model, target](const std::vector<std::vector<int>>& seqs) {
    const model::PackedBatch packed = model::PackedBatch::from(seqs);
    const Tensor logits = model::forward_batch(model::ModelView(model), packed).logits;
    const std::size_t v = logits.cols();
    const std::size_t n = target.size();
    std::vector<double> out(seqs.size(), 0.0);
    for (std::size_t k = 0; k < seqs.size(); ++k) {
      const std::size_t t0 = packed.segments[k].start + target_start(seqs[k], n);
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits.data().data() + (t0 + i - 1) * v;
        const double mx = *std::max_element(row, row + v);
        double z = 0.0;
        for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
        s += mx + std::log(z) - row[target[i]];
      }
      out[k] = s / static_cast<double>(n);
    }
    return out;
  };
  obj.one_hot_grad = [&model, target](const std::vector<int>& seq) {
    diff::Graph g;
    const std::size_t vocab = static_cast<std::size_t>(model.config.vocab_size);
    diff::Var x = g.leaf(one_hot(seq, vocab));
    const model::ParamVars pv = model::bind_params(g, model, false);
    model::ForwardOptions opts;
    opts.one_hot = x;
    const model::GraphForward gf = model::build_forward(g, model.config, pv, model::PackedBatch::single(seq), opts);
    const std::size_t t0 = target_start(seq, target.size());
    diff::Var rows = diff::slice_rows(gf.logits, t0 - 1, target.size());
    g.backward(diff::mean(diff::cross_entropy_rows(rows, target)));
    return g.grad(x);
  };
  return obj;
}

void check_target(const model::ModelConfig& config, std::span<const int> prompt, std::span<const int> target,
                  const GcgConfig& cfg) {
  if (cfg.suffix_len < 1) throw Error(ErrorKind::InvalidConfig, "adversarial length must be at least 1");
  if (cfg.iters < 0 || cfg.top_k < 1 || cfg.candidates < 1) throw Error(ErrorKind::InvalidConfig, "bad gcg budget");
  if (cfg.init_token < 0 || cfg.init_token >= config.vocab_size) {
    throw Error(ErrorKind::TokenOutOfRange, "gcg init token " + std::to_string(cfg.init_token));
  }
  if (prompt.empty()) throw Error(ErrorKind::InvalidConfig, "gcg needs a non-empty prompt");
  if (target.empty()) throw Error(ErrorKind::InvalidTarget, "target continuation is empty");
  for (int t : target) {
    if (t < 0 || t >= config.vocab_size) throw Error(ErrorKind::InvalidTarget, "target token " + std::to_string(t));
  }
}

AdversarialSuffix search(const model::ModelConfig& config, std::span<const int> prompt, std::span<const int> target,
                         const GcgConfig& cfg, const Objective& obj) {
  AdversarialSuffix adv;
  adv.placement = cfg.placement;
  adv.tokens.assign(static_cast<std::size_t>(cfg.suffix_len), cfg.init_token);
  const std::vector<std::size_t> slots = adv.positions(prompt.size());
  auto full = [&](const std::vector<int>& tokens) {
    AdversarialSuffix tmp;
    tmp.placement = cfg.placement;
    tmp.tokens = tokens;
    std::vector<int> seq = tmp.apply(prompt);
    seq.insert(seq.end(), target.begin(), target.end());
    return seq;
  };
  model::validate_tokens(config, full(adv.tokens));

  adv.loss = obj.batch_loss({full(adv.tokens)}).front();
  adv.trace.push_back(adv.loss);
  const auto vocab = static_cast<std::size_t>(config.vocab_size);
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(cfg.top_k), vocab);
  Rng rng(cfg.seed);

  for (int it = 0; it < cfg.iters && adv.loss > 0.0; ++it) {
    const Tensor grad = obj.one_hot_grad(full(adv.tokens));
    // Shortlist: the k most negative gradient entries per slot, lower id first on ties.
    std::vector<std::pair<std::size_t, int>> pairs;
    for (std::size_t s = 0; s < slots.size(); ++s) {
      const double* g = grad.data().data() + slots[s] * vocab;
      std::vector<int> ids(vocab);
      std::iota(ids.begin(), ids.end(), 0);
      std::stable_sort(ids.begin(), ids.end(), [g](int a, int b) { return g[a] < g[b]; });
      for (std::size_t j = 0; j < k; ++j) pairs.emplace_back(s, ids[j]);
    }
    if (static_cast<std::size_t>(cfg.candidates) < pairs.size()) {
      rng.shuffle(pairs);
      pairs.resize(static_cast<std::size_t>(cfg.candidates));
    }
    std::vector<std::vector<int>> seqs;
    seqs.reserve(pairs.size());
    for (const auto& [s, tok] : pairs) {
      std::vector<int> cand = adv.tokens;
      cand[s] = tok;
      seqs.push_back(full(cand));
    }
    const std::vector<double> losses = obj.batch_loss(seqs);
    std::size_t best = 0;
    for (std::size_t c = 1; c < pairs.size(); ++c) {
      const bool lower = losses[c] < losses[best];
      const bool tie = losses[c] == losses[best] &&
                       (pairs[c].second < pairs[best].second ||
                        (pairs[c].second == pairs[best].second && pairs[c].first < pairs[best].first));
      if (lower || tie) best = c;
    }
    if (losses[best] < adv.loss) {
      adv.tokens[pairs[best].first] = pairs[best].second;
      adv.loss = losses[best];
    }
    adv.trace.push_back(adv.loss);
  }
  return adv;
}

}  // namespace

diff::Var distillation_loss(diff::Graph& g, diff::Var one_hot_tokens, const model::TransformerParams& unlearned,
                            const model::TransformerParams& reference, std::span<const int> seq,
                            const std::vector<int>& layers, std::size_t n_target, DistillDistance distance) {
  model::TraceSpec spec;
  spec.residual = true;
  const auto teacher = model::forward(model::ModelView(reference), seq, spec).trace.residual;
  const model::ParamVars pv = model::bind_params(g, unlearned, false);
  model::ForwardOptions opts;
  opts.one_hot = one_hot_tokens;
  const model::GraphForward gf = model::build_forward(g, unlearned.config, pv, model::PackedBatch::single(seq), opts);
  const std::size_t t0 = seq.size() - n_target;
  std::vector<diff::Var> terms;
  for (int l : layers) {
    const Tensor& ref = (*teacher)[static_cast<std::size_t>(l)];
    const std::size_t d = ref.cols();
    std::vector<double> rows(ref.data().begin() + static_cast<std::ptrdiff_t>(t0 * d),
                             ref.data().begin() + static_cast<std::ptrdiff_t>((t0 + n_target) * d));
    diff::Var h = diff::slice_rows(gf.residual[static_cast<std::size_t>(l)], t0, n_target);
    diff::Var r = g.constant(Tensor({n_target, d}, std::move(rows)));
    if (distance == DistillDistance::Mse) {
      terms.push_back(diff::mean(diff::square(diff::sub(h, r))));
    } else {
      terms.push_back(diff::scale(diff::add_scalar(diff::mean(diff::row_cosine(h, r)), -1.0), -1.0));
    }
  }
  diff::Var loss = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) loss = diff::add(loss, terms[i]);
  return loss;
}

AdversarialSuffix gcg_enhanced(const model::TransformerParams& unlearned, const model::TransformerParams& reference,
                               std::span<const int> prompt, std::span<const int> target, const GcgConfig& cfg) {
  check_target(unlearned.config, prompt, target, cfg);
  if (reference.config.vocab_size != unlearned.config.vocab_size ||
      reference.config.d_model != unlearned.config.d_model || reference.config.n_layers != unlearned.config.n_layers) {
    throw Error(ErrorKind::ShapeMismatch, "reference and unlearned models differ in shape");
  }
  std::vector<int> layers = cfg.layers;
  if (layers.empty()) {
    layers.push_back(unlearned.config.probe_layer);
    const int mid = unlearned.config.n_layers / 2;
    if (mid != unlearned.config.probe_layer) layers.push_back(mid);
  }
  for (int l : layers) {
    if (l < 1 || l > unlearned.config.n_layers) throw Error(ErrorKind::InvalidLayer, "layer " + std::to_string(l));
  }
  const Objective obj = distill_objective(unlearned, reference, layers, target.size(), cfg.distance);
  return search(unlearned.config, prompt, target, cfg, obj);
}

AdversarialSuffix gcg_classic(const model::TransformerParams& model, std::span<const int> prompt,
                              std::span<const int> target, const GcgConfig& cfg) {
  check_target(model.config, prompt, target, cfg);
  const Objective obj = target_ce_objective(model, std::vector<int>(target.begin(), target.end()));
  return search(model.config, prompt, target, cfg, obj);
}

}  // namespace repolab::attacks
