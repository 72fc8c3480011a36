#include "repolab/objectives/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "repolab/util/error.hpp"
#include "repolab/util/rng.hpp"

namespace repolab::objectives {

namespace {
constexpr std::pair<Method, const char*> kMethodNames[] = {
    {Method::Repo, "repo"}, {Method::SureSegment, "sure-segment"}, {Method::Ce, "ce"}, {Method::Dpo, "dpo"},
    {Method::Npo, "npo"},   {Method::Rmu, "rmu"},                  {Method::Cb, "cb"},
};
}  // namespace

const char* to_string(Method method) {
  for (const auto& [m, name] : kMethodNames) {
    if (m == method) return name;
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (const auto& [m, text] : kMethodNames) {
    if (name == text) return m;
  }
  throw Error(ErrorKind::ConfigError, "unknown method '" + name + "'");
}

double BaselineConfig::resolved_alpha(Method method) const {
  if (alpha) return *alpha;
  switch (method) {
    case Method::Rmu: return 0.95;
    case Method::Cb: return 100.0;
    default: return 0.2;
  }
}

void BaselineConfig::validate(Method method) const {
  if (!(lr > 0.0)) throw Error(ErrorKind::InvalidConfig, "baseline lr must be positive");
  if ((method == Method::Dpo || method == Method::Npo) && !(beta > 0.0)) {
    throw Error(ErrorKind::InvalidConfig, "beta must be positive");
  }
  if (method == Method::Rmu && !(c > 0.0)) throw Error(ErrorKind::InvalidConfig, "rmu c must be positive");
  if (method == Method::SureSegment && segment_length < 2) {
    throw Error(ErrorKind::InvalidConfig, "sure-segment needs segment length >= 2");
  }
  if (!(clamp.lo < clamp.hi)) throw Error(ErrorKind::InvalidConfig, "logit clamp range is empty");
  if (grad_clip < 0.0) throw Error(ErrorKind::InvalidConfig, "grad clip must be non-negative");
}

namespace {

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch_size, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  const auto bs = static_cast<std::size_t>(batch_size);
  for (std::size_t i = 0; i < n; i += bs) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + bs)));
  }
  return batches;
}

void check_schedule(const Schedule& s) {
  if (s.epochs < 0) throw Error(ErrorKind::InvalidConfig, "epochs must be non-negative");
  if (s.batch_size < 1) throw Error(ErrorKind::InvalidConfig, "batch size must be positive");
  if (s.warmup_steps < 0) throw Error(ErrorKind::InvalidConfig, "warmup steps must be non-negative");
}

// Reference probe-layer states over the tokens the domain loss will see,
// from the first few hundred train triples.
std::vector<std::vector<double>> calibration_states(const model::TransformerParams& reference,
                                                    const std::vector<corpus::PairedTriple>& triples,
                                                    DomainScope scope) {
  constexpr std::size_t kTriples = 256;
  constexpr std::size_t kChunk = 64;
  const std::size_t n = std::min(kTriples, triples.size());
  const auto layer = static_cast<std::size_t>(reference.config.probe_layer);
  std::vector<std::vector<double>> out;
  for (std::size_t c0 = 0; c0 < n; c0 += kChunk) {
    std::vector<std::vector<int>> seqs;
    std::vector<std::size_t> first;
    for (std::size_t i = c0; i < std::min(n, c0 + kChunk); ++i) {
      const std::size_t from = scope == DomainScope::ContinuationOnly ? triples[i].prompt.size() : 0;
      seqs.push_back(triples[i].retain_sequence());
      seqs.push_back(triples[i].forget_sequence());
      first.push_back(from);
      first.push_back(from);
    }
    const model::PackedBatch packed = model::PackedBatch::from(seqs);
    model::TraceSpec spec;
    spec.residual = true;
    const model::ForwardResult fr = model::forward_batch(model::ModelView(reference), packed, spec);
    const Tensor& h = (*fr.trace.residual)[layer];
    const std::size_t d = h.cols();
    for (std::size_t k = 0; k < seqs.size(); ++k) {
      const model::Segment& seg = packed.segments[k];
      for (std::size_t t = first[k]; t < seg.length; ++t) {
        const auto row = h.data().begin() + static_cast<std::ptrdiff_t>((seg.start + t) * d);
        out.emplace_back(row, row + static_cast<std::ptrdiff_t>(d));
      }
    }
  }
  return out;
}

void check_finite(double value, long step, const std::string& what) {
  if (!std::isfinite(value)) {
    throw Error(ErrorKind::NonFiniteLoss, "step " + std::to_string(step) + ": " + what + " = " + std::to_string(value));
  }
}

struct LossEval {
  double total = 0.0;
  std::vector<std::pair<std::string, double>> components;
  std::vector<Tensor> grads;
};

LossEval baseline_gradients(const MethodConfig& mc, const model::TransformerParams& params,
                            const model::TransformerParams& reference, std::span<const corpus::PairedTriple> batch,
                            std::span<const double> control) {
  Graph graph;
  const model::ParamVars pv = model::bind_params(graph, params, true);
  const PolicyRef policy{params.config, pv};
  const BaselineConfig& b = mc.baseline;
  const double alpha = b.resolved_alpha(mc.method);
  LossEval out;
  Var total;
  switch (mc.method) {
    case Method::Ce: {
      std::vector<std::vector<int>> seqs;
      for (const auto& t : batch) seqs.push_back(t.retain_sequence());
      total = ce_retain_loss(graph, policy, seqs);
      break;
    }
    case Method::Dpo:
      total = dpo_loss(graph, policy, reference, batch, b.beta, b.clamp);
      break;
    case Method::Npo: {
      LossTerms t = npo_loss(graph, policy, reference, batch, b.beta, alpha, b.clamp);
      total = t.total;
      for (const auto& [k, v] : t.parts) out.components.emplace_back(k, v.value().item());
      break;
    }
    case Method::Rmu: {
      LossTerms t = rmu_loss(graph, policy, reference, batch, control, alpha);
      total = t.total;
      for (const auto& [k, v] : t.parts) out.components.emplace_back(k, v.value().item());
      break;
    }
    case Method::Cb: {
      LossTerms t = cb_loss(graph, policy, reference, batch, alpha);
      total = t.total;
      for (const auto& [k, v] : t.parts) out.components.emplace_back(k, v.value().item());
      break;
    }
    default:
      throw Error(ErrorKind::InvalidConfig, "not a baseline method");
  }
  out.total = total.value().item();
  out.components.insert(out.components.begin(), {"loss", out.total});
  graph.backward(total);
  for (const Var& v : pv.vars) out.grads.push_back(graph.grad(v));
  return out;
}

}  // namespace

TrainResult train(const MethodConfig& mc, const model::TransformerParams& initial,
                  const model::TransformerParams& reference, const corpus::Dataset& dataset, const Schedule& schedule,
                  const EpochHook& on_epoch) {
  check_schedule(schedule);
  const bool adversarial = mc.method == Method::Repo || mc.method == Method::SureSegment;
  RepoConfig repo = mc.repo;
  if (mc.method == Method::SureSegment) repo.segment_length = mc.baseline.segment_length;
  if (adversarial) {
    repo.validate();
  } else {
    mc.baseline.validate(mc.method);
  }

  std::vector<corpus::PairedTriple> train_set;
  for (const auto* t : dataset.view(corpus::Split::Train)) train_set.push_back(*t);
  if (train_set.empty()) throw Error(ErrorKind::EmptyBatch, "dataset has no train triples");

  OptimizerConfig base;
  base.kind = schedule.optimizer;
  base.weight_decay = schedule.weight_decay;
  base.warmup_steps = schedule.warmup_steps;

  TrainResult result;
  Rng rng(Rng::mix(schedule.seed, 0));
  const std::string name = to_string(mc.method);

  if (adversarial) {
    TrainState state = make_train_state(initial, model::ReferenceSnapshot(reference), repo, base,
                                        Rng::mix(schedule.seed, 2));
    calibrate_discriminator(state.disc, calibration_states(reference, train_set, repo.scope));
    for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
      for (const auto& idx : epoch_batches(train_set.size(), schedule.batch_size, rng)) {
        std::vector<corpus::PairedTriple> batch;
        for (std::size_t i : idx) batch.push_back(train_set[i]);
        const long step = state.step;
        const RepoStepResult r = repo_step(state, batch, repo);
        check_finite(r.retain, step, "retain loss");
        check_finite(r.domain, step, "domain loss");
        StepRecord rec;
        rec.step = step;
        rec.epoch = epoch;
        rec.method = name;
        rec.components = {{"loss", repo.alpha * r.retain + (1.0 - repo.alpha) * r.domain},
                          {"retain", r.retain},
                          {"domain", r.domain}};
        rec.grad_norm = r.grad_norm;
        rec.disc_grad_norm = r.disc_grad_norm;
        rec.lr = r.lr;
        result.log.push_back(std::move(rec));
      }
      if (on_epoch) on_epoch(epoch, state.params);
    }
    result.params = std::move(state.params);
    result.disc = std::move(state.disc);
    return result;
  }

  OptimizerConfig oc = base;
  oc.lr = mc.baseline.lr;
  if (mc.method == Method::Dpo || mc.method == Method::Npo) oc.grad_clip = mc.baseline.grad_clip;
  Optimizer opt(oc);
  std::vector<double> control;
  if (mc.method == Method::Rmu) control = control_vector(initial.config.d_model, mc.baseline.c, mc.baseline.control_seed);
  model::TransformerParams params = initial;
  long step = 0;
  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    for (const auto& idx : epoch_batches(train_set.size(), schedule.batch_size, rng)) {
      std::vector<corpus::PairedTriple> batch;
      for (std::size_t i : idx) batch.push_back(train_set[i]);
      LossEval e = baseline_gradients(mc, params, reference, batch, control);
      check_finite(e.total, step, name + " loss");
      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      rec.method = name;
      rec.components = std::move(e.components);
      rec.lr = opt.current_lr();
      std::vector<Tensor*> ptrs;
      for (auto& t : params.tensors) ptrs.push_back(&t.value);
      rec.grad_norm = opt.step(ptrs, e.grads);
      result.log.push_back(std::move(rec));
      ++step;
    }
    if (on_epoch) on_epoch(epoch, params);
  }
  result.params = std::move(params);
  return result;
}

TrainResult train_lm(const model::TransformerParams& initial, const std::vector<std::vector<int>>& sequences,
                     const Schedule& schedule, double lr, const std::string& label) {
  check_schedule(schedule);
  if (!(lr > 0.0)) throw Error(ErrorKind::InvalidConfig, "lr must be positive");
  if (sequences.empty()) throw Error(ErrorKind::EmptyBatch, "no training sequences");
  OptimizerConfig oc;
  oc.kind = schedule.optimizer;
  oc.lr = lr;
  oc.weight_decay = schedule.weight_decay;
  oc.warmup_steps = schedule.warmup_steps;
  Optimizer opt(oc);
  Rng rng(Rng::mix(schedule.seed, 0));
  TrainResult result;
  model::TransformerParams params = initial;
  long step = 0;
  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    for (const auto& idx : epoch_batches(sequences.size(), schedule.batch_size, rng)) {
      std::vector<std::vector<int>> batch;
      for (std::size_t i : idx) batch.push_back(sequences[i]);
      Graph graph;
      const model::ParamVars pv = model::bind_params(graph, params, true);
      Var loss = ce_retain_loss(graph, PolicyRef{params.config, pv}, batch);
      const double value = loss.value().item();
      check_finite(value, step, label + " loss");
      graph.backward(loss);
      std::vector<Tensor> grads;
      std::vector<Tensor*> ptrs;
      for (std::size_t i = 0; i < pv.vars.size(); ++i) {
        grads.push_back(graph.grad(pv.vars[i]));
        ptrs.push_back(&params.tensors[i].value);
      }
      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      rec.method = label;
      rec.components = {{"loss", value}};
      rec.lr = opt.current_lr();
      rec.grad_norm = opt.step(ptrs, grads);
      result.log.push_back(std::move(rec));
      ++step;
    }
  }
  result.params = std::move(params);
  return result;
}

std::string format_log(const std::vector<StepRecord>& log) {
  std::string out;
  for (const auto& r : log) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["epoch"] = r.epoch;
    j["method"] = r.method;
    nlohmann::ordered_json comps = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.components) comps[k] = v;
    j["losses"] = comps;
    j["grad_norm"] = r.grad_norm;
    if (r.disc_grad_norm) j["disc_grad_norm"] = *r.disc_grad_norm;
    j["lr"] = r.lr;
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace repolab::objectives
