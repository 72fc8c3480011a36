#include "repolab/objectives/repo_step.hpp"

#include "repolab/util/error.hpp"

namespace repolab::objectives {

void RepoConfig::validate() const {
  if (alpha < 0.0 || alpha > 1.0) throw Error(ErrorKind::InvalidConfig, "repo alpha must lie in [0, 1]");
  if (!(lr > 0.0) || !(disc_lr > 0.0)) throw Error(ErrorKind::InvalidConfig, "repo learning rates must be positive");
  if (grl_lambda < 0.0) throw Error(ErrorKind::InvalidConfig, "grl lambda must be non-negative");
  if (segment_length < 1) throw Error(ErrorKind::InvalidConfig, "segment length must be at least 1");
  if (disc_depth != 1 && disc_depth != 2) throw Error(ErrorKind::InvalidConfig, "discriminator depth must be 1 or 2");
  if (disc_width < 1) throw Error(ErrorKind::InvalidConfig, "discriminator width must be positive");
  if (disc_steps < 1) throw Error(ErrorKind::InvalidConfig, "disc steps must be at least 1");
}

RepoGradients repo_gradients(const model::TransformerParams& params, const DiscriminatorParams& disc,
                             const model::TransformerParams& reference, std::span<const corpus::PairedTriple> batch,
                             const RepoConfig& config) {
  config.validate();
  if (batch.empty()) throw Error(ErrorKind::EmptyBatch, "repo step received an empty batch");
  Graph graph;
  const model::ParamVars pv = model::bind_params(graph, params, true);
  const DiscVars dv = bind_discriminator(graph, disc, true);

  // s_r rows come first in the packed batch, so the retain term reads a
  // prefix of the logits.
  const std::vector<LabeledSequence> labeled = domain_batch(batch);
  std::vector<std::vector<int>> seqs;
  seqs.reserve(labeled.size());
  for (const auto& s : labeled) seqs.push_back(s.tokens);
  const model::PackedBatch packed = model::PackedBatch::from(seqs);
  const model::GraphForward fwd = model::build_forward(graph, params.config, pv, packed);

  const std::span<const std::vector<int>> retain_seqs(seqs.data(), batch.size());
  const model::PackedBatch retain_packed = model::PackedBatch::from(retain_seqs);
  const Tensor ref_logits = model::forward_batch(model::ModelView(reference), retain_packed).logits;
  Var retain_logits = diff::slice_rows(fwd.logits, 0, retain_packed.total_tokens());
  Var retain = retain_from_logits(graph, retain_logits, ref_logits, retain_packed, config.kl);

  Var states = fwd.residual[static_cast<std::size_t>(params.config.probe_layer)];
  Var domain = domain_from_states(graph, states, packed, labeled, dv, config.scope, config.segment_length, true,
                                  (1.0 - config.alpha) * config.grl_lambda);

  Var seed = diff::add(diff::scale(retain, config.alpha), domain);
  graph.backward(seed);

  RepoGradients out;
  out.retain = retain.value().item();
  out.domain = domain.value().item();
  for (const Var& v : pv.vars) out.params.push_back(graph.grad(v));
  for (const Var& v : dv.vars) out.disc.push_back(graph.grad(v));
  return out;
}

TrainState make_train_state(const model::TransformerParams& params, const model::ReferenceSnapshot& reference,
                            const RepoConfig& config, OptimizerConfig base, std::uint64_t disc_seed) {
  config.validate();
  OptimizerConfig model_cfg = base;
  model_cfg.lr = config.lr;
  OptimizerConfig disc_cfg = base;
  disc_cfg.lr = config.disc_lr;
  disc_cfg.weight_decay = 0.0;
  return TrainState{params,
                    init_discriminator(params.config.d_model, config.disc_depth, config.disc_width, disc_seed),
                    reference,
                    Optimizer(model_cfg),
                    Optimizer(disc_cfg),
                    0};
}

namespace {

void discriminator_only_steps(TrainState& state, std::span<const corpus::PairedTriple> batch,
                              const RepoConfig& config) {
  const std::vector<LabeledSequence> labeled = domain_batch(batch);
  std::vector<std::vector<int>> seqs;
  for (const auto& s : labeled) seqs.push_back(s.tokens);
  const model::PackedBatch packed = model::PackedBatch::from(seqs);
  model::TraceSpec spec;
  spec.residual = true;
  const Tensor states = (*model::forward_batch(model::ModelView(state.params), packed, spec)
                              .trace.residual)[static_cast<std::size_t>(state.params.config.probe_layer)];
  std::vector<Tensor*> ptrs;
  for (Tensor& t : state.disc.tensors) ptrs.push_back(&t);
  for (int i = 1; i < config.disc_steps; ++i) {
    Graph graph;
    const DiscVars dv = bind_discriminator(graph, state.disc, true);
    Var loss = domain_from_states(graph, graph.constant(states), packed, labeled, dv, config.scope,
                                  config.segment_length, false, 1.0);
    graph.backward(loss);
    std::vector<Tensor> grads;
    for (const Var& v : dv.vars) grads.push_back(graph.grad(v));
    state.disc_opt.step(ptrs, grads);
  }
}

}  // namespace

RepoStepResult repo_step(TrainState& state, std::span<const corpus::PairedTriple> batch, const RepoConfig& config) {
  if (config.disc_steps > 1) discriminator_only_steps(state, batch, config);
  RepoGradients g = repo_gradients(state.params, state.disc, state.reference.params(), batch, config);
  RepoStepResult r;
  r.retain = g.retain;
  r.domain = g.domain;
  r.lr = state.model_opt.current_lr();

  std::vector<Tensor*> disc_ptrs;
  for (Tensor& t : state.disc.tensors) disc_ptrs.push_back(&t);
  r.disc_grad_norm = state.disc_opt.step(disc_ptrs, g.disc);

  std::vector<Tensor*> ptrs;
  for (auto& t : state.params.tensors) ptrs.push_back(&t.value);
  r.grad_norm = state.model_opt.step(ptrs, g.params);
  ++state.step;
  return r;
}

}  // namespace repolab::objectives
