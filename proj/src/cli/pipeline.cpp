#include "repolab/cli/pipeline.hpp"

#include <chrono>

#include <json.hpp>

#include "repolab/attacks/relearn.hpp"
#include "repolab/cli/figures.hpp"
#include "repolab/corpus/dataset_io.hpp"
#include "repolab/model/checkpoint.hpp"
#include "repolab/util/error.hpp"
#include "repolab/util/hash.hpp"

namespace repolab::cli {

namespace {

int as_int(const ConfigTree& c, const std::string& key) { return static_cast<int>(c.integer(key)); }

std::vector<int> int_list(const ConfigTree& c, const std::string& key) {
  std::vector<int> out;
  for (const std::string& s : c.list(key)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(s, &used));
      if (used != s.size()) throw std::invalid_argument(s);
    } catch (const std::exception&) {
      throw Error(ErrorKind::ConfigError, key + ": '" + s + "' is not an integer");
    }
  }
  return out;
}

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

void say(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

}  // namespace

corpus::GenConfig gen_config(const ConfigTree& c) {
  corpus::GenConfig g;
  g.n_triples = as_int(c, "corpus.n_triples");
  g.toxic_density = c.real("corpus.toxic_density");
  g.provocative_fraction = c.real("corpus.provocative_fraction");
  g.held_out_fraction = c.real("corpus.held_out_fraction");
  g.cont_len_min = g.cont_len_max = as_int(c, "corpus.cont_len");
  g.seed = c.uinteger("corpus.seed");
  return g;
}

model::ModelConfig model_config(const ConfigTree& c) {
  model::ModelConfig m;
  m.d_model = as_int(c, "model.d_model");
  m.n_layers = as_int(c, "model.n_layers");
  m.n_heads = as_int(c, "model.n_heads");
  m.d_mlp = as_int(c, "model.d_mlp");
  m.context_length = as_int(c, "model.context_length");
  m.probe_layer = as_int(c, "model.probe_layer");
  m.validate();
  return m;
}

objectives::MethodConfig method_config(const ConfigTree& c, objectives::Method method) {
  objectives::MethodConfig mc;
  mc.method = method;
  auto& r = mc.repo;
  r.alpha = c.real("repo.alpha");
  r.lr = c.real("repo.lr");
  r.disc_lr = c.real("repo.disc_lr");
  r.grl_lambda = c.real("repo.grl_lambda");
  const std::string scope = c.text("repo.scope");
  if (scope == "continuation") {
    r.scope = objectives::DomainScope::ContinuationOnly;
  } else if (scope == "full") {
    r.scope = objectives::DomainScope::FullSequence;
  } else {
    throw Error(ErrorKind::ConfigError, "repo.scope: '" + scope + "' (continuation or full)");
  }
  const std::string kl = c.text("repo.kl");
  if (kl == "ref-to-policy") {
    r.kl = objectives::KlDirection::RefToPolicy;
  } else if (kl == "policy-to-ref") {
    r.kl = objectives::KlDirection::PolicyToRef;
  } else {
    throw Error(ErrorKind::ConfigError, "repo.kl: '" + kl + "' (ref-to-policy or policy-to-ref)");
  }
  r.segment_length = as_int(c, "repo.segment_length");
  r.disc_depth = as_int(c, "repo.disc_depth");
  r.disc_width = as_int(c, "repo.disc_width");
  r.disc_steps = as_int(c, "repo.disc_steps");
  auto& b = mc.baseline;
  b.lr = c.real("baseline.lr");
  b.beta = c.real("baseline.beta");
  if (!c.empty("baseline.alpha")) b.alpha = parse_double(c.text("baseline.alpha"));
  b.c = c.real("baseline.c");
  b.control_seed = c.uinteger("baseline.control_seed");
  b.segment_length = as_int(c, "baseline.segment_length");
  b.grad_clip = c.real("baseline.clip");
  b.clamp = {c.real("baseline.clamp_lo"), c.real("baseline.clamp_hi")};
  return mc;
}

objectives::Schedule detox_schedule(const ConfigTree& c) {
  objectives::Schedule s;
  s.epochs = as_int(c, "detox.epochs");
  s.batch_size = as_int(c, "detox.batch_size");
  s.warmup_steps = as_int(c, "detox.warmup");
  s.weight_decay = c.real("detox.weight_decay");
  const std::string opt = c.text("detox.optimizer");
  if (opt == "adamw") {
    s.optimizer = objectives::OptimizerKind::AdamW;
  } else if (opt == "sgd") {
    s.optimizer = objectives::OptimizerKind::Sgd;
  } else {
    throw Error(ErrorKind::ConfigError, "detox.optimizer: '" + opt + "' (adamw or sgd)");
  }
  s.seed = c.uinteger("detox.seed");
  return s;
}

model::DecodeConfig decode_config(const ConfigTree& c) {
  model::DecodeConfig d;
  const std::string mode = c.text("eval.decode");
  if (mode == "greedy") {
    d.mode = model::DecodeMode::Greedy;
  } else if (mode == "temperature") {
    d.mode = model::DecodeMode::Temperature;
  } else {
    throw Error(ErrorKind::ConfigError, "eval.decode: '" + mode + "' (greedy or temperature)");
  }
  d.max_new_tokens = as_int(c, "eval.max_new_tokens");
  d.temperature = c.real("eval.temperature");
  d.seed = c.uinteger("eval.seed");
  return d;
}

std::vector<attacks::AttackSpec> attack_specs(const ConfigTree& c) {
  std::vector<attacks::AttackSpec> out;
  for (const std::string& name : c.list("attack.kinds")) {
    attacks::AttackSpec s;
    s.label = name;
    s.config.kind = attacks::parse_attack_kind(name);
    s.config.subset_size = as_int(c, "attack.subset_size");
    s.config.epochs = as_int(c, "attack.epochs");
    s.config.lr = c.real("attack.lr");
    s.config.batch_size = as_int(c, "attack.batch_size");
    s.config.n_runs = as_int(c, "attack.n_runs");
    s.config.seed = c.uinteger("attack.seed");
    s.config.validate();
    s.gcg.suffix_len = as_int(c, "gcg.suffix_len");
    s.gcg.iters = as_int(c, "gcg.iters");
    s.gcg.top_k = as_int(c, "gcg.top_k");
    s.gcg.candidates = as_int(c, "gcg.candidates");
    const std::string placement = c.text("gcg.placement");
    if (placement != "suffix" && placement != "prefix") {
      throw Error(ErrorKind::ConfigError, "gcg.placement: '" + placement + "' (suffix or prefix)");
    }
    s.gcg.placement = placement == "suffix" ? attacks::Placement::Suffix : attacks::Placement::Prefix;
    const std::string distance = c.text("gcg.distance");
    if (distance != "mse" && distance != "cosine") {
      throw Error(ErrorKind::ConfigError, "gcg.distance: '" + distance + "' (mse or cosine)");
    }
    s.gcg.distance = distance == "mse" ? attacks::DistillDistance::Mse : attacks::DistillDistance::Cosine;
    s.gcg_prompts = as_int(c, "gcg.prompts");
    out.push_back(std::move(s));
  }
  return out;
}

Workspace make_workspace(const ConfigTree& config, const corpus::Dataset* dataset) {
  Workspace ws;
  ws.config = config;
  ws.vocab = corpus::build_vocab();
  ws.dataset = dataset ? *dataset : corpus::synth_pair_corpus(ws.vocab, gen_config(config));
  const auto layout = corpus::TemplateLayout::from(ws.vocab);
  for (const auto* t : ws.dataset.view(corpus::Split::HeldOut)) {
    (layout.provocative(t->prompt) ? ws.forget_prompts : ws.retain_prompts).push_back(t->prompt);
  }
  corpus::OodConfig ood;
  ood.n_prompts = as_int(config, "corpus.ood_prompts");
  ood.seed = config.uinteger("corpus.ood_seed");
  ws.ood_prompts = corpus::synth_ood_prompts(ws.vocab, ood);
  corpus::NeutralConfig nc;
  nc.n_pairs = as_int(config, "corpus.utility_pairs");
  nc.families = int_list(config, "corpus.utility_families");
  nc.cont_len = as_int(config, "corpus.cont_len");
  nc.seed = config.uinteger("corpus.utility_seed");
  ws.utility = corpus::synth_neutral_corpus(ws.vocab, nc);
  return ws;
}

model::TransformerParams train_reference(const Workspace& ws, const Logger& log) {
  const ConfigTree& c = ws.config;
  corpus::PretrainConfig pc;
  pc.n_sequences = as_int(c, "corpus.pretrain_sequences");
  pc.cont_len = as_int(c, "corpus.cont_len");
  pc.toxic_density = c.real("corpus.toxic_density");
  pc.seed = c.uinteger("corpus.pretrain_seed");
  const auto sequences = corpus::synth_pretraining_corpus(ws.vocab, pc);
  objectives::Schedule s;
  s.epochs = as_int(c, "pretrain.epochs");
  s.batch_size = as_int(c, "pretrain.batch_size");
  s.warmup_steps = as_int(c, "pretrain.warmup");
  s.weight_decay = c.real("pretrain.weight_decay");
  s.seed = c.uinteger("pretrain.seed");
  const model::TransformerParams init = model::init_params(model_config(c), c.uinteger("model.init_seed"));
  say(log, "pretraining reference on " + std::to_string(sequences.size()) + " sequences");
  return objectives::train_lm(init, sequences, s, c.real("pretrain.lr"), "pretrain").params;
}

objectives::TrainResult detox_model(const Workspace& ws, const model::TransformerParams& reference,
                                    objectives::Method method, const Logger& log) {
  if (!(reference.config == model_config(ws.config))) {
    throw Error(ErrorKind::ConfigMismatch, "reference checkpoint does not match the model.* config");
  }
  say(log, std::string("detox: ") + objectives::to_string(method));
  return objectives::train(method_config(ws.config, method), reference, reference, ws.dataset,
                           detox_schedule(ws.config));
}

std::vector<evalkit::EvalReport> evaluate_models(const Workspace& ws, const std::vector<NamedParams>& models) {
  const model::DecodeConfig decode = decode_config(ws.config);
  const std::vector<std::pair<std::string, const std::vector<std::vector<int>>*>> sets = {
      {"forget-prompts", &ws.forget_prompts}, {"ood", &ws.ood_prompts}};
  std::vector<evalkit::EvalReport> refs, out;
  for (const NamedParams& m : models) {
    for (const auto& [name, prompts] : sets) {
      evalkit::EvalInputs in{name, prompts, &ws.utility, &ws.vocab, decode};
      evalkit::EvalReport r = evalkit::evaluate(model::ModelView(m.params), m.name, in);
      if (m.name == "reference") refs.push_back(r);
      out.push_back(r);
    }
  }
  if (refs.empty()) throw Error(ErrorKind::MissingReference, "no model named 'reference'");
  for (auto& r : out) {
    for (const auto& ref : refs) {
      if (ref.eval_set_id == r.eval_set_id) r = evalkit::with_ratios(r, ref);
    }
  }
  return out;
}

std::vector<std::vector<int>> analysis_sequences(const Workspace& ws) {
  std::vector<std::vector<int>> out;
  const auto limit = static_cast<std::size_t>(std::max<long long>(0, ws.config.integer("analysis.sequences")));
  for (const auto* t : ws.dataset.view(corpus::Split::HeldOut)) {
    if (out.size() >= limit) break;
    out.push_back(t->forget_sequence());
  }
  return out;
}

std::vector<std::size_t> toxic_positions(const std::vector<int>& sequence, const corpus::Vocabulary& vocab) {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < sequence.size(); ++t) {
    if (vocab.is_toxic(sequence[t])) out.push_back(t);
  }
  return out;
}

AnalysisBundle analyze_models(const Workspace& ws, const model::TransformerParams& reference,
                              const std::vector<NamedParams>& edited, const Logger& log) {
  const ConfigTree& c = ws.config;
  const int layer = reference.config.probe_layer;
  AnalysisBundle b;
  b.direction = analysis::fit_toxic_direction(reference, ws.dataset, ws.vocab, layer);
  b.reference_probe = analysis::domain_probe(model::ModelView(reference), ws.dataset, layer);
  const auto seqs = analysis_sequences(ws);
  if (seqs.empty()) throw Error(ErrorKind::EmptyPositions, "analysis.sequences selects no held-out sequence");
  std::vector<std::vector<std::size_t>> positions;
  for (const auto& s : seqs) positions.push_back(toxic_positions(s, ws.vocab));
  for (const NamedParams& m : edited) {
    say(log, "analysis: " + m.name);
    ModelAnalysis a;
    a.name = m.name;
    a.domain_probe = analysis::domain_probe(model::ModelView(m.params), ws.dataset, layer);
    std::vector<analysis::DriftMap> maps;
    for (const auto& s : seqs) {
      maps.push_back(analysis::drift_heatmap(reference, m.params, s, analysis::DriftKind::Residual, &ws.vocab));
    }
    a.localization = analysis::localization_score(maps, positions);
    a.example_drift = maps.front();
    a.weight_distance = analysis::weight_block_distance(reference, m.params);
    a.keyvalue = analysis::keyvalue_cosine_report(reference, m.params, b.direction, as_int(c, "analysis.kv_top"), seqs);
    a.curves = analysis::neuron_alignment_curve(reference, m.params, b.direction, seqs, as_int(c, "analysis.k"),
                                                as_int(c, "analysis.window"), c.uinteger("analysis.seed"));
    b.models.push_back(std::move(a));
  }
  return b;
}

std::string format_analysis(const AnalysisBundle& b) {
  nlohmann::ordered_json j;
  j["toxic-direction"] = {{"layer", b.direction.layer},
                          {"train-accuracy", b.direction.train_accuracy},
                          {"held-out-accuracy", b.direction.held_out_accuracy}};
  j["reference-domain-probe"] = {{"train-accuracy", b.reference_probe.train_accuracy},
                                 {"held-out-accuracy", b.reference_probe.held_out_accuracy}};
  nlohmann::ordered_json models = nlohmann::ordered_json::array();
  for (const ModelAnalysis& a : b.models) {
    nlohmann::ordered_json m;
    m["model"] = a.name;
    m["domain-probe"] = {{"train-accuracy", a.domain_probe.train_accuracy},
                         {"held-out-accuracy", a.domain_probe.held_out_accuracy}};
    m["localization"] = {{"ratio", a.localization.infinite ? nlohmann::ordered_json("inf")
                                                           : nlohmann::ordered_json(a.localization.ratio)},
                         {"toxic-drift", a.localization.numerator},
                         {"benign-drift", a.localization.denominator}};
    m["weight-distance"] = a.weight_distance;
    m["keyvalue"] = {{"neurons", a.keyvalue.neurons},
                     {"alignment", a.keyvalue.alignment},
                     {"value-cosine", a.keyvalue.value_cosine},
                     {"key-cosine", a.keyvalue.key_cosine},
                     {"activation-change", a.keyvalue.activation_change}};
    models.push_back(m);
  }
  j["models"] = models;
  return j.dump(2) + "\n";
}

std::vector<attacks::SweepRow> relearn_sweep_rows(const Workspace& ws, const std::vector<NamedParams>& models,
                                                  const std::vector<evalkit::EvalReport>& pre) {
  const auto specs = attack_specs(ws.config);
  attacks::AttackConfig cfg;
  for (const auto& s : specs) {
    if (s.config.kind == attacks::AttackKind::RelearnForget) cfg = s.config;
  }
  cfg.kind = attacks::AttackKind::RelearnForget;
  if (specs.empty()) cfg.seed = ws.config.uinteger("attack.seed");
  const auto sizes = int_list(ws.config, "attack.sweep_sizes");
  const model::DecodeConfig decode = decode_config(ws.config);
  attacks::RelearnEval ev{&ws.forget_prompts, &ws.vocab, decode};
  std::vector<attacks::SweepRow> rows;
  for (const NamedParams& m : models) {
    std::optional<double> baseline;
    for (const auto& r : pre) {
      if (r.model_id == m.name && r.eval_set_id == "forget-prompts") baseline = r.toxicity_mean;
    }
    for (const auto& p : attacks::relearn_sweep(m.params, ws.dataset, attacks::RelearnView::Forget, sizes, cfg, ev)) {
      rows.push_back({p.subset_size, m.name, "forget-prompts", p.mean_toxicity, p.stderr_toxicity, baseline});
    }
  }
  return rows;
}

PipelineSummary run_pipeline(const Workspace& ws, const RunDir& run, RunManifest& manifest, const Logger& log,
                             bool attacks_enabled) {
  PipelineSummary out;
  Stopwatch clock;
  const auto save_ckpt = [&](const std::string& name, const model::TransformerParams& p) {
    const auto rel = std::filesystem::path("checkpoints") / (name + ".ckpt");
    model::save_checkpoint(p, run.path() / rel);
    run.record(name, rel, manifest);
    run.record(name + "-blob", std::filesystem::path("checkpoints") / (name + ".bin"), manifest);
    out.checkpoint_digests[name] = model::params_digest(p);
  };
  const auto figure = [&](const std::string& stem, const Artifact& a) {
    run.write(std::filesystem::path("figures") / (stem + ".csv"), render_figure(a, FigureFormat::Csv), manifest);
    run.write(std::filesystem::path("figures") / (stem + ".svg"), render_figure(a, FigureFormat::Svg), manifest);
  };

  run.write("dataset.jsonl", corpus::serialize_dataset(ws.dataset, ws.vocab), manifest);
  out.stage_seconds["synth"] = clock.lap();

  const model::TransformerParams reference = train_reference(ws, log);
  save_ckpt("reference", reference);
  out.stage_seconds["train-ref"] = clock.lap();

  std::vector<NamedParams> detoxed;
  for (const std::string& name : ws.config.list("pipeline.methods")) {
    const objectives::Method method = objectives::parse_method(name);
    objectives::TrainResult r = detox_model(ws, reference, method, log);
    run.write(std::filesystem::path("reports") / ("train-" + name + ".jsonl"), objectives::format_log(r.log), manifest);
    save_ckpt(name, r.params);
    detoxed.push_back({name, std::move(r.params)});
    out.stage_seconds["detox-" + name] = clock.lap();
  }

  std::vector<NamedParams> all{{"reference", reference}};
  all.insert(all.end(), detoxed.begin(), detoxed.end());
  say(log, "evaluating");
  out.eval = evaluate_models(ws, all);
  run.write("reports/eval.jsonl", evalkit::format_reports(out.eval), manifest);
  std::vector<evalkit::EvalReport> refs, others;
  for (const auto& r : out.eval) (r.model_id == "reference" ? refs : others).push_back(r);
  for (const auto axis : {evalkit::TradeoffAxis::PplRatio, evalkit::TradeoffAxis::F1Ratio}) {
    figure(std::string("tradeoff-") + evalkit::to_string(axis), evalkit::tradeoff_report(out.eval, refs, axis));
  }
  out.stage_seconds["eval"] = clock.lap();

  if (attacks_enabled && !detoxed.empty()) {
    say(log, "attacks");
    std::vector<attacks::NamedModel> named;
    for (const auto& m : detoxed) named.push_back({m.name, &m.params, ws.vocab.hash()});
    attacks::AttackContext ctx;
    ctx.reference = &reference;
    ctx.dataset = &ws.dataset;
    ctx.vocab = &ws.vocab;
    ctx.decode = decode_config(ws.config);
    const std::vector<attacks::EvalSet> sets = {{"forget-prompts", ws.forget_prompts}, {"ood", ws.ood_prompts}};
    out.attacks = attacks::attack_report(named, attack_specs(ws.config), sets, ctx);
    run.write("reports/attacks.jsonl", attacks::format_rows(out.attacks), manifest);
    run.write("reports/attacks.txt", attacks::render_table(out.attacks), manifest);
    if (!ws.config.list("attack.sweep_sizes").empty()) figure("relearn-sweep", relearn_sweep_rows(ws, detoxed, out.eval));
    out.stage_seconds["attack"] = clock.lap();
  }

  out.analysis = analyze_models(ws, reference, detoxed, log);
  run.write("reports/analysis.json", format_analysis(out.analysis), manifest);
  for (const auto& a : out.analysis.models) {
    figure("drift-" + a.name, a.example_drift);
    figure("alignment-" + a.name, a.curves);
  }
  out.stage_seconds["analyze"] = clock.lap();
  return out;
}

}  // namespace repolab::cli
