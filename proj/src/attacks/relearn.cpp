#include "repolab/attacks/relearn.hpp"

#include <cmath>
#include <numeric>
#include <tuple>

#include "repolab/evalkit/metrics.hpp"
#include "repolab/objectives/trainer.hpp"
#include "repolab/util/error.hpp"
#include "repolab/util/rng.hpp"

namespace repolab::attacks {

namespace {
constexpr std::pair<AttackKind, const char*> kKindNames[] = {
    {AttackKind::RelearnForget, "relearn-forget"}, {AttackKind::RelearnRetain, "relearn-retain"},
    {AttackKind::Orthogonalize, "orthogonalize"},  {AttackKind::GcgEnhanced, "gcg-enhanced"},
    {AttackKind::GcgClassic, "gcg-classic"},
};
}  // namespace

const char* to_string(AttackKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "?";
}

AttackKind parse_attack_kind(const std::string& name) {
  for (const auto& [k, text] : kKindNames) {
    if (name == text) return k;
  }
  throw Error(ErrorKind::ConfigError, "unknown attack '" + name + "'");
}

void AttackConfig::validate() const {
  if (subset_size < 1) throw Error(ErrorKind::InvalidConfig, "subset size must be at least 1");
  if (epochs < 0) throw Error(ErrorKind::InvalidConfig, "attack epochs must be non-negative");
  if (n_runs < 1) throw Error(ErrorKind::InvalidConfig, "attack needs at least one run");
  if (batch_size < 1) throw Error(ErrorKind::InvalidConfig, "attack batch size must be positive");
  if (!(lr > 0.0)) throw Error(ErrorKind::InvalidConfig, "attack lr must be positive");
}

std::vector<RelearnRun> relearn_models(const model::TransformerParams& model, const corpus::Dataset& dataset,
                                       RelearnView view, const AttackConfig& cfg) {
  cfg.validate();
  const auto pool = dataset.view(corpus::Split::Train);
  if (static_cast<std::size_t>(cfg.subset_size) > pool.size()) {
    throw Error(ErrorKind::SubsetTooLarge, std::to_string(cfg.subset_size) + " exceeds the " +
                                               std::to_string(pool.size()) + " train triples");
  }
  std::vector<RelearnRun> runs;
  for (int run = 0; run < cfg.n_runs; ++run) {
    Rng rng(Rng::mix(cfg.seed, static_cast<std::uint64_t>(run)));
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    order.resize(static_cast<std::size_t>(cfg.subset_size));

    RelearnRun r;
    r.subset = order;
    if (cfg.epochs == 0) {
      r.params = model;
    } else {
      std::vector<std::vector<int>> seqs;
      for (std::size_t i : order) {
        seqs.push_back(view == RelearnView::Forget ? pool[i]->forget_sequence() : pool[i]->retain_sequence());
      }
      objectives::Schedule sched;
      sched.epochs = cfg.epochs;
      sched.batch_size = cfg.batch_size;
      sched.warmup_steps = 0;
      sched.weight_decay = cfg.weight_decay;
      sched.seed = Rng::mix(cfg.seed, 1000 + static_cast<std::uint64_t>(run));
      r.params = objectives::train_lm(model, seqs, sched, cfg.lr, "relearn").params;
    }
    runs.push_back(std::move(r));
  }
  return runs;
}

std::pair<double, double> mean_stderr(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / n;
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

RelearnOutcome relearn(const model::TransformerParams& model, const corpus::Dataset& dataset, RelearnView view,
                       const AttackConfig& cfg, const RelearnEval& eval) {
  if (!eval.prompts || !eval.vocab) throw Error(ErrorKind::InvalidConfig, "relearn needs evaluation prompts");
  RelearnOutcome out;
  out.runs = relearn_models(model, dataset, view, cfg);
  std::vector<double> scores;
  for (RelearnRun& r : out.runs) {
    r.toxicity = evalkit::toxicity_eval(model::ModelView(r.params), *eval.prompts, *eval.vocab, eval.decode).mean;
    scores.push_back(r.toxicity);
  }
  std::tie(out.mean_toxicity, out.stderr_toxicity) = mean_stderr(scores);
  return out;
}

std::vector<SweepPoint> relearn_sweep(const model::TransformerParams& model, const corpus::Dataset& dataset,
                                      RelearnView view, const std::vector<int>& sizes, const AttackConfig& cfg,
                                      const RelearnEval& eval) {
  std::vector<SweepPoint> out;
  for (int size : sizes) {
    AttackConfig c = cfg;
    c.subset_size = size;
    const RelearnOutcome o = relearn(model, dataset, view, c, eval);
    out.push_back(SweepPoint{size, o.mean_toxicity, o.stderr_toxicity});
  }
  return out;
}

}  // namespace repolab::attacks
