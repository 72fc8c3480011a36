#include "repolab/attacks/report.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "repolab/attacks/orthogonalize.hpp"
#include "repolab/attacks/relearn.hpp"
#include "repolab/evalkit/metrics.hpp"
#include "repolab/util/error.hpp"
#include "repolab/util/rng.hpp"

namespace repolab::attacks {

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::vector<std::vector<int>> head(const std::vector<std::vector<int>>& prompts, int n) {
  const auto k = std::min(prompts.size(), static_cast<std::size_t>(std::max(n, 0)));
  return {prompts.begin(), prompts.begin() + static_cast<std::ptrdiff_t>(k)};
}

double gcg_toxicity(const NamedModel& m, const AttackSpec& spec, const std::vector<std::vector<int>>& prompts,
                    const AttackContext& ctx) {
  model::DecodeConfig decode = ctx.decode;
  const auto teacher = model::generate_batch(model::ModelView(*ctx.reference), prompts, decode);
  std::vector<std::vector<int>> attacked;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const std::vector<int> target(teacher[i].begin() + static_cast<std::ptrdiff_t>(prompts[i].size()), teacher[i].end());
    GcgConfig g = spec.gcg;
    g.seed = Rng::mix(spec.config.seed, i);
    const AdversarialSuffix adv = spec.config.kind == AttackKind::GcgEnhanced
                                      ? gcg_enhanced(*m.params, *ctx.reference, prompts[i], target, g)
                                      : gcg_classic(*m.params, prompts[i], target, g);
    attacked.push_back(adv.apply(prompts[i]));
  }
  return evalkit::toxicity_eval(model::ModelView(*m.params), attacked, *ctx.vocab, decode).mean;
}

}  // namespace

std::vector<AttackRow> attack_report(const std::vector<NamedModel>& models, const std::vector<AttackSpec>& attacks,
                                     const std::vector<EvalSet>& eval_sets, const AttackContext& ctx) {
  if (!ctx.reference || !ctx.dataset || !ctx.vocab) throw Error(ErrorKind::InvalidConfig, "attack context incomplete");
  const std::string hash = ctx.vocab->hash();
  for (const NamedModel& m : models) {
    if (!m.params || m.params->config.vocab_size != static_cast<int>(ctx.vocab->size()) ||
        (!m.vocab_hash.empty() && m.vocab_hash != hash)) {
      throw Error(ErrorKind::VocabMismatch, "model '" + m.name + "' was not built for this vocabulary");
    }
  }
  std::vector<std::vector<int>> forget;
  for (const auto* t : ctx.dataset->view(corpus::Split::Train)) {
    if (static_cast<int>(forget.size()) >= ctx.direction_sequences) break;
    forget.push_back(t->forget_sequence());
  }

  std::vector<AttackRow> rows;
  for (const NamedModel& m : models) {
    const model::ModelView plain(*m.params);
    for (const AttackSpec& spec : attacks) {
      const AttackKind kind = spec.config.kind;
      std::vector<RelearnRun> runs;
      if (kind == AttackKind::RelearnForget || kind == AttackKind::RelearnRetain) {
        runs = relearn_models(*m.params, *ctx.dataset,
                              kind == AttackKind::RelearnForget ? RelearnView::Forget : RelearnView::Retain,
                              spec.config);
      }
      std::optional<SteeredModel> steered;
      if (kind == AttackKind::Orthogonalize) {
        try {
          steered = orthogonalize_inference(*m.params, diff_in_means_directions(*ctx.reference, *m.params, forget));
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::AllDegenerate) throw;
        }
      }
      for (const EvalSet& es : eval_sets) {
        AttackRow row;
        row.method = m.name;
        row.attack = spec.label.empty() ? to_string(kind) : spec.label;
        row.eval_set = es.name;
        row.seed = spec.config.seed;
        if (kind == AttackKind::GcgEnhanced || kind == AttackKind::GcgClassic) {
          const auto prompts = head(es.prompts, spec.gcg_prompts);
          row.pre = evalkit::toxicity_eval(plain, prompts, *ctx.vocab, ctx.decode).mean;
          row.post = gcg_toxicity(m, spec, prompts, ctx);
        } else {
          row.pre = evalkit::toxicity_eval(plain, es.prompts, *ctx.vocab, ctx.decode).mean;
          if (!runs.empty()) {
            std::vector<double> scores;
            for (const RelearnRun& r : runs) {
              scores.push_back(evalkit::toxicity_eval(model::ModelView(r.params), es.prompts, *ctx.vocab, ctx.decode).mean);
            }
            std::tie(row.post, row.post_stderr) = mean_stderr(scores);
            row.n_runs = static_cast<int>(runs.size());
          } else if (steered) {
            row.post = evalkit::toxicity_eval(steered->view(), es.prompts, *ctx.vocab, ctx.decode).mean;
          } else {
            row.post = row.pre;
          }
        }
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

std::string format_rows(const std::vector<AttackRow>& rows) {
  std::string out;
  for (const AttackRow& r : rows) {
    nlohmann::ordered_json j;
    j["method"] = r.method;
    j["attack"] = r.attack;
    j["eval_set"] = r.eval_set;
    j["pre"] = r.pre;
    j["post"] = r.post;
    j["post_stderr"] = r.post_stderr;
    j["n_runs"] = r.n_runs;
    j["seed"] = r.seed;
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<AttackRow> parse_rows(const std::string& text) {
  std::vector<AttackRow> rows;
  std::istringstream in(text);
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      AttackRow r;
      r.method = j.at("method");
      r.attack = j.at("attack");
      r.eval_set = j.at("eval_set");
      r.pre = j.at("pre");
      r.post = j.at("post");
      r.post_stderr = j.at("post_stderr");
      r.n_runs = j.at("n_runs");
      r.seed = j.at("seed");
      rows.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::ParseError, "attack rows line " + std::to_string(n) + ": " + e.what());
    }
  }
  return rows;
}

std::string render_table(const std::vector<AttackRow>& rows) {
  std::vector<std::vector<std::string>> cells{{"method", "attack", "eval-set", "post (pre)", "runs"}};
  for (const AttackRow& r : rows) {
    cells.push_back({r.method, r.attack, r.eval_set, fixed(r.post, 3) + " (" + fixed(r.pre, 3) + ")",
                     std::to_string(r.n_runs)});
  }
  std::vector<std::size_t> width(cells.front().size(), 0);
  for (const auto& line : cells) {
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  }
  std::ostringstream os;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (std::size_t c = 0; c < cells[i].size(); ++c) {
      os << cells[i][c];
      if (c + 1 < cells[i].size()) os << std::string(width[c] - cells[i][c].size() + 2, ' ');
    }
    os << '\n';
    if (i == 0) {
      std::size_t total = 0;
      for (std::size_t c = 0; c < width.size(); ++c) total += width[c] + (c + 1 < width.size() ? 2 : 0);
      os << std::string(total, '-') << '\n';
    }
  }
  return os.str();
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "subset-size,method,eval-set,mean-toxicity,stderr,baseline\n";
  for (const SweepRow& r : rows) {
    out += std::to_string(r.subset_size) + "," + r.method + "," + r.eval_set + "," + fixed(r.mean_toxicity, 6) + "," +
           fixed(r.stderr_toxicity, 6) + "," + (r.baseline ? fixed(*r.baseline, 6) : std::string()) + "\n";
  }
  return out;
}

}  // namespace repolab::attacks
