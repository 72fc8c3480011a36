#include "repolab/cli/dispatch.hpp"

#include <chrono>
#include <ctime>
#include <map>
#include <optional>
#include <ostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "repolab/cli/figures.hpp"
#include "repolab/cli/manifest.hpp"
#include "repolab/cli/pipeline.hpp"
#include "repolab/corpus/dataset_io.hpp"
#include "repolab/model/checkpoint.hpp"
#include "repolab/util/error.hpp"
#include "repolab/util/hash.hpp"

namespace repolab::cli {

namespace fs = std::filesystem;

const std::vector<std::string>& commands() {
  static const std::vector<std::string> names = {"synth", "train-ref", "detox",  "attack",
                                                  "analyze", "eval",   "report", "pipeline"};
  return names;
}

namespace {

struct Invocation {
  std::string command;
  ConfigTree config;
  fs::path run_root;
  std::optional<fs::path> dataset;
  std::optional<fs::path> reference;
  std::vector<std::pair<std::string, fs::path>> models;
  std::optional<fs::path> eval_reports;
  std::optional<fs::path> attack_rows;
  bool no_attacks = false;
};

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Parses everything after the subcommand. Returns nullopt when help was
// printed.
std::optional<Invocation> parse_invocation(const std::string& command, const std::vector<std::string>& args,
                                           std::ostream& out) {
  CLI::App app("repolab " + command, "repolab " + command);
  app.allow_extras(false);
  std::string config_path, manifest_path, run_root, dataset, reference, eval_reports, attack_rows;
  std::vector<std::string> models, sets;
  bool no_attacks = false;
  app.add_option("--config", config_path, "flat section.key = value file");
  app.add_option("--from-manifest", manifest_path, "replay the config and inputs of a previous run");
  app.add_option("--run-root", run_root, std::string("run store root (default $") + kRunRootEnv + " or ./runs)");
  app.add_option("--dataset", dataset, "paired-triple dataset (.jsonl)");
  app.add_option("--reference", reference, "reference checkpoint");
  app.add_option("--model", models, "NAME=CHECKPOINT, repeatable");
  app.add_option("--eval-reports", eval_reports, "eval.jsonl for the report command");
  app.add_option("--attack-rows", attack_rows, "attacks.jsonl for the report command");
  app.add_option("--set", sets, "section.key=value, repeatable");
  app.add_flag("--no-attacks", no_attacks, "pipeline: skip the attack stage");

  const ConfigTree defaults = default_config();
  std::map<std::string, std::string> key_values;
  std::vector<std::pair<std::string, CLI::Option*>> key_options;
  for (const auto& [key, entry] : defaults.entries()) {
    key_options.emplace_back(key, app.add_option("--" + key, key_values[key], entry.help));
  }
  std::map<std::string, std::string> alias_values;
  std::vector<std::pair<std::string, CLI::Option*>> alias_options;
  for (const auto& [alias, key] : flag_aliases()) {
    alias_options.emplace_back(alias, app.add_option("--" + alias, alias_values[alias], "alias of --" + key));
  }

  for (const std::string& a : args) {
    if (!a.starts_with("--") || a == "--help") continue;
    const std::string name = a.substr(0, a.find('='));
    if (!app.get_option_no_throw(name)) throw Error(ErrorKind::ConfigError, "unknown flag '" + name + "'");
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return std::nullopt;
  } catch (const CLI::ParseError& e) {
    throw Error(ErrorKind::ConfigError, e.what());
  }

  Invocation inv;
  inv.command = command;
  std::vector<std::pair<std::string, std::string>> overrides;
  for (const std::string& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::ConfigError, "--set expects key=value, got '" + s + "'");
    overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  // Aliases first so an explicit full key wins over its alias.
  for (const auto& [alias, opt] : alias_options) {
    if (opt->count()) overrides.emplace_back(flag_aliases().at(alias), alias_values[alias]);
  }
  for (const auto& [key, opt] : key_options) {
    if (opt->count()) overrides.emplace_back(key, key_values[key]);
  }

  if (!manifest_path.empty()) {
    if (!config_path.empty()) throw Error(ErrorKind::ConfigError, "--config and --from-manifest are exclusive");
    const RunManifest m = RunManifest::from_json(read_file(manifest_path));
    inv.config = m.config;
    for (const auto& [k, v] : overrides) inv.config.set(k, v, "--" + k);
    const bool replay_models = models.empty();
    for (const ArtifactRecord& r : m.inputs) {
      if (r.name == "dataset" && dataset.empty()) dataset = r.path;
      if (r.name == "reference" && reference.empty()) reference = r.path;
      if (r.name == "eval-reports" && eval_reports.empty()) eval_reports = r.path;
      if (r.name == "attack-rows" && attack_rows.empty()) attack_rows = r.path;
      if (replay_models && r.name.starts_with("model:")) models.push_back(r.name.substr(6) + "=" + r.path);
    }
  } else {
    inv.config = load_config(config_path.empty() ? fs::path() : fs::path(config_path), overrides);
  }
  inv.run_root = run_root.empty() ? run_store_root() : fs::path(run_root);
  if (!dataset.empty()) inv.dataset = dataset;
  if (!reference.empty()) inv.reference = reference;
  if (!eval_reports.empty()) inv.eval_reports = eval_reports;
  if (!attack_rows.empty()) inv.attack_rows = attack_rows;
  for (const std::string& m : models) {
    const auto eq = m.find('=');
    if (eq == std::string::npos || eq == 0) throw Error(ErrorKind::ConfigError, "--model expects NAME=PATH");
    inv.models.emplace_back(m.substr(0, eq), m.substr(eq + 1));
  }
  inv.no_attacks = no_attacks;
  return inv;
}

bool internal_error(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ShapeMismatch:
    case ErrorKind::NonScalarSeed:
    case ErrorKind::InvariantViolation:
    case ErrorKind::NonFiniteLoss:
      return true;
    default:
      return false;
  }
}

class Session {
 public:
  Session(const Invocation& inv, std::ostream& out) : inv_(inv), out_(out) {}

  void run() {
    run_ = RunDir::create(inv_.run_root, make_run_id(inv_.command, inv_.config));
    manifest_.run_id = run_->id();
    manifest_.command = inv_.command;
    manifest_.config = inv_.config;
    manifest_.seeds = collect_seeds(inv_.config);
    manifest_.started = utc_now();
    record_inputs();
    run_->write_manifest(manifest_);
    const auto t0 = std::chrono::steady_clock::now();
    execute();
    manifest_.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    run_->write_manifest(manifest_);
    out_ << run_->path().string() << "\n";
  }

  const std::optional<RunDir>& run_dir() const { return run_; }

 private:
  void record_inputs() {
    const auto add = [&](const std::string& name, const fs::path& p) {
      manifest_.inputs.push_back({name, p.string(), sha256_file(p)});
      if (p.extension() == ".ckpt") {
        fs::path blob = p;
        blob.replace_extension(".bin");
        manifest_.inputs.push_back({name + "-blob", blob.string(), sha256_file(blob)});
      }
    };
    if (inv_.dataset) add("dataset", *inv_.dataset);
    if (inv_.reference) add("reference", *inv_.reference);
    for (const auto& [name, path] : inv_.models) add("model:" + name, path);
    if (inv_.eval_reports) add("eval-reports", *inv_.eval_reports);
    if (inv_.attack_rows) add("attack-rows", *inv_.attack_rows);
  }

  Workspace workspace() const {
    if (!inv_.dataset) return make_workspace(inv_.config);
    const corpus::Vocabulary vocab = corpus::build_vocab();
    const corpus::Dataset ds = corpus::load_dataset(*inv_.dataset, vocab);
    return make_workspace(inv_.config, &ds);
  }

  model::TransformerParams need_reference() const {
    if (!inv_.reference) throw Error(ErrorKind::ConfigError, inv_.command + " needs --reference");
    return model::load_checkpoint(*inv_.reference);
  }

  std::vector<NamedParams> need_models() const {
    if (inv_.models.empty()) throw Error(ErrorKind::ConfigError, inv_.command + " needs at least one --model");
    std::vector<NamedParams> out;
    for (const auto& [name, path] : inv_.models) out.push_back({name, model::load_checkpoint(path)});
    return out;
  }

  void figure(const std::string& stem, const Artifact& a) {
    run_->write(fs::path("figures") / (stem + ".csv"), render_figure(a, FigureFormat::Csv), manifest_);
    run_->write(fs::path("figures") / (stem + ".svg"), render_figure(a, FigureFormat::Svg), manifest_);
  }

  void save(const std::string& name, const model::TransformerParams& p) {
    const fs::path rel = fs::path("checkpoints") / (name + ".ckpt");
    model::save_checkpoint(p, run_->path() / rel);
    run_->record(name, rel, manifest_);
    run_->record(name + "-blob", fs::path("checkpoints") / (name + ".bin"), manifest_);
  }

  void log(const std::string& msg) { out_ << "[" << inv_.command << "] " << msg << "\n" << std::flush; }

  void execute() {
    const Logger logger = [this](const std::string& m) { log(m); };
    const std::string& cmd = inv_.command;
    if (cmd == "synth") {
      const Workspace ws = workspace();
      run_->write("dataset.jsonl", corpus::serialize_dataset(ws.dataset, ws.vocab), manifest_);
      log(std::to_string(ws.dataset.triples.size()) + " triples");
    } else if (cmd == "train-ref") {
      save("reference", train_reference(workspace(), logger));
    } else if (cmd == "detox") {
      const Workspace ws = workspace();
      const auto method = objectives::parse_method(inv_.config.text("detox.method"));
      const auto r = detox_model(ws, need_reference(), method, logger);
      const std::string name = objectives::to_string(method);
      run_->write(fs::path("reports") / ("train-" + name + ".jsonl"), objectives::format_log(r.log), manifest_);
      save(name, r.params);
    } else if (cmd == "attack") {
      const Workspace ws = workspace();
      const auto reference = need_reference();
      const auto models = need_models();
      std::vector<attacks::NamedModel> named;
      for (const auto& m : models) named.push_back({m.name, &m.params, ws.vocab.hash()});
      attacks::AttackContext ctx;
      ctx.reference = &reference;
      ctx.dataset = &ws.dataset;
      ctx.vocab = &ws.vocab;
      ctx.decode = decode_config(ws.config);
      const std::vector<attacks::EvalSet> sets = {{"forget-prompts", ws.forget_prompts}, {"ood", ws.ood_prompts}};
      const auto rows = attacks::attack_report(named, attack_specs(ws.config), sets, ctx);
      run_->write("reports/attacks.jsonl", attacks::format_rows(rows), manifest_);
      run_->write("reports/attacks.txt", attacks::render_table(rows), manifest_);
      out_ << attacks::render_table(rows);
    } else if (cmd == "analyze") {
      const Workspace ws = workspace();
      const auto bundle = analyze_models(ws, need_reference(), need_models(), logger);
      run_->write("reports/analysis.json", format_analysis(bundle), manifest_);
      for (const auto& a : bundle.models) {
        figure("drift-" + a.name, a.example_drift);
        figure("alignment-" + a.name, a.curves);
      }
    } else if (cmd == "eval") {
      const Workspace ws = workspace();
      std::vector<NamedParams> all{{"reference", need_reference()}};
      if (!inv_.models.empty()) {
        for (auto& m : need_models()) all.push_back(std::move(m));
      }
      const auto reports = evaluate_models(ws, all);
      run_->write("reports/eval.jsonl", evalkit::format_reports(reports), manifest_);
      out_ << evalkit::format_reports(reports);
    } else if (cmd == "report") {
      if (!inv_.eval_reports && !inv_.attack_rows) {
        throw Error(ErrorKind::ConfigError, "report needs --eval-reports and/or --attack-rows");
      }
      if (inv_.eval_reports) {
        const auto reports = evalkit::parse_reports(read_file(*inv_.eval_reports));
        std::vector<evalkit::EvalReport> refs;
        for (const auto& r : reports) {
          if (r.model_id == "reference") refs.push_back(r);
        }
        for (const auto axis : {evalkit::TradeoffAxis::PplRatio, evalkit::TradeoffAxis::F1Ratio}) {
          figure(std::string("tradeoff-") + evalkit::to_string(axis), evalkit::tradeoff_report(reports, refs, axis));
        }
      }
      if (inv_.attack_rows) {
        const auto rows = attacks::parse_rows(read_file(*inv_.attack_rows));
        run_->write("reports/attacks.txt", attacks::render_table(rows), manifest_);
      }
    } else if (cmd == "pipeline") {
      const Workspace ws = workspace();
      const auto summary = run_pipeline(ws, *run_, manifest_, logger, !inv_.no_attacks);
      for (const auto& [stage, s] : summary.stage_seconds) log(stage + " " + std::to_string(s) + " s");
    }
  }

  const Invocation& inv_;
  std::ostream& out_;
  std::optional<RunDir> run_;
  RunManifest manifest_;
};

void report_error(std::ostream& err, const std::optional<RunDir>& run, const std::string& kind,
                  const std::string& detail, int code) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["detail"] = detail;
  j["exit"] = code;
  err << j.dump() << "\n";
  if (run) {
    try {
      write_file(run->path() / "error.json", j.dump(2) + "\n");
    } catch (const Error&) {
      // The stderr record already went out.
    }
  }
}

}  // namespace

int dispatch(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  std::optional<RunDir> run;
  try {
    if (argv.size() < 2 || argv[1] == "--help" || argv[1] == "-h") {
      out << "usage: repolab <command> [options]\ncommands:";
      for (const auto& c : commands()) out << " " << c;
      out << "\nrun 'repolab <command> --help' for the options of a command\n";
      return argv.size() < 2 ? kExitUser : kExitOk;
    }
    const std::string& command = argv[1];
    if (std::find(commands().begin(), commands().end(), command) == commands().end()) {
      throw Error(ErrorKind::UnknownCommand, "'" + command + "'");
    }
    const auto inv = parse_invocation(command, {argv.begin() + 2, argv.end()}, out);
    if (!inv) return kExitOk;
    Session session(*inv, out);
    try {
      session.run();
    } catch (...) {
      run = session.run_dir();
      throw;
    }
    return kExitOk;
  } catch (const Error& e) {
    const int code = internal_error(e.kind()) ? kExitInternal : kExitUser;
    report_error(err, run, std::string(to_string(e.kind())), e.what(), code);
    return code;
  } catch (const std::exception& e) {
    report_error(err, run, "InternalError", e.what(), kExitInternal);
    return kExitInternal;
  }
}

}  // namespace repolab::cli
