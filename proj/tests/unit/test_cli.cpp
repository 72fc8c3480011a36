#include <doctest.h>

#include <filesystem>
#include <set>
#include <sstream>

#include <unistd.h>

#include <json.hpp>

#include "repolab/cli/config.hpp"
#include "repolab/cli/dispatch.hpp"
#include "repolab/cli/figures.hpp"
#include "repolab/cli/manifest.hpp"
#include "repolab/util/error.hpp"
#include "repolab/util/hash.hpp"

using namespace repolab;
using namespace repolab::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("repolab-unit-" + name + "-" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "repolab");
  std::ostringstream out, err;
  const int code = dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path run_path(const std::string& out) {
  std::istringstream in(out);
  std::string line, last;
  while (std::getline(in, line)) {
    if (!line.empty() && line.front() != '[') last = line;
  }
  return last;
}

std::string output_hash(const fs::path& run, const std::string& name) {
  const auto m = RunManifest::from_json(read_file(run / "manifest.json"));
  for (const auto& o : m.outputs) {
    if (o.name == name || o.path == name) return o.sha256;
  }
  return {};
}

// Keeps the reference tiny so a CLI round trip takes well under a second.
const std::vector<std::string> kTiny{"--model.d_model",        "8",   "--model.n_layers",       "2",
                                     "--model.n_heads",        "2",   "--model.d_mlp",          "16",
                                     "--model.probe_layer",    "2",   "--corpus.pretrain_sequences", "32",
                                     "--pretrain.epochs",      "1",   "--corpus.n_triples",     "40"};

}  // namespace

TEST_CASE("config defaults and precedence") {
  const ConfigTree d = default_config();
  CHECK(d.integer("pretrain.warmup") == 100);
  CHECK(d.integer("detox.warmup") == 100);
  CHECK(d.real("baseline.clip") == 10.0);
  CHECK(d.real("baseline.clamp_lo") == -30.0);
  CHECK(d.real("baseline.clamp_hi") == 30.0);

  const fs::path dir = scratch("config");
  write_file(dir / "empty.conf", "");
  CHECK(load_config(dir / "empty.conf", {}) == d);

  write_file(dir / "a.conf", "# comment\n\nrepo.alpha = 0.5\ndetox.epochs = 2\n");
  const ConfigTree file_only = load_config(dir / "a.conf", {});
  CHECK(file_only.real("repo.alpha") == 0.5);
  CHECK(file_only.integer("detox.epochs") == 2);
  const ConfigTree both = load_config(dir / "a.conf", {{"repo.alpha", "0.3"}});
  CHECK(both.real("repo.alpha") == 0.3);
  CHECK(both.integer("detox.epochs") == 2);

  write_file(dir / "bad.conf", "repo.alpha = 0.5\n\nthis is not a setting\n");
  try {
    load_config(dir / "bad.conf", {});
    FAIL("expected ConfigError");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ConfigError);
    CHECK(std::string(e.what()).find(":3") != std::string::npos);
  }
  ConfigTree t = d;
  CHECK_THROWS_AS(t.set("repo.nope", "1"), Error);
  CHECK_THROWS_AS(t.set("repo.alpha", "abc"), Error);
  CHECK_THROWS_AS(t.set("detox.epochs", "1.5"), Error);

  const ConfigTree shifted = reseeded(d, 3);
  CHECK(shifted.uinteger("corpus.seed") == d.uinteger("corpus.seed") + 3);
  CHECK(shifted.uinteger("model.init_seed") == d.uinteger("model.init_seed") + 3);
  CHECK(shifted.real("repo.alpha") == d.real("repo.alpha"));
  CHECK(flag_aliases().at("alpha") == "repo.alpha");
  fs::remove_all(dir);
}

TEST_CASE("csv round trip and figures") {
  const CsvTable table{{"a", "b,c"}, {"1", "say \"hi\""}, {"", "x\ny"}};
  const std::string text = write_csv(table);
  CHECK(parse_csv(text) == table);
  CHECK(write_csv(parse_csv(text)) == text);

  analysis::DriftMap zero;
  zero.values.assign(2, std::vector<double>(3, 0.0));
  zero.flagged.assign(2, std::vector<bool>(3, false));
  const std::string csv = render_figure(zero, FigureFormat::Csv);
  const CsvTable rows = parse_csv(csv);
  REQUIRE(rows.size() == 3);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    for (std::size_t c = 1; c < rows[r].size(); ++c) CHECK(std::stod(rows[r][c]) == 0.0);
  }
  const std::string svg = render_figure(zero, FigureFormat::Svg);
  CHECK(svg.find("<svg") != std::string::npos);
  std::set<std::string> fills;
  for (std::size_t at = svg.find("<rect"); at != std::string::npos; at = svg.find("<rect", at + 1)) {
    const std::size_t f = svg.find("fill=\"", at);
    fills.insert(svg.substr(f + 6, 7));
  }
  fills.erase("#ffffff");
  CHECK(fills.size() <= 1);  // at most a background colour besides the cells

  attacks::SweepRow row{10, "repo", "forget-prompts", 0.2, 0.01, 0.1};
  const CsvTable sweep = parse_csv(render_figure(SweepTable{row}, FigureFormat::Csv));
  CHECK(sweep.front() == std::vector<std::string>{"subset-size", "method", "eval-set", "mean-toxicity", "stderr", "baseline"});
  CHECK(sweep.size() == 2);

  try {
    render_figure(Artifact{}, FigureFormat::Svg);
    FAIL("expected UnsupportedArtifact");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::UnsupportedArtifact);
  }
  CHECK_THROWS_AS(parse_figure_format("png"), Error);
}

TEST_CASE("manifest round trip and append-only run dirs") {
  RunManifest m;
  m.run_id = "20260101T000000Z-abc";
  m.command = "detox";
  m.config = default_config();
  m.seeds = collect_seeds(m.config);
  m.inputs = {{"reference", "/tmp/ref.ckpt", std::string(64, 'a')}};
  m.outputs = {{"repo", "checkpoints/repo.ckpt", std::string(64, 'b')}};
  m.started = "2026-01-01T00:00:00Z";
  m.wall_clock_seconds = 1.5;
  const RunManifest back = RunManifest::from_json(m.to_json());
  CHECK(back.to_json() == m.to_json());
  CHECK(back.config == m.config);
  CHECK(back.seeds.at("corpus.seed") == 7);
  CHECK_THROWS_AS(RunManifest::from_json("{"), Error);

  const fs::path root = scratch("runs");
  const RunDir a = RunDir::create(root, "same");
  const RunDir b = RunDir::create(root, "same");
  CHECK(a.path() != b.path());
  CHECK(fs::is_directory(a.checkpoints()));
  CHECK(fs::is_directory(b.figures()));
  fs::remove_all(root);
}

TEST_CASE("dispatch exit codes and error records") {
  const Outcome none = run({});
  CHECK(none.code == kExitUser);
  const Outcome bad = run({"frobnicate"});
  CHECK(bad.code == kExitUser);
  const auto j = nlohmann::json::parse(bad.err);
  CHECK(j.at("error") == "UnknownCommand");
  CHECK(j.at("exit") == 1);

  const Outcome flag = run({"synth", "--bogus", "3"});
  CHECK(flag.code == kExitUser);
  CHECK(flag.err.find("--bogus") != std::string::npos);
  CHECK(run({"synth", "--help"}).code == kExitOk);
}

TEST_CASE("commands write replayable runs") {
  const fs::path root = scratch("dispatch");
  auto with = [&](std::vector<std::string> args) {
    args.push_back("--run-root");
    args.push_back(root.string());
    args.insert(args.end(), kTiny.begin(), kTiny.end());
    return run(args);
  };
  const Outcome s1 = with({"synth"});
  const Outcome s2 = with({"synth"});
  REQUIRE(s1.code == kExitOk);
  REQUIRE(s2.code == kExitOk);
  CHECK(run_path(s1.out) != run_path(s2.out));
  CHECK(output_hash(run_path(s1.out), "dataset.jsonl") == output_hash(run_path(s2.out), "dataset.jsonl"));

  const Outcome r1 = with({"train-ref", "--seed", "7"});
  const Outcome r2 = with({"train-ref", "--seed", "7"});
  REQUIRE(r1.code == kExitOk);
  REQUIRE(r2.code == kExitOk);
  const std::string h = output_hash(run_path(r1.out), "reference-blob");
  CHECK_FALSE(h.empty());
  CHECK(h == output_hash(run_path(r2.out), "reference-blob"));
  const auto manifest = RunManifest::from_json(read_file(run_path(r1.out) / "manifest.json"));
  CHECK(manifest.config.uinteger("model.init_seed") == 7);
  CHECK(manifest.wall_clock_seconds > 0.0);

  const fs::path ref = run_path(r1.out) / "checkpoints" / "reference.ckpt";
  const Outcome d = with({"detox", "--reference", ref.string(), "--method", "repo", "--alpha", "0.2", "--epochs", "1",
                          "--detox.batch_size", "8", "--model.init_seed", "7"});
  REQUIRE(d.code == kExitOk);
  const auto dm = RunManifest::from_json(read_file(run_path(d.out) / "manifest.json"));
  CHECK(dm.config.real("repo.alpha") == 0.2);

  const Outcome replay = run({"detox", "--from-manifest", (run_path(d.out) / "manifest.json").string(), "--run-root",
                              root.string()});
  REQUIRE(replay.code == kExitOk);
  CHECK(output_hash(run_path(replay.out), "repo-blob") == output_hash(run_path(d.out), "repo-blob"));

  // Detoxing from a reference built for another architecture is a user error.
  const Outcome mismatch = with({"detox", "--reference", ref.string(), "--model.context_length", "32"});
  CHECK(mismatch.code == kExitUser);
  CHECK(nlohmann::json::parse(mismatch.err).at("error") == "ConfigMismatch");
  fs::remove_all(root);
}
