#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "repolab/cli/config.hpp"

namespace repolab::cli {

inline constexpr const char* kToolVersion = "repolab 0.3.0";
inline constexpr const char* kRunRootEnv = "REPOLAB_RUNS";

struct ArtifactRecord {
  std::string name;  // role, e.g. "reference" or "dataset"
  std::string path;  // relative to the run directory for outputs
  std::string sha256;

  bool operator==(const ArtifactRecord&) const = default;
};

struct RunManifest {
  std::string run_id;
  std::string command;
  ConfigTree config;
  std::map<std::string, std::uint64_t> seeds;  // every *seed key of the config
  std::vector<ArtifactRecord> inputs;
  std::vector<ArtifactRecord> outputs;
  std::string tool_version = kToolVersion;
  std::string started;  // UTC, ISO 8601
  double wall_clock_seconds = 0.0;

  std::string to_json() const;
  // Throws ParseError; config keys are validated against default_config().
  static RunManifest from_json(const std::string& text);
};

// Seeds are read from the config so they never disagree with it.
std::map<std::string, std::uint64_t> collect_seeds(const ConfigTree& config);

// $REPOLAB_RUNS when set, else ./runs.
std::filesystem::path run_store_root();

// "<UTC timestamp>-<first 12 hex of sha256(command + config)>".
std::string make_run_id(const std::string& command, const ConfigTree& config);

// A fresh directory under the store with checkpoints/, reports/ and
// figures/. Existing directories are never reused: a clash gets a numeric
// suffix.
class RunDir {
 public:
  static RunDir create(const std::filesystem::path& root, const std::string& run_id);

  const std::filesystem::path& path() const { return path_; }
  const std::string& id() const { return id_; }
  std::filesystem::path checkpoints() const { return path_ / "checkpoints"; }
  std::filesystem::path reports() const { return path_ / "reports"; }
  std::filesystem::path figures() const { return path_ / "figures"; }
  std::filesystem::path manifest_path() const { return path_ / "manifest.json"; }

  // Writes bytes under the run directory and records the output.
  void write(const std::filesystem::path& relative, const std::string& bytes, RunManifest& manifest) const;
  // Records a file something else already wrote under the run directory.
  void record(const std::string& name, const std::filesystem::path& relative, RunManifest& manifest) const;
  void write_manifest(const RunManifest& manifest) const;

 private:
  std::filesystem::path path_;
  std::string id_;
};

}  // namespace repolab::cli
