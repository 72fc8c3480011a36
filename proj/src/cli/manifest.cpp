#include "repolab/cli/manifest.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>

#include <json.hpp>

#include "repolab/util/error.hpp"
#include "repolab/util/hash.hpp"

namespace repolab::cli {

namespace fs = std::filesystem;

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["run-id"] = run_id;
  j["command"] = command;
  nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
  for (const auto& [k, e] : config.entries()) cfg[k] = e.value;
  j["config"] = cfg;
  nlohmann::ordered_json s = nlohmann::ordered_json::object();
  for (const auto& [k, v] : seeds) s[k] = v;
  j["seeds"] = s;
  const auto artifacts = [](const std::vector<ArtifactRecord>& list) {
    nlohmann::ordered_json a = nlohmann::ordered_json::array();
    for (const auto& r : list) a.push_back({{"name", r.name}, {"path", r.path}, {"sha256", r.sha256}});
    return a;
  };
  j["inputs"] = artifacts(inputs);
  j["outputs"] = artifacts(outputs);
  j["tool-version"] = tool_version;
  j["started"] = started;
  j["wall-clock-seconds"] = wall_clock_seconds;
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::ParseError, std::string("manifest: ") + e.what());
  }
  RunManifest m;
  try {
    m.run_id = j.at("run-id").get<std::string>();
    m.command = j.at("command").get<std::string>();
    m.config = default_config();
    for (const auto& [k, v] : j.at("config").items()) m.config.set(k, v.get<std::string>(), "manifest");
    for (const auto& [k, v] : j.at("seeds").items()) m.seeds[k] = v.get<std::uint64_t>();
    const auto artifacts = [](const nlohmann::json& a) {
      std::vector<ArtifactRecord> out;
      for (const auto& r : a) out.push_back({r.at("name"), r.at("path"), r.at("sha256")});
      return out;
    };
    m.inputs = artifacts(j.at("inputs"));
    m.outputs = artifacts(j.at("outputs"));
    m.tool_version = j.at("tool-version").get<std::string>();
    m.started = j.at("started").get<std::string>();
    m.wall_clock_seconds = j.at("wall-clock-seconds").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("manifest: ") + e.what());
  }
  return m;
}

std::map<std::string, std::uint64_t> collect_seeds(const ConfigTree& config) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& [k, e] : config.entries()) {
    if (e.type == ValueType::Uint && (k.ends_with(".seed") || k.ends_with("_seed"))) out[k] = config.uinteger(k);
  }
  return out;
}

fs::path run_store_root() {
  const char* env = std::getenv(kRunRootEnv);
  return env && *env ? fs::path(env) : fs::path("runs");
}

std::string make_run_id(const std::string& command, const ConfigTree& config) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
  return std::string(stamp) + "-" + sha256_hex(command + "\n" + config.render()).substr(0, 12);
}

RunDir RunDir::create(const fs::path& root, const std::string& run_id) {
  RunDir d;
  fs::create_directories(root);
  for (int n = 0;; ++n) {
    d.id_ = n == 0 ? run_id : run_id + "-" + std::to_string(n);
    d.path_ = root / d.id_;
    // create_directory reports false when the path already exists.
    if (fs::create_directory(d.path_)) break;
  }
  fs::create_directory(d.checkpoints());
  fs::create_directory(d.reports());
  fs::create_directory(d.figures());
  return d;
}

void RunDir::write(const fs::path& relative, const std::string& bytes, RunManifest& manifest) const {
  const fs::path full = path_ / relative;
  fs::create_directories(full.parent_path());
  write_file(full, bytes);
  manifest.outputs.push_back({relative.generic_string(), relative.generic_string(), sha256_hex(bytes)});
}

void RunDir::record(const std::string& name, const fs::path& relative, RunManifest& manifest) const {
  manifest.outputs.push_back({name, relative.generic_string(), sha256_file(path_ / relative)});
}

void RunDir::write_manifest(const RunManifest& manifest) const { write_file(manifest_path(), manifest.to_json()); }

}  // namespace repolab::cli
