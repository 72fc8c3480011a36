#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace repolab::cli {

enum class ValueType { Int, Uint, Real, Text, List };

struct ConfigEntry {
  ValueType type = ValueType::Text;
  std::string value;  // normalized text
  std::string help;
};

// Flat key/value tree keyed by "section.key". Every key that may be set is
// present in default_config(); values are normalized on assignment so two
// trees built from equivalent inputs render identically.
class ConfigTree {
 public:
  void declare(const std::string& key, ValueType type, const std::string& value, const std::string& help);

  // Throws ConfigError naming the key for unknown keys or values that do not
  // parse as the declared type. `origin` prefixes the message.
  void set(const std::string& key, const std::string& value, const std::string& origin = "");

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  const std::map<std::string, ConfigEntry>& entries() const { return entries_; }

  std::string text(const std::string& key) const;
  long long integer(const std::string& key) const;
  std::uint64_t uinteger(const std::string& key) const;
  double real(const std::string& key) const;
  std::vector<std::string> list(const std::string& key) const;
  // Empty text means "unset".
  bool empty(const std::string& key) const { return text(key).empty(); }

  // "key = value" lines in key order; load_config(render()) reproduces the tree.
  std::string render() const;

  bool operator==(const ConfigTree& other) const;

 private:
  const ConfigEntry& at(const std::string& key) const;
  std::map<std::string, ConfigEntry> entries_;
};

ConfigTree default_config();

// Applies "section.key = value" lines; blank lines and lines starting with
// '#' are skipped. Throws ConfigError with the 1-based line number.
void apply_config_text(ConfigTree& tree, const std::string& text, const std::string& source = "config");

// defaults < file < overrides. Throws ConfigError, IoError.
ConfigTree load_config(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, std::string>>& overrides);
ConfigTree load_config(const std::vector<std::pair<std::string, std::string>>& overrides);

// Short flag names accepted in addition to full keys, e.g. alpha -> repo.alpha.
const std::map<std::string, std::string>& flag_aliases();

// Adds `offset` to every key ending in ".seed" or "_seed"; used to run the
// whole pipeline under several seeds.
ConfigTree reseeded(const ConfigTree& tree, std::uint64_t offset);

}  // namespace repolab::cli
