#include "repolab/cli/config.hpp"

#include <charconv>

#include "repolab/util/error.hpp"
#include "repolab/util/hash.hpp"

namespace repolab::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
bool parse_integral(const std::string& s, T& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  if (s.front() == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

// Returns the canonical text or throws.
std::string normalize(const std::string& key, ValueType type, const std::string& raw, const std::string& origin) {
  const std::string v = trim(raw);
  const auto bad = [&](const char* what) {
    return Error(ErrorKind::ConfigError, (origin.empty() ? "" : origin + ": ") + key + ": '" + v + "' is not " + what);
  };
  switch (type) {
    case ValueType::Int: {
      long long x = 0;
      if (!parse_integral(v, x)) throw bad("an integer");
      return std::to_string(x);
    }
    case ValueType::Uint: {
      std::uint64_t x = 0;
      if (!parse_integral(v, x)) throw bad("a non-negative integer");
      return std::to_string(x);
    }
    case ValueType::Real: {
      try {
        return format_double(parse_double(v));
      } catch (const Error&) {
        throw bad("a number");
      }
    }
    case ValueType::List: {
      std::string out;
      std::size_t start = 0;
      while (start <= v.size()) {
        const auto comma = v.find(',', start);
        const std::string item = trim(v.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
        if (!item.empty()) out += (out.empty() ? "" : ",") + item;
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
      return out;
    }
    case ValueType::Text:
      break;
  }
  return v;
}

}  // namespace

void ConfigTree::declare(const std::string& key, ValueType type, const std::string& value, const std::string& help) {
  entries_[key] = ConfigEntry{type, normalize(key, type, value, "default"), help};
}

void ConfigTree::set(const std::string& key, const std::string& value, const std::string& origin) {
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    throw Error(ErrorKind::ConfigError, (origin.empty() ? "" : origin + ": ") + "unknown key '" + key + "'");
  }
  it->second.value = normalize(key, it->second.type, value, origin);
}

const ConfigEntry& ConfigTree::at(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw Error(ErrorKind::ConfigError, "unknown key '" + key + "'");
  return it->second;
}

std::string ConfigTree::text(const std::string& key) const { return at(key).value; }

long long ConfigTree::integer(const std::string& key) const {
  long long x = 0;
  if (!parse_integral(at(key).value, x)) throw Error(ErrorKind::ConfigError, key + " is not an integer");
  return x;
}

std::uint64_t ConfigTree::uinteger(const std::string& key) const {
  std::uint64_t x = 0;
  if (!parse_integral(at(key).value, x)) throw Error(ErrorKind::ConfigError, key + " is not a non-negative integer");
  return x;
}

double ConfigTree::real(const std::string& key) const {
  try {
    return parse_double(at(key).value);
  } catch (const Error&) {
    throw Error(ErrorKind::ConfigError, key + " is not a number");
  }
}

std::vector<std::string> ConfigTree::list(const std::string& key) const {
  std::vector<std::string> out;
  const std::string& v = at(key).value;
  std::size_t start = 0;
  while (!v.empty() && start <= v.size()) {
    const auto comma = v.find(',', start);
    out.push_back(v.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string ConfigTree::render() const {
  std::string out;
  for (const auto& [k, e] : entries_) out += k + " = " + e.value + "\n";
  return out;
}

bool ConfigTree::operator==(const ConfigTree& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (const auto& [k, e] : entries_) {
    auto it = other.entries_.find(k);
    if (it == other.entries_.end() || it->second.value != e.value) return false;
  }
  return true;
}

ConfigTree default_config() {
  using enum ValueType;
  ConfigTree t;
  // corpus
  t.declare("corpus.n_triples", Int, "2048", "paired triples in the detox corpus");
  t.declare("corpus.toxic_density", Real, "0.5", "fraction of continuation slots made toxic in x_f");
  t.declare("corpus.provocative_fraction", Real, "0.5", "share of provocative prompts");
  t.declare("corpus.held_out_fraction", Real, "0.1", "share of triples in the held-out split");
  t.declare("corpus.cont_len", Int, "8", "continuation length");
  t.declare("corpus.seed", Uint, "7", "pair corpus seed");
  t.declare("corpus.ood_prompts", Int, "256", "out-of-distribution prompts");
  t.declare("corpus.ood_seed", Uint, "11", "");
  t.declare("corpus.utility_pairs", Int, "256", "pairs in the retain-distribution utility corpus");
  t.declare("corpus.utility_families", List, "0", "template families of the utility corpus");
  t.declare("corpus.utility_seed", Uint, "13", "");
  t.declare("corpus.pretrain_sequences", Int, "6144", "reference pretraining sequences");
  t.declare("corpus.pretrain_seed", Uint, "17", "");
  // model
  t.declare("model.d_model", Int, "64", "");
  t.declare("model.n_layers", Int, "4", "");
  t.declare("model.n_heads", Int, "4", "");
  t.declare("model.d_mlp", Int, "256", "");
  t.declare("model.context_length", Int, "64", "");
  t.declare("model.probe_layer", Int, "4", "block feeding the discriminator and probes");
  t.declare("model.init_seed", Uint, "1", "");
  // reference pretraining
  t.declare("pretrain.epochs", Int, "10", "");
  t.declare("pretrain.lr", Real, "1e-3", "");
  t.declare("pretrain.batch_size", Int, "32", "");
  t.declare("pretrain.warmup", Int, "100", "");
  t.declare("pretrain.weight_decay", Real, "0", "");
  t.declare("pretrain.seed", Uint, "0", "batch order seed");
  // detox schedule
  t.declare("detox.method", Text, "repo", "repo, sure-segment, ce, dpo, npo, rmu or cb");
  t.declare("detox.epochs", Int, "6", "");
  t.declare("detox.batch_size", Int, "8", "");
  t.declare("detox.warmup", Int, "100", "");
  t.declare("detox.weight_decay", Real, "0.001", "");
  t.declare("detox.optimizer", Text, "adamw", "adamw or sgd");
  t.declare("detox.seed", Uint, "100", "batch order and discriminator init seed");
  // REPO
  t.declare("repo.alpha", Real, "0.5", "retain weight; the domain term gets 1 - alpha");
  t.declare("repo.lr", Real, "1e-4", "model learning rate");
  t.declare("repo.disc_lr", Real, "1e-3", "discriminator learning rate");
  t.declare("repo.grl_lambda", Real, "1", "");
  t.declare("repo.scope", Text, "continuation", "continuation or full");
  t.declare("repo.kl", Text, "ref-to-policy", "ref-to-policy or policy-to-ref");
  t.declare("repo.segment_length", Int, "1", "");
  t.declare("repo.disc_depth", Int, "2", "1 or 2 layers");
  t.declare("repo.disc_width", Int, "64", "");
  t.declare("repo.disc_steps", Int, "10", "discriminator updates per model update");
  // baselines
  t.declare("baseline.lr", Real, "1e-4", "");
  t.declare("baseline.beta", Real, "0.5", "DPO and NPO temperature");
  t.declare("baseline.alpha", Text, "", "NPO/RMU/CB weight; empty uses the method default");
  t.declare("baseline.c", Real, "8", "RMU control-vector norm");
  t.declare("baseline.control_seed", Uint, "5", "");
  t.declare("baseline.segment_length", Int, "4", "sure-segment window");
  t.declare("baseline.clip", Real, "10", "gradient clip for DPO and NPO");
  t.declare("baseline.clamp_lo", Real, "-30", "logit clamp");
  t.declare("baseline.clamp_hi", Real, "30", "logit clamp");
  // attacks
  t.declare("attack.kinds", List, "relearn-forget,orthogonalize,gcg-enhanced", "");
  t.declare("attack.subset_size", Int, "10", "");
  t.declare("attack.epochs", Int, "3", "");
  t.declare("attack.lr", Real, "1e-3", "");
  t.declare("attack.batch_size", Int, "4", "");
  t.declare("attack.n_runs", Int, "3", "");
  t.declare("attack.sweep_sizes", List, "5,10,20", "relearn subset sizes for the sweep figure");
  t.declare("attack.seed", Uint, "0", "");
  t.declare("gcg.suffix_len", Int, "4", "");
  t.declare("gcg.iters", Int, "20", "");
  t.declare("gcg.top_k", Int, "8", "");
  t.declare("gcg.candidates", Int, "32", "");
  t.declare("gcg.prompts", Int, "8", "prompts attacked per eval set");
  t.declare("gcg.placement", Text, "suffix", "suffix or prefix");
  t.declare("gcg.distance", Text, "mse", "mse or cosine");
  // analysis
  t.declare("analysis.sequences", Int, "32", "held-out forget sequences for drift maps");
  t.declare("analysis.k", Int, "64", "neurons per alignment group");
  t.declare("analysis.window", Int, "20", "smoothing window");
  t.declare("analysis.n_toxic", Int, "10", "");
  t.declare("analysis.n_nontoxic", Int, "10", "");
  t.declare("analysis.kv_top", Int, "16", "");
  t.declare("analysis.seed", Uint, "0", "");
  // evaluation
  t.declare("eval.decode", Text, "greedy", "greedy or temperature");
  t.declare("eval.max_new_tokens", Int, "8", "");
  t.declare("eval.temperature", Real, "1", "");
  t.declare("eval.seed", Uint, "0", "");
  // pipeline
  t.declare("pipeline.methods", List, "repo,sure-segment,ce,dpo,npo", "detox methods trained by the pipeline");
  return t;
}

void apply_config_text(ConfigTree& tree, const std::string& text, const std::string& source) {
  std::size_t start = 0;
  int line_no = 0;
  while (start < text.size()) {
    const auto nl = text.find('\n', start);
    const std::string line = trim(text.substr(start, nl == std::string::npos ? std::string::npos : nl - start));
    start = nl == std::string::npos ? text.size() : nl + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const std::string where = source + ":" + std::to_string(line_no);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::ConfigError, where + ": expected 'section.key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty() || key.find('.') == std::string::npos || key.find(' ') != std::string::npos) {
      throw Error(ErrorKind::ConfigError, where + ": malformed key '" + key + "'");
    }
    tree.set(key, line.substr(eq + 1), where);
  }
}

ConfigTree load_config(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, std::string>>& overrides) {
  ConfigTree tree = default_config();
  if (!path.empty()) apply_config_text(tree, read_file(path), path.string());
  for (const auto& [k, v] : overrides) tree.set(k, v, "--" + k);
  return tree;
}

ConfigTree load_config(const std::vector<std::pair<std::string, std::string>>& overrides) {
  return load_config(std::filesystem::path(), overrides);
}

const std::map<std::string, std::string>& flag_aliases() {
  static const std::map<std::string, std::string> aliases = {
      {"alpha", "repo.alpha"},     {"method", "detox.method"}, {"epochs", "detox.epochs"},
      {"lr", "repo.lr"},           {"seed", "model.init_seed"}, {"attack", "attack.kinds"},
      {"n-triples", "corpus.n_triples"},
  };
  return aliases;
}

ConfigTree reseeded(const ConfigTree& tree, std::uint64_t offset) {
  ConfigTree out = tree;
  for (const auto& [k, e] : tree.entries()) {
    const bool seed = k.size() >= 5 && (k.ends_with(".seed") || k.ends_with("_seed"));
    if (seed && e.type == ValueType::Uint) out.set(k, std::to_string(tree.uinteger(k) + offset));
  }
  return out;
}

}  // namespace repolab::cli
