#include "repolab/model/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <map>
#include <sstream>

#include "repolab/util/error.hpp"
#include "repolab/util/hash.hpp"

namespace repolab::model {

namespace {

constexpr int kFormatVersion = 1;

std::string encode_blob(const TransformerParams& params) {
  std::string blob;
  blob.reserve(params.parameter_count() * sizeof(double));
  for (const auto& t : params.tensors) {
    for (double v : t.value.data()) {
      std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) blob.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
    }
  }
  return blob;
}

double decode_double(const char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  return std::bit_cast<double>(bits);
}

std::string shape_text(const diff::Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out;
}

std::filesystem::path blob_path_for(const std::filesystem::path& manifest_path) {
  std::filesystem::path blob = manifest_path;
  blob.replace_extension(".bin");
  return blob;
}

int parse_int(const std::string& text, const std::string& key) {
  try {
    std::size_t used = 0;
    const long value = std::stol(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return static_cast<int>(value);
  } catch (const std::exception&) {
    throw Error(ErrorKind::ParseError, "checkpoint key '" + key + "' is not an integer: " + text);
  }
}

}  // namespace

std::string params_digest(const TransformerParams& params) { return sha256_hex(encode_blob(params)); }

void save_checkpoint(const TransformerParams& params, const std::filesystem::path& manifest_path) {
  const std::filesystem::path blob_path = blob_path_for(manifest_path);
  const ModelConfig& c = params.config;
  std::ostringstream m;
  m << "format-version=" << kFormatVersion << "\n";
  m << "config.vocab-size=" << c.vocab_size << "\n";
  m << "config.d-model=" << c.d_model << "\n";
  m << "config.n-layers=" << c.n_layers << "\n";
  m << "config.n-heads=" << c.n_heads << "\n";
  m << "config.d-mlp=" << c.d_mlp << "\n";
  m << "config.context-length=" << c.context_length << "\n";
  m << "config.probe-layer=" << c.probe_layer << "\n";
  m << "blob=" << blob_path.filename().string() << "\n";
  m << "tensor-count=" << params.tensors.size() << "\n";
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const auto& t = params.tensors[i];
    m << "tensor." << i << "=" << t.name << " " << shape_text(t.value.shape()) << " " << offset << "\n";
    offset += t.value.numel() * sizeof(double);
  }
  const std::string blob = encode_blob(params);
  write_file(blob_path, blob);
  write_file(manifest_path, m.str());
}

TransformerParams load_checkpoint(const std::filesystem::path& manifest_path) {
  const std::string text = read_file(manifest_path);
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::ParseError, manifest_path.string() + ":" + std::to_string(line_no) + ": missing '='");
    }
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw Error(ErrorKind::ParseError, "checkpoint manifest lacks key '" + key + "'");
    return it->second;
  };
  if (parse_int(get("format-version"), "format-version") != kFormatVersion) {
    throw Error(ErrorKind::ParseError, "unsupported checkpoint format-version " + get("format-version"));
  }
  ModelConfig c;
  c.vocab_size = parse_int(get("config.vocab-size"), "config.vocab-size");
  c.d_model = parse_int(get("config.d-model"), "config.d-model");
  c.n_layers = parse_int(get("config.n-layers"), "config.n-layers");
  c.n_heads = parse_int(get("config.n-heads"), "config.n-heads");
  c.d_mlp = parse_int(get("config.d-mlp"), "config.d-mlp");
  c.context_length = parse_int(get("config.context-length"), "config.context-length");
  c.probe_layer = parse_int(get("config.probe-layer"), "config.probe-layer");
  c.validate();

  const std::string blob = read_file(manifest_path.parent_path() / get("blob"));
  const int count = parse_int(get("tensor-count"), "tensor-count");
  TransformerParams reference = init_params(c, 0);
  if (static_cast<std::size_t>(count) != reference.tensors.size()) {
    throw Error(ErrorKind::ParseError, "tensor-count " + std::to_string(count) + " does not match the architecture");
  }
  for (int i = 0; i < count; ++i) {
    const std::string key = "tensor." + std::to_string(i);
    std::istringstream entry(get(key));
    std::string name, shape;
    std::size_t offset = 0;
    if (!(entry >> name >> shape >> offset)) throw Error(ErrorKind::ParseError, "malformed entry " + key);
    ParamTensor& slot = reference.tensors[static_cast<std::size_t>(i)];
    if (name != slot.name || shape != shape_text(slot.value.shape())) {
      throw Error(ErrorKind::ParseError, key + " describes " + name + " " + shape + ", expected " + slot.name + " " +
                                             shape_text(slot.value.shape()));
    }
    const std::size_t bytes = slot.value.numel() * sizeof(double);
    if (offset + bytes > blob.size()) throw Error(ErrorKind::ParseError, "blob truncated at " + key);
    for (std::size_t k = 0; k < slot.value.numel(); ++k) slot.value[k] = decode_double(blob.data() + offset + 8 * k);
  }
  return reference;
}

}  // namespace repolab::model
