#include "repolab/corpus/dataset_io.hpp"

#include <sstream>

#include <json.hpp>

#include "repolab/util/error.hpp"
#include "repolab/util/hash.hpp"

namespace repolab::corpus {

namespace {

constexpr int kFormatVersion = 1;
constexpr const char* kFormatName = "repolab-pairs";

std::vector<int> int_array(const nlohmann::json& record, const char* key, int line) {
  auto it = record.find(key);
  if (it == record.end() || !it->is_array()) {
    throw Error(ErrorKind::ParseError, "line " + std::to_string(line) + ": field '" + key + "' missing or not an array");
  }
  std::vector<int> out;
  out.reserve(it->size());
  for (const auto& v : *it) {
    if (!v.is_number_integer()) {
      throw Error(ErrorKind::ParseError, "line " + std::to_string(line) + ": field '" + key + "' holds a non-integer");
    }
    out.push_back(v.get<int>());
  }
  return out;
}

}  // namespace

void validate_triple(const PairedTriple& triple, const Vocabulary& vocab, std::size_t index) {
  const std::string where = "triple " + std::to_string(index);
  auto check_ids = [&](const std::vector<int>& ids, const char* field) {
    for (int id : ids) {
      if (!vocab.valid(id)) {
        throw Error(ErrorKind::InvariantViolation, where + ": " + field + " holds id " + std::to_string(id));
      }
    }
  };
  check_ids(triple.prompt, "prompt");
  check_ids(triple.retain, "retain");
  check_ids(triple.forget, "forget");
  if (triple.prompt.empty()) throw Error(ErrorKind::InvariantViolation, where + ": empty prompt");
  for (int id : triple.retain) {
    if (vocab.is_toxic(id)) throw Error(ErrorKind::InvariantViolation, where + ": retain continuation holds a toxic token");
  }
  bool any_toxic = false;
  for (int id : triple.forget) any_toxic = any_toxic || vocab.is_toxic(id);
  if (!any_toxic) throw Error(ErrorKind::InvariantViolation, where + ": forget continuation holds no toxic token");
}

std::string serialize_dataset(const Dataset& dataset, const Vocabulary& vocab) {
  std::string out;
  nlohmann::ordered_json header;
  header["format"] = kFormatName;
  header["version"] = kFormatVersion;
  header["vocab"] = vocab.hash();
  header["count"] = dataset.triples.size();
  out += header.dump();
  out += '\n';
  for (const auto& t : dataset.triples) {
    nlohmann::ordered_json r;
    r["prompt"] = t.prompt;
    r["retain"] = t.retain;
    r["forget"] = t.forget;
    r["split"] = to_string(t.split);
    out += r.dump();
    out += '\n';
  }
  return out;
}

void save_dataset(const Dataset& dataset, const Vocabulary& vocab, const std::filesystem::path& path) {
  write_file(path, serialize_dataset(dataset, vocab));
}

Dataset parse_dataset(const std::string& text, const Vocabulary& vocab) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  std::size_t expected = 0;
  bool have_header = false;
  Dataset ds;
  while (std::getline(in, line)) {
    ++line_no;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!record.is_object()) throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": not an object");
    if (!have_header) {
      if (record.value("format", "") != kFormatName || record.value("version", 0) != kFormatVersion) {
        throw Error(ErrorKind::ParseError, "line 1: not a version-1 pair dataset header");
      }
      if (record.value("vocab", "") != vocab.hash()) {
        throw Error(ErrorKind::VocabMismatch, "dataset was written for a different vocabulary");
      }
      if (!record.contains("count") || !record["count"].is_number_unsigned()) {
        throw Error(ErrorKind::ParseError, "line 1: header lacks a record count");
      }
      expected = record["count"].get<std::size_t>();
      have_header = true;
      continue;
    }
    PairedTriple t;
    t.prompt = int_array(record, "prompt", line_no);
    t.retain = int_array(record, "retain", line_no);
    t.forget = int_array(record, "forget", line_no);
    const auto split = record.find("split");
    if (split == record.end() || !split->is_string()) {
      throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": field 'split' missing or not a string");
    }
    if (*split == "train") {
      t.split = Split::Train;
    } else if (*split == "held-out") {
      t.split = Split::HeldOut;
    } else {
      throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": unknown split " + split->dump());
    }
    validate_triple(t, vocab, ds.triples.size());
    ds.triples.push_back(std::move(t));
  }
  if (!have_header) throw Error(ErrorKind::ParseError, "line 1: missing header");
  if (ds.triples.size() != expected) {
    throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no + 1) + ": expected " + std::to_string(expected) +
                                           " records, file ends after " + std::to_string(ds.triples.size()));
  }
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path, const Vocabulary& vocab) {
  return parse_dataset(read_file(path), vocab);
}

}  // namespace repolab::corpus
