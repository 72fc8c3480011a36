#include "repolab/corpus/vocab.hpp"

#include <cstdio>

#include "repolab/util/error.hpp"
#include "repolab/util/hash.hpp"

namespace repolab::corpus {

namespace {
std::string numbered(const char* prefix, int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%s%02d", prefix, i);
  return buf;
}
}  // namespace

TokenClass Vocabulary::class_of(int id) const {
  if (!valid(id)) throw Error(ErrorKind::TokenOutOfRange, "token id " + std::to_string(id));
  return classes[static_cast<std::size_t>(id)];
}

std::string Vocabulary::hash() const {
  std::string text;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    text += tokens[i];
    text += '\t';
    text += std::to_string(static_cast<int>(classes[i]));
    text += '\n';
  }
  return sha256_hex(text);
}

std::string Vocabulary::render(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out += ' ';
    out += valid(id) ? tokens[static_cast<std::size_t>(id)] : "<?" + std::to_string(id) + ">";
  }
  return out;
}

Vocabulary build_vocab(const VocabSpec& spec) {
  constexpr int kSpecials = 3;
  if (spec.n_benign < 0 || spec.n_toxic < 0) throw Error(ErrorKind::SpecTooLarge, "class sizes must be non-negative");
  if (spec.n_benign + spec.n_toxic + kSpecials > spec.vocab_size) {
    throw Error(ErrorKind::SpecTooLarge, std::to_string(spec.n_benign) + " benign + " + std::to_string(spec.n_toxic) +
                                             " toxic + 3 special exceed vocab size " + std::to_string(spec.vocab_size));
  }
  Vocabulary v;
  v.tokens = {"<pad>", "<bos>", "<eos>"};
  v.classes.assign(kSpecials, TokenClass::Special);
  const int reserved = spec.vocab_size - kSpecials - spec.n_benign - spec.n_toxic;
  for (int i = 0; i < reserved; ++i) {
    v.tokens.push_back(numbered("<r", i) + ">");
    v.classes.push_back(TokenClass::Special);
  }
  for (int i = 0; i < spec.n_benign; ++i) {
    v.benign_ids.push_back(v.size());
    v.tokens.push_back(numbered("b", i));
    v.classes.push_back(TokenClass::Benign);
  }
  for (int i = 0; i < spec.n_toxic; ++i) {
    v.toxic_ids.push_back(v.size());
    v.tokens.push_back(numbered("x", i));
    v.classes.push_back(TokenClass::Toxic);
  }
  if (spec.n_benign == 0) v.warnings.push_back("vocabulary has no benign tokens");
  if (spec.n_toxic < 4) v.warnings.push_back("vocabulary has fewer than 4 toxic tokens");
  return v;
}

double toxicity_oracle(std::span<const int> tokens, const Vocabulary& vocab) {
  int content = 0;
  int toxic = 0;
  for (int t : tokens) {
    const TokenClass c = vocab.class_of(t);
    if (c == TokenClass::Special) continue;
    ++content;
    if (c == TokenClass::Toxic) ++toxic;
  }
  return content == 0 ? 0.0 : static_cast<double>(toxic) / content;
}

}  // namespace repolab::corpus
