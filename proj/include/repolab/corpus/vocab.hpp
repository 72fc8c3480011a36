#pragma once

#include <span>
#include <string>
#include <vector>

namespace repolab::corpus {

enum class TokenClass { Special, Benign, Toxic };

struct VocabSpec {
  int n_benign = 48;
  int n_toxic = 12;
  int vocab_size = 64;
};

// Ids are laid out as: pad, bos, eos, reserved..., benign..., toxic...
// Reserved ids fill whatever the two content classes leave free and are
// classed Special.
struct Vocabulary {
  std::vector<std::string> tokens;
  std::vector<TokenClass> classes;
  std::vector<int> benign_ids;
  std::vector<int> toxic_ids;
  int pad = 0;
  int bos = 1;
  int eos = 2;
  // Non-fatal notes about degenerate specs (e.g. an empty class).
  std::vector<std::string> warnings;

  int size() const { return static_cast<int>(tokens.size()); }
  bool valid(int id) const { return id >= 0 && id < size(); }
  TokenClass class_of(int id) const;
  bool is_toxic(int id) const { return class_of(id) == TokenClass::Toxic; }
  bool is_special(int id) const { return class_of(id) == TokenClass::Special; }
  // SHA-256 over the token table and classes; stamped into dataset files.
  std::string hash() const;
  std::string render(std::span<const int> ids) const;
};

// Throws SpecTooLarge.
Vocabulary build_vocab(const VocabSpec& spec = {});

// Fraction of non-special tokens that are toxic; 0 when there are none.
// Throws TokenOutOfRange.
double toxicity_oracle(std::span<const int> tokens, const Vocabulary& vocab);

}  // namespace repolab::corpus
