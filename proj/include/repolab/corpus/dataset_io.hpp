#pragma once

#include <filesystem>

#include "repolab/corpus/synth.hpp"
#include "repolab/corpus/vocab.hpp"

namespace repolab::corpus {

// One JSON object per line. The first line is a header carrying the format
// version, the vocabulary hash and the record count; every following line is
// {"prompt":[...],"retain":[...],"forget":[...],"split":"train"|"held-out"}.
void save_dataset(const Dataset& dataset, const Vocabulary& vocab, const std::filesystem::path& path);
std::string serialize_dataset(const Dataset& dataset, const Vocabulary& vocab);

// Throws ParseError (with line number), InvariantViolation, VocabMismatch.
Dataset load_dataset(const std::filesystem::path& path, const Vocabulary& vocab);
Dataset parse_dataset(const std::string& text, const Vocabulary& vocab);

// Throws InvariantViolation naming the triple when x_r holds a toxic token,
// x_f holds none, or any id is outside the vocabulary.
void validate_triple(const PairedTriple& triple, const Vocabulary& vocab, std::size_t index);

}  // namespace repolab::corpus
