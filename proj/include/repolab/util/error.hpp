#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace repolab {

// One enumerator per error contract named by the modules. Callers match on
// kind(); what() carries the human-readable detail.
enum class ErrorKind {
  ShapeMismatch,
  NonScalarSeed,
  InvalidConfig,
  TokenOutOfRange,
  SequenceTooLong,
  SpecTooLarge,
  InfeasibleTemplate,
  ParseError,
  InvariantViolation,
  EmptyBatch,
  NonFiniteLoss,
  SubsetTooLarge,
  EmptyForgetSet,
  AllDegenerate,
  InvalidLayer,
  InvalidTarget,
  VocabMismatch,
  DegenerateClasses,
  ConfigMismatch,
  KTooLarge,
  EmptyPositions,
  EmptyPromptSet,
  EmptyCorpus,
  MissingReference,
  UnknownCommand,
  ConfigError,
  UnsupportedArtifact,
  IoError,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& detail)
      : std::runtime_error(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace repolab
