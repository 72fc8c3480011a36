#pragma once

#include <cstdint>
#include <string>

namespace repolab::attacks {

enum class AttackKind { RelearnForget, RelearnRetain, Orthogonalize, GcgEnhanced, GcgClassic };

const char* to_string(AttackKind kind);
// Throws ConfigError.
AttackKind parse_attack_kind(const std::string& name);

struct AttackConfig {
  AttackKind kind = AttackKind::RelearnForget;
  int subset_size = 10;
  // 0 leaves the model untouched; the relearning loop simply does not run.
  int epochs = 3;
  double lr = 1e-3;
  double weight_decay = 0.0;
  int batch_size = 4;
  int n_runs = 3;
  std::uint64_t seed = 0;

  // Throws InvalidConfig.
  void validate() const;
};

}  // namespace repolab::attacks
