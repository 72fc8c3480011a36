#pragma once

#include <cstdint>
#include <string>

namespace repolab::model {

struct ModelConfig {
  int vocab_size = 64;
  int d_model = 64;
  int n_layers = 4;
  int n_heads = 4;
  int d_mlp = 256;
  int context_length = 64;
  // Block whose output feeds the discriminator and probes; n_layers is the
  // last block before the unembedding.
  int probe_layer = 4;

  int head_dim() const { return d_model / n_heads; }
  // Throws InvalidConfig.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace repolab::model
