#include "repolab/model/config.hpp"

#include "repolab/util/error.hpp"

namespace repolab::model {

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::InvalidConfig, what); };
  if (vocab_size < 2) fail("vocab-size must be >= 2");
  if (d_model < 1 || n_heads < 1 || n_layers < 1 || d_mlp < 1) fail("model dimensions must be positive");
  if (d_model % n_heads != 0) fail("d-model must be divisible by n-heads");
  if (context_length < 1) fail("context-length must be positive");
  if (probe_layer < 0 || probe_layer > n_layers) fail("probe-layer must lie in [0, n-layers]");
}

}  // namespace repolab::model
