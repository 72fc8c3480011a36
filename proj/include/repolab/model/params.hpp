#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "repolab/diff/tensor.hpp"
#include "repolab/model/config.hpp"

namespace repolab::model {

using diff::Tensor;

// theta_f is everything up to the final residual state; theta_y is the
// unembedding (W, b).
enum class ParamGroup { Extractor, Head };

struct ParamTensor {
  std::string name;
  // -1 for embeddings, 0..n_layers-1 for transformer blocks, n_layers for the head.
  int block = -1;
  ParamGroup group = ParamGroup::Extractor;
  Tensor value;
};

// Position of each tensor of one block inside TransformerParams::tensors.
struct BlockSlots {
  std::size_t ln1_gain, ln1_bias;
  std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
  std::size_t ln2_gain, ln2_bias;
  // MLP keys are rows of w_in [d_mlp, d_model]; values are rows of w_out [d_mlp, d_model].
  std::size_t w_in, b_in, w_out, b_out;
};

inline constexpr std::size_t kTensorsPerBlock = 16;

BlockSlots block_slots(int layer);
inline std::size_t unembed_weight_slot(int n_layers) { return 2 + kTensorsPerBlock * static_cast<std::size_t>(n_layers); }

struct TransformerParams {
  ModelConfig config;
  std::vector<ParamTensor> tensors;

  static constexpr std::size_t tok_emb = 0;
  static constexpr std::size_t pos_emb = 1;
  BlockSlots block(int layer) const { return block_slots(layer); }
  std::size_t unembed_weight() const { return unembed_weight_slot(config.n_layers); }
  std::size_t unembed_bias() const { return unembed_weight() + 1; }

  Tensor& operator[](std::size_t i) { return tensors[i].value; }
  const Tensor& operator[](std::size_t i) const { return tensors[i].value; }

  std::size_t parameter_count() const;
  bool all_finite() const;
  bool identical(const TransformerParams& other) const;
};

// Scaled-normal weights (std 0.02; residual projections scaled by
// 1/sqrt(2 n_layers)), zero biases, unit layernorm gains. Throws InvalidConfig.
TransformerParams init_params(const ModelConfig& config, std::uint64_t seed);

// Frozen deep copy used as the anchoring reference.
class ReferenceSnapshot {
 public:
  explicit ReferenceSnapshot(const TransformerParams& source)
      : params_(std::make_shared<const TransformerParams>(source)) {}

  const TransformerParams& params() const { return *params_; }

 private:
  std::shared_ptr<const TransformerParams> params_;
};

ReferenceSnapshot snapshot(const TransformerParams& params);

}  // namespace repolab::model
