#include "repolab/model/params.hpp"

#include <cmath>

#include "repolab/util/rng.hpp"

namespace repolab::model {

BlockSlots block_slots(int layer) {
  const std::size_t b = 2 + kTensorsPerBlock * static_cast<std::size_t>(layer);
  return BlockSlots{b,      b + 1,  b + 2,  b + 3,  b + 4,  b + 5,  b + 6,  b + 7,
                    b + 8,  b + 9,  b + 10, b + 11, b + 12, b + 13, b + 14, b + 15};
}

std::size_t TransformerParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.value.numel();
  return n;
}

bool TransformerParams::all_finite() const {
  for (const auto& t : tensors) {
    if (!t.value.all_finite()) return false;
  }
  return true;
}

bool TransformerParams::identical(const TransformerParams& other) const {
  if (!(config == other.config) || tensors.size() != other.tensors.size()) return false;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].name != other.tensors[i].name || !tensors[i].value.identical(other.tensors[i].value)) return false;
  }
  return true;
}

TransformerParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto v = static_cast<std::size_t>(config.vocab_size);
  const auto c = static_cast<std::size_t>(config.context_length);
  const auto f = static_cast<std::size_t>(config.d_mlp);
  const double std_w = 0.02;
  const double std_resid = 0.02 / std::sqrt(2.0 * config.n_layers);

  TransformerParams p;
  p.config = config;
  auto normal = [&](diff::Shape shape, double stddev) {
    Tensor t(std::move(shape));
    for (double& x : t.data()) x = stddev * rng.normal();
    return t;
  };
  auto add = [&](std::string name, int block, Tensor t, ParamGroup group = ParamGroup::Extractor) {
    p.tensors.push_back(ParamTensor{std::move(name), block, group, std::move(t)});
  };

  add("tok_emb", -1, normal({v, d}, std_w));
  add("pos_emb", -1, normal({c, d}, std_w));
  for (int l = 0; l < config.n_layers; ++l) {
    const std::string pre = "block" + std::to_string(l) + ".";
    add(pre + "ln1.gain", l, Tensor({d}, 1.0));
    add(pre + "ln1.bias", l, Tensor({d}, 0.0));
    add(pre + "attn.wq", l, normal({d, d}, std_w));
    add(pre + "attn.bq", l, Tensor({d}, 0.0));
    add(pre + "attn.wk", l, normal({d, d}, std_w));
    add(pre + "attn.bk", l, Tensor({d}, 0.0));
    add(pre + "attn.wv", l, normal({d, d}, std_w));
    add(pre + "attn.bv", l, Tensor({d}, 0.0));
    add(pre + "attn.wo", l, normal({d, d}, std_resid));
    add(pre + "attn.bo", l, Tensor({d}, 0.0));
    add(pre + "ln2.gain", l, Tensor({d}, 1.0));
    add(pre + "ln2.bias", l, Tensor({d}, 0.0));
    add(pre + "mlp.w_in", l, normal({f, d}, std_w));
    add(pre + "mlp.b_in", l, Tensor({f}, 0.0));
    add(pre + "mlp.w_out", l, normal({f, d}, std_resid));
    add(pre + "mlp.b_out", l, Tensor({d}, 0.0));
  }
  add("unembed.weight", config.n_layers, normal({v, d}, std_w), ParamGroup::Head);
  add("unembed.bias", config.n_layers, Tensor({v}, 0.0), ParamGroup::Head);
  return p;
}

ReferenceSnapshot snapshot(const TransformerParams& params) { return ReferenceSnapshot(params); }

}  // namespace repolab::model
