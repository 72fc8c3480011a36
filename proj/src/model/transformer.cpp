#include "repolab/model/transformer.hpp"

#include <cmath>
#include <limits>
#include <map>

#include "repolab/util/error.hpp"

namespace repolab::model {

PackedBatch PackedBatch::from(std::span<const std::vector<int>> sequences) {
  PackedBatch batch;
  std::size_t total = 0;
  for (const auto& s : sequences) total += s.size();
  batch.tokens.reserve(total);
  for (const auto& s : sequences) {
    batch.segments.push_back(Segment{batch.tokens.size(), s.size()});
    batch.tokens.insert(batch.tokens.end(), s.begin(), s.end());
  }
  return batch;
}

PackedBatch PackedBatch::single(std::span<const int> sequence) {
  PackedBatch batch;
  batch.tokens.assign(sequence.begin(), sequence.end());
  batch.segments.push_back(Segment{0, sequence.size()});
  return batch;
}

ParamVars bind_params(Graph& graph, const TransformerParams& params, bool trainable) {
  ParamVars pv;
  pv.vars.reserve(params.tensors.size());
  for (const auto& t : params.tensors) pv.vars.push_back(trainable ? graph.leaf(t.value) : graph.constant(t.value));
  return pv;
}

void validate_tokens(const ModelConfig& config, std::span<const int> tokens) {
  if (tokens.empty()) throw Error(ErrorKind::SequenceTooLong, "empty token sequence");
  if (tokens.size() > static_cast<std::size_t>(config.context_length)) {
    throw Error(ErrorKind::SequenceTooLong, std::to_string(tokens.size()) + " tokens exceed context length " +
                                                std::to_string(config.context_length));
  }
  for (int t : tokens) {
    if (t < 0 || t >= config.vocab_size) throw Error(ErrorKind::TokenOutOfRange, "token id " + std::to_string(t));
  }
}

namespace {

Var causal_mask(Graph& graph, std::size_t len, std::map<std::size_t, Var>& cache) {
  auto it = cache.find(len);
  if (it != cache.end()) return it->second;
  Tensor mask({len, len}, 0.0);
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t j = i + 1; j < len; ++j) mask[i * len + j] = -std::numeric_limits<double>::infinity();
  }
  Var v = graph.constant(std::move(mask));
  cache.emplace(len, v);
  return v;
}

Var project_out(Graph& graph, Var x, const std::vector<double>& direction) {
  const std::size_t d = direction.size();
  Var col = graph.constant(Tensor({d, 1}, direction));
  Var row = graph.constant(Tensor({1, d}, direction));
  return diff::sub(x, diff::matmul(diff::matmul(x, col), row));
}

}  // namespace

GraphForward build_forward(Graph& graph, const ModelConfig& config, const ParamVars& params, const PackedBatch& batch,
                           const ForwardOptions& options) {
  using namespace diff;
  if (batch.tokens.empty() || batch.segments.empty()) throw Error(ErrorKind::SequenceTooLong, "empty batch");
  std::vector<int> positions;
  positions.reserve(batch.tokens.size());
  for (const Segment& seg : batch.segments) {
    validate_tokens(config, std::span<const int>(batch.tokens).subspan(seg.start, seg.length));
    for (std::size_t t = 0; t < seg.length; ++t) positions.push_back(static_cast<int>(t));
  }

  const auto d_head = static_cast<std::size_t>(config.head_dim());
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(d_head));
  const bool whole = batch.segments.size() == 1;

  GraphForward out;
  Var tok = options.one_hot ? matmul(*options.one_hot, params[TransformerParams::tok_emb])
                            : gather_rows(params[TransformerParams::tok_emb], batch.tokens);
  Var x = add(tok, gather_rows(params[TransformerParams::pos_emb], positions));
  out.residual.push_back(x);

  std::map<std::size_t, Var> masks;
  for (int l = 0; l < config.n_layers; ++l) {
    const BlockSlots s = block_slots(l);
    Var a = layernorm(x, params[s.ln1_gain], params[s.ln1_bias]);
    Var q = add_row(matmul(a, params[s.wq]), params[s.bq]);
    Var k = add_row(matmul(a, params[s.wk]), params[s.bk]);
    Var v = add_row(matmul(a, params[s.wv]), params[s.bv]);

    std::vector<Var> seg_outputs;
    seg_outputs.reserve(batch.segments.size());
    for (const Segment& seg : batch.segments) {
      Var qs = whole ? q : slice_rows(q, seg.start, seg.length);
      Var ks = whole ? k : slice_rows(k, seg.start, seg.length);
      Var vs = whole ? v : slice_rows(v, seg.start, seg.length);
      Var mask = causal_mask(graph, seg.length, masks);
      std::vector<Var> heads;
      heads.reserve(static_cast<std::size_t>(config.n_heads));
      for (int h = 0; h < config.n_heads; ++h) {
        const std::size_t c0 = static_cast<std::size_t>(h) * d_head;
        Var qh = slice_cols(qs, c0, d_head);
        Var kh = slice_cols(ks, c0, d_head);
        Var vh = slice_cols(vs, c0, d_head);
        Var scores = add(scale(matmul_nt(qh, kh), att_scale), mask);
        heads.push_back(matmul(softmax(scores), vh));
      }
      seg_outputs.push_back(concat_cols(heads));
    }
    Var attn = whole ? seg_outputs.front() : concat_rows(seg_outputs);
    Var attn_out = add_row(matmul(attn, params[s.wo]), params[s.bo]);
    out.attention_out.push_back(attn_out);
    x = add(x, attn_out);

    Var m = layernorm(x, params[s.ln2_gain], params[s.ln2_bias]);
    Var keys = gelu(add_row(matmul_nt(m, params[s.w_in]), params[s.b_in]));
    Var contrib = matmul(keys, params[s.w_out]);
    out.mlp_keys.push_back(keys);
    out.mlp_contrib.push_back(contrib);
    x = add(x, add_row(contrib, params[s.b_out]));

    if (options.projection && options.projection->active(l + 1)) {
      x = project_out(graph, x, options.projection->directions[static_cast<std::size_t>(l)]);
    }
    out.residual.push_back(x);
  }
  // No final layernorm: logits are exactly W h + b on the last residual state.
  const std::size_t w_idx = unembed_weight_slot(config.n_layers);
  out.logits = add_row(matmul_nt(x, params[w_idx]), params[w_idx + 1]);
  return out;
}

namespace {
std::vector<Tensor> values_of(const std::vector<Var>& vars) {
  std::vector<Tensor> out;
  out.reserve(vars.size());
  for (const Var& v : vars) out.push_back(v.value());
  return out;
}
}  // namespace

ForwardResult forward_batch(const ModelView& model, const PackedBatch& batch, const TraceSpec& spec) {
  Graph graph;
  graph.reserve(64 + batch.segments.size() * 40 * static_cast<std::size_t>(model.params->config.n_layers));
  ParamVars pv = bind_params(graph, *model.params, false);
  ForwardOptions options;
  options.projection = model.projection;
  GraphForward gf = build_forward(graph, model.params->config, pv, batch, options);
  ForwardResult result;
  result.logits = gf.logits.value();
  if (spec.residual) result.trace.residual = values_of(gf.residual);
  if (spec.attention_out) result.trace.attention_out = values_of(gf.attention_out);
  if (spec.mlp_keys) result.trace.mlp_keys = values_of(gf.mlp_keys);
  if (spec.mlp_contrib) result.trace.mlp_contrib = values_of(gf.mlp_contrib);
  return result;
}

ForwardResult forward(const ModelView& model, std::span<const int> tokens, const TraceSpec& spec) {
  return forward_batch(model, PackedBatch::single(tokens), spec);
}

Tensor segment_rows(const Tensor& packed, const Segment& segment) {
  const std::size_t m = packed.cols();
  std::vector<double> data(packed.data().begin() + static_cast<std::ptrdiff_t>(segment.start * m),
                           packed.data().begin() + static_cast<std::ptrdiff_t>((segment.start + segment.length) * m));
  return Tensor({segment.length, m}, std::move(data));
}

}  // namespace repolab::model
