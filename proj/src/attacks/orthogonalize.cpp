#include "repolab/attacks/orthogonalize.hpp"

#include <cmath>

#include "repolab/util/error.hpp"

namespace repolab::attacks {

namespace {

std::vector<double> column_mean(const std::vector<std::vector<double>>& rows, std::size_t d) {
  std::vector<double> m(d, 0.0);
  for (const auto& r : rows) {
    if (r.size() != d) throw Error(ErrorKind::ShapeMismatch, "activation rows differ in width");
    for (std::size_t j = 0; j < d; ++j) m[j] += r[j];
  }
  for (double& v : m) v /= static_cast<double>(rows.size());
  return m;
}

// Sums of block-output states over all tokens, per block (index 0 = block 1).
std::vector<std::vector<double>> block_sums(const model::TransformerParams& params,
                                            const std::vector<std::vector<int>>& seqs, std::size_t& count) {
  constexpr std::size_t kChunk = 64;
  const auto n_layers = static_cast<std::size_t>(params.config.n_layers);
  const auto d = static_cast<std::size_t>(params.config.d_model);
  std::vector<std::vector<double>> sums(n_layers, std::vector<double>(d, 0.0));
  count = 0;
  model::TraceSpec spec;
  spec.residual = true;
  for (std::size_t c0 = 0; c0 < seqs.size(); c0 += kChunk) {
    const std::vector<std::vector<int>> chunk(seqs.begin() + static_cast<std::ptrdiff_t>(c0),
                                              seqs.begin() + static_cast<std::ptrdiff_t>(std::min(seqs.size(), c0 + kChunk)));
    const model::PackedBatch packed = model::PackedBatch::from(chunk);
    const model::ForwardResult fr = model::forward_batch(model::ModelView(params), packed, spec);
    for (std::size_t l = 0; l < n_layers; ++l) {
      const diff::Tensor& h = (*fr.trace.residual)[l + 1];
      for (std::size_t r = 0; r < h.rows(); ++r) {
        for (std::size_t j = 0; j < d; ++j) sums[l][j] += h[r * d + j];
      }
    }
    count += packed.total_tokens();
  }
  return sums;
}

DirectionEntry finish(std::vector<double> raw) {
  DirectionEntry e;
  double n2 = 0.0;
  for (double v : raw) n2 += v * v;
  e.raw_norm = std::sqrt(n2);
  e.degenerate = e.raw_norm < kDegenerateNorm;
  if (!e.degenerate) {
    for (double& v : raw) v /= e.raw_norm;
    e.unit = std::move(raw);
  }
  return e;
}

}  // namespace

DirectionEntry diff_in_means(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  if (a.empty() || b.empty()) throw Error(ErrorKind::EmptyForgetSet, "diff-in-means needs activations on both sides");
  const std::size_t d = a.front().size();
  const std::vector<double> ma = column_mean(a, d);
  const std::vector<double> mb = column_mean(b, d);
  std::vector<double> raw(d);
  for (std::size_t j = 0; j < d; ++j) raw[j] = ma[j] - mb[j];
  return finish(std::move(raw));
}

UnlearnedDirection diff_in_means_directions(const model::TransformerParams& reference,
                                            const model::TransformerParams& unlearned,
                                            const std::vector<std::vector<int>>& forget_set) {
  if (forget_set.empty()) throw Error(ErrorKind::EmptyForgetSet, "forget set is empty");
  if (reference.config.d_model != unlearned.config.d_model || reference.config.n_layers != unlearned.config.n_layers) {
    throw Error(ErrorKind::ShapeMismatch, "reference and unlearned models differ in shape");
  }
  std::size_t n_ref = 0;
  std::size_t n_unl = 0;
  const auto ref = block_sums(reference, forget_set, n_ref);
  const auto unl = block_sums(unlearned, forget_set, n_unl);
  UnlearnedDirection out;
  for (std::size_t l = 0; l < ref.size(); ++l) {
    std::vector<double> raw(ref[l].size());
    for (std::size_t j = 0; j < raw.size(); ++j) {
      raw[j] = ref[l][j] / static_cast<double>(n_ref) - unl[l][j] / static_cast<double>(n_unl);
    }
    out.blocks.push_back(finish(std::move(raw)));
  }
  return out;
}

DirectionEntry diff_in_means_direction(const model::TransformerParams& reference,
                                       const model::TransformerParams& unlearned,
                                       const std::vector<std::vector<int>>& forget_set, int block) {
  if (block < 1 || block > reference.config.n_layers) {
    throw Error(ErrorKind::InvalidLayer, "block " + std::to_string(block) + " outside 1.." +
                                             std::to_string(reference.config.n_layers));
  }
  return diff_in_means_directions(reference, unlearned, forget_set).blocks[static_cast<std::size_t>(block - 1)];
}

SteeredModel orthogonalize_inference(const model::TransformerParams& model, const UnlearnedDirection& directions) {
  SteeredModel s;
  s.params = &model;
  bool any = false;
  for (const DirectionEntry& e : directions.blocks) {
    if (!e.degenerate && e.unit.size() != static_cast<std::size_t>(model.config.d_model)) {
      throw Error(ErrorKind::ShapeMismatch, "direction width differs from d_model");
    }
    s.projection.directions.push_back(e.degenerate ? std::vector<double>{} : e.unit);
    any = any || !e.degenerate;
  }
  if (!any) throw Error(ErrorKind::AllDegenerate, "every block direction is degenerate");
  if (s.projection.directions.size() > static_cast<std::size_t>(model.config.n_layers)) {
    throw Error(ErrorKind::ShapeMismatch, "more directions than blocks");
  }
  return s;
}

}  // namespace repolab::attacks
