#include <doctest.h>

#include <filesystem>

#include "helpers.hpp"
#include "repolab/model/checkpoint.hpp"
#include "repolab/model/generate.hpp"
#include "repolab/model/transformer.hpp"
#include "repolab/util/error.hpp"

using namespace repolab;
using namespace repolab::model;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::IoError;
}

const std::vector<int> kSeq{1, 9, 12, 20, 33, 41, 5, 60, 17};

}  // namespace

TEST_CASE("init_params is determined by the seed") {
  const ModelConfig c;
  CHECK(init_params(c, 4).identical(init_params(c, 4)));
  CHECK_FALSE(init_params(c, 4).identical(init_params(c, 5)));
  const auto p = init_params(c, 1);
  CHECK(p[p.unembed_weight()].shape() == diff::Shape{64, 64});
  CHECK(p[p.unembed_bias()].shape() == diff::Shape{64});
  CHECK(p.tensors[p.unembed_weight()].group == ParamGroup::Head);
  CHECK(p.tensors[p.unembed_bias()].group == ParamGroup::Head);
}

TEST_CASE("invalid configs are rejected") {
  ModelConfig c;
  c.n_heads = 3;
  CHECK(kind_of([&] { init_params(c, 0); }) == ErrorKind::InvalidConfig);
  c = ModelConfig{};
  c.probe_layer = 5;
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::InvalidConfig);
}

TEST_CASE("forward rejects bad tokens and long inputs") {
  const auto p = testing::lively_params(testing::tiny_config(), 1);
  const std::vector<int> bad{1, 64};
  CHECK(kind_of([&] { forward(ModelView(p), bad); }) == ErrorKind::TokenOutOfRange);
  const std::vector<int> neg{1, -1};
  CHECK(kind_of([&] { forward(ModelView(p), neg); }) == ErrorKind::TokenOutOfRange);
  const std::vector<int> long_seq(33, 4);
  CHECK(kind_of([&] { forward(ModelView(p), long_seq); }) == ErrorKind::SequenceTooLong);
}

TEST_CASE("empty trace spec yields logits only") {
  const auto p = testing::lively_params(testing::tiny_config(), 2);
  const auto r = forward(ModelView(p), kSeq);
  CHECK(r.logits.shape() == diff::Shape{kSeq.size(), 64});
  CHECK_FALSE(r.trace.residual.has_value());
  CHECK_FALSE(r.trace.attention_out.has_value());
  CHECK_FALSE(r.trace.mlp_keys.has_value());
  CHECK_FALSE(r.trace.mlp_contrib.has_value());
  const auto full = forward(ModelView(p), kSeq, TraceSpec::all());
  CHECK(full.trace.residual->size() == 3);
  CHECK(full.trace.mlp_keys->size() == 2);
  CHECK((*full.trace.mlp_keys)[0].shape() == diff::Shape{kSeq.size(), 16});
}

TEST_CASE("prefix-sharing sequences share every trace channel on the prefix") {
  const auto p = testing::lively_params(testing::tiny_config(), 3);
  std::vector<int> other = kSeq;
  other[6] = 50;
  other[8] = 3;
  const auto a = forward(ModelView(p), kSeq, TraceSpec::all());
  const auto b = forward(ModelView(p), other, TraceSpec::all());
  const std::size_t k = 6;
  const auto same_prefix = [&](const diff::Tensor& x, const diff::Tensor& y) {
    for (std::size_t t = 0; t < k; ++t) {
      const auto rx = x.row(t), ry = y.row(t);
      if (!std::equal(rx.begin(), rx.end(), ry.begin())) return false;
    }
    return true;
  };
  CHECK(same_prefix(a.logits, b.logits));
  for (std::size_t l = 0; l < a.trace.residual->size(); ++l) {
    CHECK(same_prefix((*a.trace.residual)[l], (*b.trace.residual)[l]));
  }
  for (std::size_t l = 0; l < 2; ++l) {
    CHECK(same_prefix((*a.trace.attention_out)[l], (*b.trace.attention_out)[l]));
    CHECK(same_prefix((*a.trace.mlp_keys)[l], (*b.trace.mlp_keys)[l]));
    CHECK(same_prefix((*a.trace.mlp_contrib)[l], (*b.trace.mlp_contrib)[l]));
  }
  const auto ra = a.logits.row(k + 2), rb = b.logits.row(k + 2);
  CHECK_FALSE(std::equal(ra.begin(), ra.end(), rb.begin()));
}

TEST_CASE("logits are affine in the final residual state") {
  const auto p = testing::lively_params(testing::tiny_config(), 4);
  const auto r = forward(ModelView(p), kSeq, TraceSpec{true, false, false, false});
  const diff::Tensor& h = r.trace.residual->back();
  const diff::Tensor& w = p[p.unembed_weight()];
  const diff::Tensor& b = p[p.unembed_bias()];
  double worst = 0.0;
  for (std::size_t t = 0; t < kSeq.size(); ++t) {
    for (std::size_t v = 0; v < 64; ++v) {
      double z = b[v];
      for (std::size_t j = 0; j < 8; ++j) z += w.at(v, j) * h.at(t, j);
      worst = std::max(worst, std::abs(z - r.logits.at(t, v)));
    }
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("perturbing the head changes logits but no residual state") {
  const auto p = testing::lively_params(testing::tiny_config(), 5);
  auto q = p;
  q[q.unembed_weight()][3] += 0.5;
  q[q.unembed_bias()][7] -= 0.25;
  const auto a = forward(ModelView(p), kSeq, TraceSpec{true, false, false, false});
  const auto b = forward(ModelView(q), kSeq, TraceSpec{true, false, false, false});
  for (std::size_t l = 0; l < a.trace.residual->size(); ++l) {
    CHECK((*a.trace.residual)[l].identical((*b.trace.residual)[l]));
  }
  CHECK_FALSE(a.logits.identical(b.logits));
}

TEST_CASE("packed batches match single-sequence forwards") {
  const auto p = testing::lively_params(testing::tiny_config(), 6);
  const std::vector<std::vector<int>> seqs{kSeq, {1, 4, 8}, {1, 30, 31, 32, 33}};
  const auto packed = PackedBatch::from(seqs);
  const auto joint = forward_batch(ModelView(p), packed);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto single = forward(ModelView(p), seqs[i]).logits;
    CHECK(testing::max_abs_diff(segment_rows(joint.logits, packed.segments[i]).data(), single.data()) <= 1e-12);
  }
}

TEST_CASE("equal final states give equal next-token distributions") {
  // The same sequence forwarded alone and inside a packed batch.
  const auto p = testing::lively_params(testing::tiny_config(), 7);
  const std::vector<std::vector<int>> seqs{{1, 5, 9}, kSeq};
  const auto joint = forward_batch(ModelView(p), PackedBatch::from(seqs), TraceSpec{true, false, false, false});
  const auto alone = forward(ModelView(p), seqs[0], TraceSpec{true, false, false, false});
  const auto hj = joint.trace.residual->back().row(2);
  const auto ha = alone.trace.residual->back().row(2);
  CHECK(testing::max_abs_diff(hj, ha) <= 1e-12);
  CHECK(testing::max_abs_diff(joint.logits.row(2), alone.logits.row(2)) <= 1e-10);
}

TEST_CASE("greedy generation is deterministic and respects max_new_tokens") {
  const auto p = testing::lively_params(testing::tiny_config(), 8);
  const std::vector<int> prompt{1, 7, 9, 11};
  DecodeConfig d;
  d.max_new_tokens = 6;
  const auto a = generate(ModelView(p), prompt, d);
  CHECK(a == generate(ModelView(p), prompt, d));
  CHECK(a.size() == prompt.size() + 6);
  d.max_new_tokens = 0;
  CHECK(generate(ModelView(p), prompt, d) == prompt);
  d.max_new_tokens = 40;
  CHECK(kind_of([&] { generate(ModelView(p), prompt, d); }) == ErrorKind::SequenceTooLong);
}

TEST_CASE("near-zero temperature matches greedy on 20 prompts") {
  const auto p = testing::lively_params(testing::tiny_config(), 9);
  Rng rng(3);
  DecodeConfig greedy;
  greedy.max_new_tokens = 5;
  DecodeConfig cold = greedy;
  cold.mode = DecodeMode::Temperature;
  cold.temperature = 1e-6;
  cold.seed = 17;
  for (int i = 0; i < 20; ++i) {
    std::vector<int> prompt{1};
    for (int k = 0; k < 4; ++k) prompt.push_back(4 + static_cast<int>(rng.index(60)));
    CHECK(generate(ModelView(p), prompt, greedy) == generate(ModelView(p), prompt, cold));
  }
}

TEST_CASE("temperature sampling is seed-deterministic") {
  const auto p = testing::lively_params(testing::tiny_config(), 10);
  DecodeConfig d;
  d.mode = DecodeMode::Temperature;
  d.max_new_tokens = 8;
  d.seed = 5;
  const std::vector<int> prompt{1, 20, 21};
  CHECK(generate(ModelView(p), prompt, d) == generate(ModelView(p), prompt, d));
}

TEST_CASE("generation stops after eos and never emits suppressed tokens") {
  const auto p = testing::lively_params(testing::tiny_config(), 11);
  DecodeConfig d;
  d.max_new_tokens = 10;
  const std::vector<int> prompt{1, 6};
  const auto free_run = generate(ModelView(p), prompt, d);
  d.suppress_tokens = {free_run[2]};
  const auto suppressed = generate(ModelView(p), prompt, d);
  for (std::size_t i = 2; i < suppressed.size(); ++i) CHECK(suppressed[i] != free_run[2]);
  d.suppress_tokens.clear();
  d.eos_token = free_run[3];
  const auto stopped = generate(ModelView(p), prompt, d);
  CHECK(stopped.size() <= 4);
  CHECK(stopped.back() == free_run[3]);
}

TEST_CASE("batched generation matches per-prompt generation") {
  const auto p = testing::lively_params(testing::tiny_config(), 12);
  DecodeConfig d;
  d.max_new_tokens = 4;
  const std::vector<std::vector<int>> prompts{{1, 4, 5}, {1, 40}, {1, 9, 9, 9, 9}};
  const auto batch = generate_batch(ModelView(p), prompts, d);
  for (std::size_t i = 0; i < prompts.size(); ++i) CHECK(batch[i] == generate(ModelView(p), prompts[i], d));
}

TEST_CASE("snapshot is isolated from later mutation") {
  auto p = testing::lively_params(testing::tiny_config(), 13);
  const auto snap = snapshot(p);
  CHECK(snap.params().identical(p));
  CHECK(forward(ModelView(snap.params()), kSeq).logits.identical(forward(ModelView(p), kSeq).logits));
  p[0][0] += 1.0;
  CHECK_FALSE(snap.params().identical(p));
  const auto again = snapshot(snap.params());
  CHECK(again.params().identical(snap.params()));
}

TEST_CASE("checkpoint round trip is bitwise lossless") {
  const auto p = testing::lively_params(testing::tiny_config(), 14);
  const auto dir = std::filesystem::temp_directory_path() / "repolab-ckpt-test";
  std::filesystem::create_directories(dir);
  save_checkpoint(p, dir / "m.ckpt");
  const auto q = load_checkpoint(dir / "m.ckpt");
  CHECK(q.identical(p));
  CHECK(q.config == p.config);
  CHECK(params_digest(q) == params_digest(p));
  CHECK(kind_of([&] { load_checkpoint(dir / "missing.ckpt"); }) == ErrorKind::IoError);
  std::filesystem::remove_all(dir);
}
