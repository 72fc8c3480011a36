#include <doctest.h>

#include <cmath>
#include <set>

#include "helpers.hpp"
#include "repolab/analysis/drift.hpp"
#include "repolab/analysis/neurons.hpp"
#include "repolab/analysis/probe.hpp"
#include "repolab/util/error.hpp"

using namespace repolab;
using namespace repolab::analysis;
using testing::lively_params;
using testing::tiny_config;

namespace {

std::vector<std::vector<int>> sequences(int n) {
  corpus::GenConfig g;
  g.n_triples = 32;
  const auto d = corpus::synth_pair_corpus(corpus::build_vocab(), g);
  std::vector<std::vector<int>> out;
  for (int i = 0; i < n; ++i) out.push_back(d.triples[static_cast<std::size_t>(i)].forget_sequence());
  return out;
}

ToxicDirection random_direction(int d, std::uint64_t seed) {
  ToxicDirection dir;
  const auto t = testing::random_tensor({static_cast<std::size_t>(d)}, seed);
  dir.w.assign(t.data().begin(), t.data().end());
  const double n = diff::norm2(dir.w);
  for (double& v : dir.w) v /= n;
  return dir;
}

DriftMap map_of(std::vector<std::vector<double>> values) {
  DriftMap m;
  m.flagged.assign(values.size(), std::vector<bool>(values.front().size(), false));
  m.values = std::move(values);
  return m;
}

// Zero up to rounding in the cosine.
bool all_zero(const DriftMap& m) {
  for (const auto& row : m.values) {
    for (double v : row) {
      if (std::abs(v) > 1e-12) return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("one minus cosine") {
  bool flag = false;
  const std::vector<double> x{1, 0}, y{0, 3}, neg{-2, 0}, zero{0, 0};
  CHECK(one_minus_cosine(x, x, flag) == doctest::Approx(0.0).scale(1).epsilon(1e-15));
  CHECK(one_minus_cosine(x, y, flag) == 1.0);
  CHECK(one_minus_cosine(x, neg, flag) == 2.0);
  CHECK_FALSE(flag);
  CHECK(one_minus_cosine(x, zero, flag) == 0.0);
  CHECK(flag);

  // Invariant under a shared rotation.
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::vector<double> a{rng.normal(), rng.normal()}, b{rng.normal(), rng.normal()};
    const double th = rng.uniform(0.0, 6.28);
    auto rot = [&](const std::vector<double>& v) {
      return std::vector<double>{std::cos(th) * v[0] - std::sin(th) * v[1], std::sin(th) * v[0] + std::cos(th) * v[1]};
    };
    bool f1 = false, f2 = false;
    CHECK(one_minus_cosine(a, b, f1) == doctest::Approx(one_minus_cosine(rot(a), rot(b), f2)).epsilon(1e-12));
  }
}

TEST_CASE("drift maps vanish when nothing changed") {
  const auto c = tiny_config();
  const auto ref = lively_params(c, 1);
  const auto seq = sequences(1).front();
  const auto vocab = corpus::build_vocab();
  for (DriftKind kind :
       {DriftKind::Residual, DriftKind::AttentionOut, DriftKind::MlpContribution, DriftKind::KeyActivation}) {
    const DriftMap m = drift_heatmap(ref, ref, seq, kind, &vocab);
    CHECK(m.n_layers() == static_cast<std::size_t>(c.n_layers));
    CHECK(m.n_tokens() == seq.size());
    CHECK(m.tokens.size() == seq.size());
    CHECK(all_zero(m));
  }
  const auto edited = lively_params(c, 2);
  CHECK_FALSE(all_zero(drift_heatmap(ref, edited, seq, DriftKind::Residual)));
  CHECK(parse_drift_kind(to_string(DriftKind::KeyActivation)) == DriftKind::KeyActivation);

  auto other = tiny_config();
  other.d_model = 16;
  try {
    drift_heatmap(ref, model::init_params(other, 1), seq, DriftKind::Residual);
    FAIL("expected ConfigMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ConfigMismatch);
  }
}

TEST_CASE("weight block distance") {
  const auto c = tiny_config();
  const auto ref = lively_params(c, 1);
  for (double d : weight_block_distance(ref, ref)) CHECK(d == 0.0);

  auto edited = ref;
  for (double& v : edited[edited.block(1).w_in].data()) v *= 2.0;
  const auto dist = weight_block_distance(ref, edited);
  std::size_t nonzero = 0;
  double value = 0.0;
  for (double d : dist) {
    if (d != 0.0) {
      ++nonzero;
      value = d;
    }
  }
  CHECK(nonzero == 1);
  // One tensor of the block's sixteen moved by exactly its own norm.
  CHECK(value == doctest::Approx(1.0 / 16.0).epsilon(1e-12));
}

TEST_CASE("localization score") {
  const std::vector<std::size_t> toxic{1, 3};
  const LocalizationScore flat = localization_score(map_of({{0.2, 0.2, 0.2, 0.2}, {0.2, 0.2, 0.2, 0.2}}), toxic);
  CHECK(flat.ratio == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_FALSE(flat.infinite);

  const LocalizationScore only = localization_score(map_of({{0, 0, 0, 0}, {0, 0.5, 0, 0.7}}), toxic);
  CHECK(only.infinite);
  CHECK(std::isinf(only.ratio));
  CHECK(only.numerator == doctest::Approx(0.6).epsilon(1e-12));

  // Only the deep quarter of the layer axis counts.
  const LocalizationScore deep =
      localization_score(map_of({{9, 9, 9, 9}, {9, 9, 9, 9}, {9, 9, 9, 9}, {0.1, 0.4, 0.1, 0.4}}), toxic);
  CHECK(deep.ratio == doctest::Approx(4.0).epsilon(1e-12));

  const std::vector<DriftMap> maps{map_of({{0.1, 0.3}}), map_of({{0.3, 0.5}})};
  const std::vector<std::vector<std::size_t>> pos{{1}, {1}};
  CHECK(localization_score(maps, pos).ratio == doctest::Approx(2.0).epsilon(1e-12));

  CHECK_THROWS_AS(localization_score(map_of({{1, 1}}), std::vector<std::size_t>{}), Error);
  CHECK_THROWS_AS(localization_score(map_of({{1, 1}}), std::vector<std::size_t>{5}), Error);
}

TEST_CASE("smoothing") {
  const std::vector<double> flat(50, 0.37);
  for (int w : {1, 5, 20}) CHECK(testing::max_abs_diff(smooth(flat, w), flat) < 1e-15);
  const std::vector<double> y{0, 1, 2, 3, 10, 5, 6};
  const auto s = smooth(y, 4);
  REQUIRE(s.size() == y.size());
  CHECK(s.front() == 0.0);
  CHECK(s.back() == 6.0);
  CHECK(s[1] == doctest::Approx(1.0));
  CHECK(s[3] == doctest::Approx((1 + 2 + 3 + 10 + 5) / 5.0));
}

TEST_CASE("logistic probe") {
  Rng rng(9);
  Matrix x, xh;
  std::vector<int> y, yh;
  for (int i = 0; i < 400; ++i) {
    const int label = i % 2;
    std::vector<double> v(6);
    for (double& e : v) e = 0.3 * rng.normal();
    v[0] += label ? 1.0 : -1.0;
    (i < 300 ? x : xh).push_back(v);
    (i < 300 ? y : yh).push_back(label);
  }
  const LogisticFit fit = fit_logistic(x, y);
  CHECK(std::abs(fit.w[0]) / diff::norm2(fit.w) >= 0.99);
  CHECK(logistic_accuracy(fit, xh, yh) >= 0.95);
  CHECK(fit_logistic(x, y).w == fit.w);

  std::vector<int> shuffled = y, shuffled_h = yh;
  rng.shuffle(shuffled);
  rng.shuffle(shuffled_h);
  const double acc = logistic_accuracy(fit_logistic(x, shuffled), xh, shuffled_h);
  CHECK(acc >= 0.4);
  CHECK(acc <= 0.6);

  const std::vector<int> ones(x.size(), 1);
  try {
    fit_logistic(x, ones);
    FAIL("expected DegenerateClasses");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateClasses);
  }
}

TEST_CASE("alignment curves") {
  const auto c = tiny_config();
  const auto ref = lively_params(c, 1);
  const auto edited = lively_params(c, 2);
  const auto dir = random_direction(c.d_model, 3);
  const auto seqs = sequences(3);

  const auto same = neuron_alignment_curve(ref, ref, dir, seqs, 4, 20, 0);
  REQUIRE(same.size() == 3);
  for (const auto& curve : same) {
    CHECK(curve.window == 20);
    CHECK(curve.neurons.size() == 4);
    for (double v : curve.y) CHECK(v == 0.0);
    CHECK(std::is_sorted(curve.x.begin(), curve.x.end()));
  }
  std::set<int> seen;
  for (const auto& curve : neuron_alignment_curve(ref, edited, dir, seqs, 8, 4, 1)) {
    for (int n : curve.neurons) CHECK(seen.insert(n).second);
  }
  const auto a = neuron_alignment_curve(ref, edited, dir, seqs, 8, 4, 1);
  const auto b = neuron_alignment_curve(ref, edited, dir, seqs, 8, 4, 1);
  for (std::size_t g = 0; g < a.size(); ++g) CHECK(a[g].neurons == b[g].neurons);

  const auto cos = value_alignment(ref, dir.w);
  CHECK(cos.size() == static_cast<std::size_t>(c.n_layers * c.d_mlp));
  CHECK(neuron_ref(c, c.d_mlp + 3).layer == 1);
  CHECK(neuron_ref(c, c.d_mlp + 3).index == 3);
  try {
    neuron_alignment_curve(ref, edited, dir, seqs, 11, 20, 0);
    FAIL("expected KTooLarge");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::KTooLarge);
  }
}

TEST_CASE("dimension drift and key-value report") {
  const auto c = tiny_config();
  const auto ref = lively_params(c, 1);
  const auto dir = random_direction(c.d_model, 3);
  const auto seqs = sequences(2);
  for (auto channel : {DimensionChannel::MlpContribution, DimensionChannel::KeyActivation}) {
    const auto d = dimension_drift_heatmap(ref, ref, seqs.front(), dir, channel, 3, 3);
    CHECK(all_zero(d.toxic));
    CHECK(all_zero(d.nontoxic));
    for (std::size_t l = 0; l < d.toxic_dims.size(); ++l) {
      CHECK(d.toxic_dims[l].size() == 3);
      for (int n : d.toxic_dims[l]) {
        CHECK(std::find(d.nontoxic_dims[l].begin(), d.nontoxic_dims[l].end(), n) == d.nontoxic_dims[l].end());
      }
    }
  }

  const auto base = keyvalue_cosine_report(ref, ref, dir, 5, seqs);
  CHECK(base.neurons.size() == 5);
  CHECK(base.value_cosine.size() == 5);
  for (double v : base.value_cosine) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  for (double v : base.key_cosine) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::is_sorted(base.alignment.rbegin(), base.alignment.rend()));

  auto flipped = ref;
  const NeuronRef n = neuron_ref(c, base.neurons[0]);
  for (double& v : flipped[flipped.block(n.layer).w_out].row(static_cast<std::size_t>(n.index))) v = -v;
  const auto after = keyvalue_cosine_report(ref, flipped, dir, 5, seqs);
  CHECK(after.neurons == base.neurons);
  CHECK(after.value_cosine[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(after.value_cosine[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("toxic direction on a small trained-free model is deterministic") {
  const auto c = tiny_config();
  const auto ref = lively_params(c, 1);
  corpus::GenConfig g;
  g.n_triples = 60;
  g.held_out_fraction = 0.25;
  const auto data = corpus::synth_pair_corpus(corpus::build_vocab(), g);
  const auto vocab = corpus::build_vocab();
  const auto a = fit_toxic_direction(ref, data, vocab, c.probe_layer);
  const auto b = fit_toxic_direction(ref, data, vocab, c.probe_layer);
  CHECK(a.w == b.w);
  CHECK(diff::norm2(a.w) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(a.train_accuracy >= 0.5);
  CHECK_THROWS_AS(fit_toxic_direction(ref, data, vocab, c.n_layers + 1), Error);

  const auto p = domain_probe(model::ModelView(ref), data, c.probe_layer);
  CHECK(p.n_train > p.n_held_out);
  CHECK(p.held_out_accuracy >= 0.0);
}
