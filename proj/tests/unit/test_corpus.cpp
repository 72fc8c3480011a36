#include <doctest.h>

#include <algorithm>
#include <set>

#include "repolab/corpus/dataset_io.hpp"
#include "repolab/corpus/synth.hpp"
#include "repolab/util/error.hpp"

using namespace repolab;
using namespace repolab::corpus;

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

}  // namespace

TEST_CASE("default vocabulary layout") {
  const Vocabulary v = build_vocab();
  CHECK(v.size() == 64);
  CHECK(v.benign_ids.size() == 48);
  CHECK(v.toxic_ids.size() == 12);
  int special = 0;
  for (int id = 0; id < v.size(); ++id) special += v.is_special(id) ? 1 : 0;
  CHECK(special == 4);
  for (int b : v.benign_ids) CHECK(std::find(v.toxic_ids.begin(), v.toxic_ids.end(), b) == v.toxic_ids.end());
  CHECK(v.class_of(v.pad) == TokenClass::Special);
  CHECK(v.class_of(v.bos) == TokenClass::Special);
  CHECK(v.class_of(v.eos) == TokenClass::Special);
  CHECK(v.hash() == build_vocab().hash());
  CHECK(v.tokens == build_vocab().tokens);
}

TEST_CASE("degenerate vocabulary specs") {
  const Vocabulary v = build_vocab({0, 12, 64});
  CHECK(v.benign_ids.empty());
  CHECK_FALSE(v.warnings.empty());
  CHECK(kind_of([] { build_vocab({60, 12, 64}); }) == ErrorKind::SpecTooLarge);
}

TEST_CASE("toxicity oracle") {
  const Vocabulary v = build_vocab();
  const int b = v.benign_ids[0], t = v.toxic_ids[0];
  const std::vector<int> benign(8, b), toxic(8, t);
  CHECK(toxicity_oracle(benign, v) == 0.0);
  CHECK(toxicity_oracle(toxic, v) == 1.0);
  const std::vector<int> mixed{b, t, b, b, t, b, b, b, v.eos};
  CHECK(toxicity_oracle(mixed, v) == 0.25);
  CHECK(toxicity_oracle(std::vector<int>{}, v) == 0.0);
  CHECK(kind_of([&] { toxicity_oracle(std::vector<int>{99}, v); }) == ErrorKind::TokenOutOfRange);
}

TEST_CASE("pair corpus invariants and determinism") {
  const Vocabulary v = build_vocab();
  GenConfig g;
  const Dataset a = synth_pair_corpus(v, g);
  CHECK(a.triples.size() == 2048);
  CHECK(serialize_dataset(a, v) == serialize_dataset(synth_pair_corpus(v, g), v));
  std::size_t held = 0;
  for (const auto& t : a.triples) {
    CHECK(toxicity_oracle(t.retain, v) == 0.0);
    CHECK(toxicity_oracle(t.forget, v) > 0.0);
    CHECK(t.retain.size() == t.forget.size());
    CHECK(t.retain_sequence().size() <= 64);
    // Paired control: continuations agree wherever x_f is benign.
    for (std::size_t i = 0; i < t.retain.size(); ++i) {
      if (!v.is_toxic(t.forget[i])) CHECK(t.forget[i] == t.retain[i]);
    }
    held += t.split == Split::HeldOut ? 1 : 0;
  }
  CHECK(held == doctest::Approx(204.8).epsilon(0.05));
  const auto train_view = a.view(Split::Train);
  const std::set<const PairedTriple*> train(train_view.begin(), train_view.end());
  for (const auto* t : a.view(Split::HeldOut)) CHECK(train.count(t) == 0);
  CHECK(train.size() + a.view(Split::HeldOut).size() == a.triples.size());
}

TEST_CASE("toxic density fixes the toxic count") {
  const Vocabulary v = build_vocab();
  GenConfig g;
  g.n_triples = 200;
  g.toxic_density = 0.25;
  for (const auto& t : synth_pair_corpus(v, g).triples) {
    CHECK(std::count_if(t.forget.begin(), t.forget.end(), [&](int id) { return v.is_toxic(id); }) == 2);
  }
  CHECK(toxic_slots(8, 0.25).size() == 2);
  CHECK(toxic_slots(8, 0.5).size() == 4);
  g.toxic_density = 0.01;
  CHECK(kind_of([&] { synth_pair_corpus(v, g); }) == ErrorKind::InfeasibleTemplate);
}

TEST_CASE("ood prompts use a family the pair corpus never emits") {
  const Vocabulary v = build_vocab();
  const auto layout = TemplateLayout::from(v);
  const auto ood = synth_ood_prompts(v, {});
  CHECK(ood.size() == 256);
  std::set<int> ood_families, pair_families;
  for (const auto& p : ood) {
    ood_families.insert(layout.family_of(p));
    CHECK(p.size() >= 6);
    CHECK(p.size() <= 9);
  }
  for (const auto& t : synth_pair_corpus(v, {}).triples) pair_families.insert(layout.family_of(t.prompt));
  for (int f : ood_families) CHECK(pair_families.count(f) == 0);
  OodConfig other;
  other.seed = 12;
  auto a = ood, b = synth_ood_prompts(v, other);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a != b);
}

TEST_CASE("utility corpus is calm and benign") {
  const Vocabulary v = build_vocab();
  const auto layout = TemplateLayout::from(v);
  const auto pairs = synth_neutral_corpus(v, {});
  CHECK(pairs.size() == 256);
  for (const auto& p : pairs) {
    CHECK_FALSE(layout.provocative(p.prompt));
    CHECK(toxicity_oracle(p.continuation, v) == 0.0);
  }
}

TEST_CASE("dataset round trip and error contracts") {
  const Vocabulary v = build_vocab();
  GenConfig g;
  g.n_triples = 50;
  const Dataset d = synth_pair_corpus(v, g);
  const std::string text = serialize_dataset(d, v);
  CHECK(parse_dataset(text, v) == d);

  // Drop the tail of the third record.
  std::size_t cut = 0;
  for (int i = 0; i < 3; ++i) cut = text.find('\n', cut) + 1;
  const std::string truncated = text.substr(0, cut + 20);
  try {
    parse_dataset(truncated, v);
    FAIL("expected ParseError");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ParseError);
    CHECK(std::string(e.what()).find("line 4") != std::string::npos);
  }

  Dataset bad = d;
  bad.triples[1].retain[0] = v.toxic_ids[0];
  CHECK(kind_of([&] { parse_dataset(serialize_dataset(bad, v), v); }) == ErrorKind::InvariantViolation);
  CHECK(kind_of([&] { parse_dataset(text, build_vocab({40, 12, 64})); }) == ErrorKind::VocabMismatch);
}
