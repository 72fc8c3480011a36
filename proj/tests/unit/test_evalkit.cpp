#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "repolab/evalkit/metrics.hpp"
#include "repolab/evalkit/reports.hpp"
#include "repolab/objectives/losses.hpp"
#include "repolab/util/error.hpp"

using namespace repolab;
using namespace repolab::evalkit;
using testing::lively_params;
using testing::tiny_config;

namespace {

// All-zero weights with unit gains: logits are exactly zero everywhere.
model::TransformerParams uniform_model() {
  auto p = model::init_params(tiny_config(), 1);
  for (auto& t : p.tensors) t.value.fill(t.name.find("gain") != std::string::npos ? 1.0 : 0.0);
  return p;
}

std::vector<corpus::TextPair> utility(int n) {
  corpus::NeutralConfig nc;
  nc.n_pairs = n;
  return corpus::synth_neutral_corpus(corpus::build_vocab(), nc);
}

}  // namespace

TEST_CASE("token f1 arithmetic") {
  const std::vector<int> ab{1, 2}, bc{2, 3}, cd{3, 4};
  const TokenScores s = token_f1(ab, bc);
  CHECK(s.precision == 0.5);
  CHECK(s.recall == 0.5);
  CHECK(s.f1 == 0.5);
  CHECK(token_f1(ab, ab).f1 == 1.0);
  CHECK(token_f1(ab, cd).f1 == 0.0);
  CHECK(token_f1({}, ab).f1 == 0.0);
  // Repetition is capped by the truth count.
  const std::vector<int> aaa{1, 1, 1}, a{1};
  CHECK(token_f1(aaa, a).precision == doctest::Approx(1.0 / 3.0));
  CHECK(token_f1(aaa, a).recall == 1.0);
}

TEST_CASE("token f1 is symmetric and bounded") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> x(1 + rng.index(8)), y(1 + rng.index(8));
    for (int& v : x) v = static_cast<int>(rng.index(6));
    for (int& v : y) v = static_cast<int>(rng.index(6));
    const double f = token_f1(x, y).f1;
    CHECK(f >= 0.0);
    CHECK(f <= 1.0);
    CHECK(f == doctest::Approx(token_f1(y, x).f1).epsilon(1e-15));
  }
}

TEST_CASE("perplexity anchors") {
  const auto corpus = utility(16);
  CHECK(perplexity(model::ModelView(uniform_model()), corpus) == doctest::Approx(64.0).epsilon(1e-12));

  const auto p = lively_params(tiny_config(), 4);
  std::vector<objectives::ScoredSequence> scored;
  for (const auto& pair : corpus) {
    std::vector<int> s = pair.prompt;
    s.insert(s.end(), pair.continuation.begin(), pair.continuation.end());
    scored.push_back({s, pair.prompt.size()});
  }
  diff::Graph g;
  const auto pv = model::bind_params(g, p, false);
  const double ce = objectives::ce_loss(g, {p.config, pv}, scored).value().item();
  CHECK(perplexity(model::ModelView(p), corpus) == doctest::Approx(std::exp(ce)).epsilon(1e-9));
  CHECK(continuation_nll(model::ModelView(p), corpus) == doctest::Approx(ce).epsilon(1e-12));

  // A head sure of token 9 on a corpus of 9s.
  auto sure = uniform_model();
  sure[sure.unembed_bias()].data()[9] = 1e4;
  const std::vector<corpus::TextPair> nines{{{1, 9}, {9, 9, 9}}};
  CHECK(perplexity(model::ModelView(sure), nines) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(f1(model::ModelView(sure), nines) == 1.0);
  CHECK_THROWS_AS(perplexity(model::ModelView(sure), {}), Error);
}

TEST_CASE("toxicity evaluation") {
  const auto vocab = corpus::build_vocab();
  const auto p = lively_params(tiny_config(), 5);
  corpus::GenConfig g;
  g.n_triples = 16;
  std::vector<std::vector<int>> prompts;
  for (const auto& t : corpus::synth_pair_corpus(vocab, g).triples) prompts.push_back(t.prompt);

  model::DecodeConfig suppress;
  suppress.suppress_tokens = vocab.toxic_ids;
  CHECK(toxicity_eval(model::ModelView(p), prompts, vocab, suppress).mean == 0.0);

  const auto one = std::vector<std::vector<int>>{prompts.front()};
  const auto out = model::generate(model::ModelView(p), prompts.front(), {});
  const std::vector<int> cont(out.begin() + static_cast<std::ptrdiff_t>(prompts.front().size()), out.end());
  CHECK(toxicity_eval(model::ModelView(p), one, vocab).mean == corpus::toxicity_oracle(cont, vocab));

  model::DecodeConfig sample;
  sample.mode = model::DecodeMode::Temperature;
  sample.seed = 4;
  CHECK(toxicity_eval(model::ModelView(p), prompts, vocab, sample).per_prompt ==
        toxicity_eval(model::ModelView(p), prompts, vocab, sample).per_prompt);
  CHECK(toxicity_eval(model::ModelView(p), prompts, vocab).per_prompt.size() == prompts.size());
  CHECK_THROWS_AS(toxicity_eval(model::ModelView(p), {}, vocab), Error);
}

TEST_CASE("reports, ratios and tradeoff points") {
  const auto vocab = corpus::build_vocab();
  const auto ref = lively_params(tiny_config(), 1);
  const auto edited = lively_params(tiny_config(), 2);
  const auto corpus = utility(8);
  std::vector<std::vector<int>> prompts;
  for (const auto& u : corpus) prompts.push_back(u.prompt);
  const EvalInputs in{"forget-prompts", &prompts, &corpus, &vocab, {}};

  const EvalReport r = evaluate(model::ModelView(ref), "reference", in);
  const EvalReport e = with_ratios(evaluate(model::ModelView(edited), "edited", in), r);
  CHECK(r.n_prompts == 8);
  CHECK(e.ppl_ratio == doctest::Approx(e.perplexity / r.perplexity));

  const ScatterData self = tradeoff_report({r}, {r});
  REQUIRE(self.points.size() == 1);
  CHECK(self.points[0].x == 1.0);
  CHECK(self.points[0].y == r.toxicity_mean);
  const ScatterData both = tradeoff_report({r, e, e}, {r}, TradeoffAxis::F1Ratio);
  CHECK(both.points.size() == 3);
  CHECK(both.points[1].method == "edited");
  CHECK(scatter_csv(both).rfind("method,x,y,eval-set\n", 0) == 0);

  EvalReport other = r;
  other.eval_set_id = "ood";
  try {
    tradeoff_report({other}, {r});
    FAIL("expected MissingReference");
  } catch (const Error& err) {
    CHECK(err.kind() == ErrorKind::MissingReference);
  }
  CHECK_THROWS_AS(with_ratios(other, r), Error);

  const std::string text = format_reports({r, e});
  const auto back = parse_reports(text);
  REQUIRE(back.size() == 2);
  CHECK(back[1].model_id == "edited");
  CHECK(back[1].perplexity == e.perplexity);
  CHECK(format_reports(back) == text);
  try {
    parse_reports(text + "{oops\n");
    FAIL("expected ParseError");
  } catch (const Error& err) {
    CHECK(err.kind() == ErrorKind::ParseError);
    CHECK(std::string(err.what()).find('3') != std::string::npos);
  }
}
