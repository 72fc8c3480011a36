#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "repolab/diff/gradcheck.hpp"
#include "repolab/objectives/trainer.hpp"
#include "repolab/util/error.hpp"

using namespace repolab;
using namespace repolab::objectives;
using diff::Tensor;
using testing::lively_params;
using testing::tiny_config;

namespace {

std::vector<corpus::PairedTriple> small_batch(int n, std::uint64_t seed = 7) {
  corpus::GenConfig g;
  g.n_triples = 32;
  g.seed = seed;
  auto d = corpus::synth_pair_corpus(corpus::build_vocab(), g);
  d.triples.resize(static_cast<std::size_t>(n));
  return d.triples;
}

// Probe-layer states of one sequence.
std::vector<std::vector<double>> states_of(const model::TransformerParams& p, const std::vector<int>& tokens) {
  model::TraceSpec spec;
  spec.residual = true;
  const auto r = model::forward(model::ModelView(p), tokens, spec);
  const Tensor& h = (*r.trace.residual)[static_cast<std::size_t>(p.config.probe_layer)];
  std::vector<std::vector<double>> out;
  for (std::size_t t = 0; t < h.rows(); ++t) out.emplace_back(h.row(t).begin(), h.row(t).end());
  return out;
}

// Direct log-probability of tokens[from..] under the model, summed.
double sequence_logprob(const model::TransformerParams& p, const std::vector<int>& tokens, std::size_t from,
                        double lo = -30.0, double hi = 30.0) {
  const Tensor logits = model::forward(model::ModelView(p), tokens).logits;
  double total = 0.0;
  for (std::size_t t = from; t < tokens.size(); ++t) {
    const auto row = logits.row(t - 1);
    double m = -1e300;
    std::vector<double> z(row.size());
    for (std::size_t k = 0; k < row.size(); ++k) {
      z[k] = std::clamp(row[k], lo, hi);
      m = std::max(m, z[k]);
    }
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    total += z[static_cast<std::size_t>(tokens[t])] - m - std::log(s);
  }
  return total;
}

double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

template <class F>
double scalar(F&& build) {
  Graph g;
  return build(g).value().item();
}

double bce_of(double q, double d) { return -(d * std::log(q) + (1 - d) * std::log(1 - q)); }

}  // namespace

TEST_CASE("discriminator forward") {
  auto disc = init_discriminator(8, 2, 16, 3);
  for (auto& t : disc.tensors) t.fill(0.0);
  const std::vector<double> h(8, 1.7);
  CHECK(discriminator_probability(disc, h) == 0.5);

  const auto linear = init_discriminator(8, 1, 16, 3);
  const double q = discriminator_probability(linear, testing::random_tensor({8}, 4).data());
  CHECK(q > 0.0);
  CHECK(q < 1.0);
  CHECK_THROWS_AS(init_discriminator(8, 3, 16, 3), Error);

  // BCE(q, 1) gradient into h flips exactly under the reversal node.
  const auto deep = init_discriminator(8, 2, 16, 5);
  const Tensor x = testing::random_tensor({2, 8}, 6);
  Tensor plain, reversed;
  for (bool through : {false, true}) {
    Graph g;
    Var hv = g.leaf(x);
    const DiscVars dv = bind_discriminator(g, deep, false);
    const std::vector<double> ones(2, 1.0);
    g.backward(diff::mean(diff::bce(discriminator_forward(dv, hv, through), ones)));
    (through ? reversed : plain) = g.grad(hv);
  }
  for (std::size_t i = 0; i < plain.data().size(); ++i) CHECK(reversed.data()[i] == -plain.data()[i]);
}

TEST_CASE("retain loss") {
  const auto c = tiny_config();
  const auto ref = lively_params(c, 1);
  const auto pol = lively_params(c, 2);
  const auto batch = small_batch(3);
  std::vector<std::vector<int>> seqs;
  for (const auto& t : batch) seqs.push_back(t.retain_sequence());

  auto loss = [&](const model::TransformerParams& p, std::span<const std::vector<int>> s) {
    return scalar([&](Graph& g) {
      const auto pv = model::bind_params(g, p, false);
      return retain_loss(g, {p.config, pv}, ref, s);
    });
  };
  CHECK(loss(ref, seqs) == doctest::Approx(0.0).scale(1).epsilon(1e-12));

  // Direct-summation oracle over softmax probabilities.
  double oracle = 0.0;
  for (const auto& s : seqs) {
    const Tensor lp = model::forward(model::ModelView(pol), s).logits;
    const Tensor lr = model::forward(model::ModelView(ref), s).logits;
    double per = 0.0;
    for (std::size_t t = 0; t < s.size(); ++t) {
      auto softmax = [](std::span<const double> z) {
        const double m = *std::max_element(z.begin(), z.end());
        std::vector<double> p(z.size());
        double sum = 0.0;
        for (std::size_t k = 0; k < z.size(); ++k) sum += p[k] = std::exp(z[k] - m);
        for (double& v : p) v /= sum;
        return p;
      };
      const auto pr = softmax(lr.row(t)), pp = softmax(lp.row(t));
      for (std::size_t k = 0; k < pr.size(); ++k) per += pr[k] * std::log(pr[k] / pp[k]);
    }
    oracle += per / static_cast<double>(s.size());
  }
  oracle /= static_cast<double>(seqs.size());
  CHECK(loss(pol, seqs) == doctest::Approx(oracle).epsilon(1e-10));

  auto doubled = seqs;
  doubled.insert(doubled.end(), seqs.begin(), seqs.end());
  CHECK(loss(pol, doubled) == doctest::Approx(loss(pol, seqs)).epsilon(1e-12));

  const std::vector<std::vector<int>> none;
  try {
    loss(pol, none);
    FAIL("expected EmptyBatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::EmptyBatch);
  }
}

TEST_CASE("domain loss") {
  const auto c = tiny_config();
  const auto p = lively_params(c, 3);
  const auto labeled = domain_batch(small_batch(3));
  auto zero = init_discriminator(c.d_model, 2, 16, 1);
  for (auto& t : zero.tensors) t.fill(0.0);

  auto value = [&](const DiscriminatorParams& disc, DomainScope scope, int segment) {
    return scalar([&](Graph& g) {
      const auto pv = model::bind_params(g, p, false);
      const auto dv = bind_discriminator(g, disc, false);
      return segment == 0 ? domain_loss(g, {c, pv}, dv, labeled, scope)
                          : sure_segment_domain_loss(g, {c, pv}, dv, labeled, segment, scope);
    });
  };
  CHECK(value(zero, DomainScope::FullSequence, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(value(zero, DomainScope::ContinuationOnly, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  const auto disc = init_discriminator(c.d_model, 2, 16, 9);
  for (auto scope : {DomainScope::FullSequence, DomainScope::ContinuationOnly}) {
    CHECK(value(disc, scope, 1) == doctest::Approx(value(disc, scope, 0)).epsilon(1e-12));
  }

  // Oracle: per-token BCE averaged over the token range, then over sequences.
  double full = 0.0, cont = 0.0, pooled = 0.0;
  for (const auto& s : labeled) {
    const auto h = states_of(p, s.tokens);
    double a = 0.0, b = 0.0;
    std::vector<double> mean(h.front().size(), 0.0);
    for (std::size_t t = 0; t < h.size(); ++t) {
      const double l = bce_of(discriminator_probability(disc, h[t]), s.label);
      a += l;
      if (t >= s.prompt_len) b += l;
      for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += h[t][k] / static_cast<double>(h.size());
    }
    full += a / static_cast<double>(h.size());
    cont += b / static_cast<double>(h.size() - s.prompt_len);
    pooled += bce_of(discriminator_probability(disc, mean), s.label);
  }
  const double n = static_cast<double>(labeled.size());
  CHECK(value(disc, DomainScope::FullSequence, 0) == doctest::Approx(full / n).epsilon(1e-9));
  CHECK(value(disc, DomainScope::ContinuationOnly, 0) == doctest::Approx(cont / n).epsilon(1e-9));
  // A window at least as long as the sequence pools it into a single vector.
  CHECK(value(disc, DomainScope::FullSequence, 64) == doctest::Approx(pooled / n).epsilon(1e-9));
}

TEST_CASE("repo gradient equals the weighted per-term gradients") {
  const auto c = tiny_config();
  const auto ref = lively_params(c, 1);
  const auto pol = lively_params(c, 2);
  const auto batch = small_batch(2);
  const auto disc = init_discriminator(c.d_model, 2, 16, 4);
  const auto labeled = domain_batch(batch);
  std::vector<std::vector<int>> retain_seqs;
  for (const auto& t : batch) retain_seqs.push_back(t.retain_sequence());

  std::vector<Tensor> g_ret, g_dom, g_disc;
  {
    Graph g;
    const auto pv = model::bind_params(g, pol, true);
    g.backward(retain_loss(g, {c, pv}, ref, retain_seqs));
    for (const Var& v : pv.vars) g_ret.push_back(g.grad(v));
  }
  {
    Graph g;
    const auto pv = model::bind_params(g, pol, true);
    const auto dv = bind_discriminator(g, disc, true);
    g.backward(domain_loss(g, {c, pv}, dv, labeled, DomainScope::ContinuationOnly));
    for (const Var& v : pv.vars) g_dom.push_back(g.grad(v));
    for (const Var& v : dv.vars) g_disc.push_back(g.grad(v));
  }

  for (double alpha : {0.0, 0.2, 0.7, 1.0}) {
    CAPTURE(alpha);
    RepoConfig cfg;
    cfg.alpha = alpha;
    cfg.scope = DomainScope::ContinuationOnly;
    const RepoGradients r = repo_gradients(pol, disc, ref, batch, cfg);
    double worst = 0.0;
    for (std::size_t i = 0; i < pol.tensors.size(); ++i) {
      const bool head = pol.tensors[i].group == model::ParamGroup::Head;
      for (std::size_t k = 0; k < g_ret[i].data().size(); ++k) {
        const double expect =
            alpha * g_ret[i].data()[k] - (head ? 0.0 : (1.0 - alpha) * g_dom[i].data()[k]);
        worst = std::max(worst, std::abs(r.params[i].data()[k] - expect));
      }
    }
    CHECK(worst < 1e-10);
    for (std::size_t i = 0; i < disc.tensors.size(); ++i) {
      CHECK(testing::max_abs_diff(r.disc[i].data(), g_disc[i].data()) < 1e-12);
    }
  }

  // At the reference the anchor is flat, so only the reversed domain term moves theta_f.
  RepoConfig cfg;
  cfg.scope = DomainScope::ContinuationOnly;
  const RepoGradients at_ref = repo_gradients(ref, disc, ref, batch, cfg);
  CHECK(at_ref.retain == doctest::Approx(0.0).scale(1).epsilon(1e-12));
  const auto& head_grad = at_ref.params[ref.unembed_weight()].data();
  CHECK(*std::max_element(head_grad.begin(), head_grad.end()) < 1e-12);
  CHECK(*std::min_element(head_grad.begin(), head_grad.end()) > -1e-12);
}

TEST_CASE("repo step leaves the reference untouched and updates the discriminator at alpha 1") {
  const auto c = tiny_config();
  const auto ref = lively_params(c, 1);
  const auto snap = model::snapshot(ref);
  RepoConfig cfg;
  cfg.alpha = 1.0;
  cfg.disc_steps = 3;
  TrainState state = make_train_state(ref, snap, cfg, OptimizerConfig{}, 2);
  const auto disc_before = state.disc;
  const auto batch = small_batch(2);
  const auto r = repo_step(state, batch, cfg);
  CHECK(state.step == 1);
  CHECK(snap.params().identical(ref));
  CHECK_FALSE(state.disc.identical(disc_before));
  CHECK(r.retain == doctest::Approx(0.0).scale(1).epsilon(1e-12));
  // With alpha 1 and a flat anchor the model receives no gradient at all.
  CHECK(r.grad_norm == doctest::Approx(0.0).scale(1).epsilon(1e-12));
}

TEST_CASE("cross-entropy anchors") {
  auto c = tiny_config();
  auto p = model::init_params(c, 1);
  for (auto& t : p.tensors) t.value.fill(0.0);
  for (auto& t : p.tensors) {
    if (t.name.find("gain") != std::string::npos) t.value.fill(1.0);
  }
  const auto batch = small_batch(3);
  std::vector<std::vector<int>> seqs;
  for (const auto& t : batch) seqs.push_back(t.retain_sequence());
  const double uniform = scalar([&](Graph& g) {
    const auto pv = model::bind_params(g, p, false);
    return ce_retain_loss(g, {c, pv}, seqs);
  });
  CHECK(uniform == doctest::Approx(std::log(64.0)).epsilon(1e-12));

  // A bias that puts all mass on one token makes that token free.
  auto sure = p;
  sure[sure.unembed_bias()].data()[5] = 1e4;
  const std::vector<ScoredSequence> fives{{{1, 5, 5, 5, 5}, 1}};
  const double zero = scalar([&](Graph& g) {
    const auto pv = model::bind_params(g, sure, false);
    return ce_loss(g, {c, pv}, fives);
  });
  CHECK(zero == doctest::Approx(0.0).scale(1).epsilon(1e-12));
}

TEST_CASE("dpo and npo closed forms") {
  const auto c = tiny_config();
  const auto ref = lively_params(c, 1);
  const auto pol = lively_params(c, 2);
  const auto batch = small_batch(3);

  auto dpo = [&](const model::TransformerParams& p, double beta) {
    return scalar([&](Graph& g) {
      const auto pv = model::bind_params(g, p, false);
      return dpo_loss(g, {c, pv}, ref, batch, beta);
    });
  };
  CHECK(dpo(ref, 0.5) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(dpo(pol, 1e-9) == doctest::Approx(std::log(2.0)).epsilon(1e-8));

  // Enumeration oracle for the sequence log-probabilities.
  double expect = 0.0;
  std::vector<double> delta_f;
  for (const auto& t : batch) {
    const std::size_t from = t.prompt.size();
    const double dr = sequence_logprob(pol, t.retain_sequence(), from) - sequence_logprob(ref, t.retain_sequence(), from);
    const double df = sequence_logprob(pol, t.forget_sequence(), from) - sequence_logprob(ref, t.forget_sequence(), from);
    expect += -log_sigmoid(0.5 * (dr - df));
    delta_f.push_back(df);
  }
  CHECK(dpo(pol, 0.5) == doctest::Approx(expect / 3.0).epsilon(1e-10));

  auto npo = [&](const model::TransformerParams& p, double beta, double alpha) {
    Graph g;
    const auto pv = model::bind_params(g, p, false);
    const LossTerms t = npo_loss(g, {c, pv}, ref, batch, beta, alpha);
    return std::pair{t.part("forget").value().item(), t.total.value().item()};
  };
  for (double beta : {0.1, 0.5, 2.0}) {
    CHECK(npo(ref, beta, 0.3).first == doctest::Approx(2.0 / beta * std::log(2.0)).epsilon(1e-12));
  }
  double forget_oracle = 0.0;
  for (double df : delta_f) forget_oracle += -(2.0 / 0.5) * log_sigmoid(-0.5 * df);
  CHECK(npo(pol, 0.5, 0.3).first == doctest::Approx(forget_oracle / 3.0).epsilon(1e-10));

  std::vector<std::vector<int>> seqs;
  for (const auto& t : batch) seqs.push_back(t.retain_sequence());
  const double ce = scalar([&](Graph& g) {
    const auto pv = model::bind_params(g, pol, false);
    return ce_retain_loss(g, {c, pv}, seqs);
  });
  CHECK(npo(pol, 0.5, 0.0).second == doctest::Approx(ce).epsilon(1e-12));

  // Raising the policy's probability of the forget continuation raises the forget term.
  auto boosted = pol;
  for (const auto& t : batch) {
    for (int id : t.forget) boosted[boosted.unembed_bias()].data()[static_cast<std::size_t>(id)] += 0.5;
  }
  CHECK(npo(boosted, 0.5, 0.3).first > npo(pol, 0.5, 0.3).first);
}

TEST_CASE("rmu and circuit-breaker terms") {
  const auto c = tiny_config();
  const auto ref = lively_params(c, 1);
  const auto pol = lively_params(c, 2);
  const auto batch = small_batch(2);
  for (double norm : {500.0, 8.0}) {
    const auto u = control_vector(64, norm, 5);
    CHECK(diff::norm2(u) == doctest::Approx(norm).epsilon(1e-14));
  }
  const auto u = control_vector(c.d_model, 8.0, 5);

  auto rmu = [&](const model::TransformerParams& p) {
    Graph g;
    const auto pv = model::bind_params(g, p, false);
    const LossTerms t = rmu_loss(g, {c, pv}, ref, batch, u, 0.95);
    return std::pair{t.part("forget").value().item(), t.part("retain").value().item()};
  };
  CHECK(rmu(ref).second == doctest::Approx(0.0).scale(1).epsilon(1e-12));
  double oracle = 0.0;
  std::size_t count = 0;
  for (const auto& t : batch) {
    const auto h = states_of(pol, t.forget_sequence());
    for (std::size_t p = t.prompt.size(); p < h.size(); ++p, ++count) {
      double s = 0.0;
      for (std::size_t k = 0; k < u.size(); ++k) s += (h[p][k] - u[k]) * (h[p][k] - u[k]);
      oracle += s / static_cast<double>(u.size());
    }
  }
  CHECK(rmu(pol).first == doctest::Approx(oracle / static_cast<double>(count)).epsilon(1e-10));

  Graph g;
  const auto pv = model::bind_params(g, ref, false);
  const LossTerms cb = cb_loss(g, {c, pv}, ref, batch, 100.0);
  CHECK(cb.part("reroute").value().item() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cb.part("retain").value().item() == doctest::Approx(0.0).scale(1).epsilon(1e-12));
}

TEST_CASE("objective gradients pass finite differences") {
  const auto c = tiny_config();
  const auto ref = lively_params(c, 1);
  const auto pol = lively_params(c, 2);
  const auto batch = small_batch(2);
  const auto labeled = domain_batch(batch);
  const auto disc = init_discriminator(c.d_model, 2, 8, 3);
  const auto u = control_vector(c.d_model, 8.0, 5);
  std::vector<std::vector<int>> seqs;
  for (const auto& t : batch) seqs.push_back(t.retain_sequence());

  using Build = std::function<Var(Graph&, const PolicyRef&, const DiscVars&)>;
  const std::vector<std::pair<const char*, Build>> losses{
      {"retain", [&](Graph& g, const PolicyRef& p, const DiscVars&) { return retain_loss(g, p, ref, seqs); }},
      {"domain", [&](Graph& g, const PolicyRef& p, const DiscVars& d) { return domain_loss(g, p, d, labeled); }},
      {"sure-segment",
       [&](Graph& g, const PolicyRef& p, const DiscVars& d) { return sure_segment_domain_loss(g, p, d, labeled, 3); }},
      {"ce", [&](Graph& g, const PolicyRef& p, const DiscVars&) { return ce_retain_loss(g, p, seqs); }},
      {"dpo", [&](Graph& g, const PolicyRef& p, const DiscVars&) { return dpo_loss(g, p, ref, batch, 0.5); }},
      {"npo", [&](Graph& g, const PolicyRef& p, const DiscVars&) { return npo_loss(g, p, ref, batch, 0.5, 0.3).total; }},
      {"rmu", [&](Graph& g, const PolicyRef& p, const DiscVars&) { return rmu_loss(g, p, ref, batch, u, 0.95).total; }},
      {"cb", [&](Graph& g, const PolicyRef& p, const DiscVars&) { return cb_loss(g, p, ref, batch, 2.0).total; }},
  };
  // One extractor tensor and the head.
  const std::vector<std::size_t> slots{pol.block(0).wq, pol.unembed_bias()};
  for (const auto& [name, build] : losses) {
    for (std::size_t slot : slots) {
      CAPTURE(name);
      CAPTURE(slot);
      const double err = diff::grad_check(
          [&](Graph& g, Var x) {
            auto pv = model::bind_params(g, pol, false);
            pv.vars[slot] = x;
            const auto dv = bind_discriminator(g, disc, false);
            return build(g, {c, pv}, dv);
          },
          pol[slot]);
      CHECK(err <= 1e-5);
    }
  }
}

TEST_CASE("training determinism and zero epochs") {
  auto c = tiny_config();
  const auto init = lively_params(c, 1);
  corpus::GenConfig gen;
  gen.n_triples = 12;
  const auto data = corpus::synth_pair_corpus(corpus::build_vocab(), gen);
  MethodConfig m;
  m.repo.lr = 1e-3;
  m.repo.disc_lr = 1e-2;
  Schedule s;
  s.batch_size = 4;
  s.epochs = 0;
  CHECK(train(m, init, init, data, s).params.identical(init));
  s.epochs = 1;
  for (Method method : {Method::Repo, Method::Dpo, Method::Npo, Method::Rmu, Method::Cb}) {
    CAPTURE(to_string(method));
    m.method = method;
    const auto a = train(m, init, init, data, s);
    const auto b = train(m, init, init, data, s);
    CHECK(a.params.identical(b.params));
    CHECK_FALSE(a.log.empty());
  }
  CHECK(parse_method("sure-segment") == Method::SureSegment);
  CHECK_THROWS_AS(parse_method("tvi"), Error);
}
