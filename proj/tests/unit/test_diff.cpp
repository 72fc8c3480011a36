#include <doctest.h>

#include <cmath>
#include <numbers>

#include "helpers.hpp"
#include "repolab/diff/gradcheck.hpp"
#include "repolab/diff/graph.hpp"
#include "repolab/util/error.hpp"

using namespace repolab;
using namespace repolab::diff;

TEST_CASE("grl is the identity forward and scales the gradient by -lambda") {
  Graph g;
  Var x = g.leaf(Tensor::vector({1.5, -2.0}));
  Var y = grl(x);
  CHECK(y.value().identical(x.value()));
  Var w = g.constant(Tensor::vector({3.0, -1.0}));
  g.backward(sum(mul(y, w)));
  CHECK(g.grad(x)[0] == -3.0);
  CHECK(g.grad(x)[1] == 1.0);

  Graph h;
  Var a = h.leaf(Tensor::vector({0.7}));
  h.backward(scale(grl(a, 0.5), 2.0));
  CHECK(h.grad(a)[0] == -1.0);
}

TEST_CASE("two grl nodes cancel") {
  const ScalarFn plain = [](Graph&, Var x) { return sum(tanh(x)); };
  const ScalarFn twice = [](Graph&, Var x) { return sum(tanh(grl(grl(x)))); };
  const Tensor x = testing::random_tensor({5}, 3);
  CHECK(analytic_grad(plain, x).identical(analytic_grad(twice, x)));
}

TEST_CASE("grl flips the gradient of the function it wraps") {
  const ScalarFn f = [](Graph&, Var x) { return sum(mul(sigmoid(x), x)); };
  const ScalarFn fr = [](Graph&, Var x) { return sum(mul(sigmoid(grl(x)), grl(x))); };
  const Tensor x = testing::random_tensor({6}, 4);
  const Tensor a = analytic_grad(f, x), b = analytic_grad(fr, x);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(b[i] == doctest::Approx(-a[i]).epsilon(1e-14));
}

TEST_CASE("backward of sum of squares") {
  Graph g;
  Var x = g.leaf(Tensor::vector({1, 2, 3}));
  g.backward(sum(mul(x, x)));
  CHECK(g.grad(x)[0] == 2.0);
  CHECK(g.grad(x)[1] == 4.0);
  CHECK(g.grad(x)[2] == 6.0);
}

TEST_CASE("constant seed leaves gradients at zero") {
  Graph g;
  Var x = g.leaf(Tensor::vector({1, 2}));
  Var c = g.constant(Tensor::scalar(4.0));
  g.backward(c);
  CHECK(g.grad(x)[0] == 0.0);
  CHECK(g.grad(x)[1] == 0.0);
}

TEST_CASE("non-scalar seed is rejected") {
  Graph g;
  Var x = g.leaf(Tensor::vector({1, 2}));
  try {
    g.backward(mul(x, x));
    FAIL("expected NonScalarSeed");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NonScalarSeed);
  }
}

TEST_CASE("kl gradient vanishes at the minimum") {
  const Tensor a = testing::random_tensor({3, 5}, 8);
  Graph g;
  Var p = g.constant(a);
  Var q = g.leaf(a);
  g.backward(sum(kl_from_logits(p, q)));
  for (double v : g.grad(q).data()) CHECK(std::abs(v) < 1e-15);
}

TEST_CASE("backward is deterministic") {
  const ScalarFn f = [](Graph& g, Var x) {
    Var w = g.constant(testing::random_tensor({4, 3}, 2));
    return sum(log_softmax(matmul(x, w)));
  };
  const Tensor x = testing::random_tensor({2, 4}, 1);
  CHECK(analytic_grad(f, x).identical(analytic_grad(f, x)));
}

TEST_CASE("grad_check on sum of squares") {
  const ScalarFn f = [](Graph&, Var x) { return sum(mul(x, x)); };
  CHECK(grad_check(f, testing::random_tensor({3}, 11), 1e-5) <= 1e-6);
}

TEST_CASE("grad_check on softmax cross-entropy") {
  const std::vector<int> target{2};
  const ScalarFn f = [&](Graph&, Var x) { return sum(cross_entropy_rows(x, target)); };
  CHECK(grad_check(f, testing::random_tensor({1, 4}, 12), 1e-5) <= 1e-5);
}

TEST_CASE("every differentiable op passes grad_check at random points") {
  struct Case {
    const char* name;
    Shape shape;
    ScalarFn f;
    double lo = -1.0, hi = 1.0;
  };
  const Tensor w = testing::random_tensor({4, 3}, 100);
  const Tensor w2 = testing::random_tensor({3, 4}, 101);
  const Tensor row = testing::random_tensor({4}, 102);
  const std::vector<int> ids{2, 0, 2};
  const std::vector<int> pick_idx{1, 3, 0};
  const std::vector<double> labels{1.0, 0.0, 1.0, 0.0};
  std::vector<Case> cases = {
      {"add/sub/mul", {3, 4}, [&](Graph& g, Var x) { return sum(mul(sub(x, g.constant(w2)), add(x, x))); }},
      {"div", {3, 4}, [&](Graph& g, Var x) { return sum(div(x, add_scalar(g.constant(w2), 3.0))); }},
      {"add_row/scale", {3, 4}, [&](Graph& g, Var x) { return sum(square(scale(add_row(x, g.constant(row)), 0.7))); }},
      {"exp/log/sqrt", {3, 4}, [](Graph&, Var x) { return sum(log(sqrt(add_scalar(exp(x), 1.0)))); }},
      {"tanh/sigmoid", {3, 4}, [](Graph&, Var x) { return sum(mul(tanh(x), sigmoid(x))); }},
      {"relu", {3, 4}, [](Graph&, Var x) { return sum(square(relu(x))); }, 0.1, 1.0},
      {"gelu", {3, 4}, [](Graph&, Var x) { return sum(gelu(x)); }},
      {"clamp", {3, 4}, [](Graph&, Var x) { return sum(square(clamp(x, -2.0, 2.0))); }},
      {"matmul", {3, 4}, [&](Graph& g, Var x) { return sum(square(matmul(x, g.constant(w)))); }},
      {"matmul_nt", {3, 4}, [&](Graph& g, Var x) { return sum(square(matmul_nt(x, g.constant(w2)))); }},
      {"transpose/reshape", {3, 4}, [](Graph&, Var x) { return sum(square(reshape(transpose(x), {2, 6}))); }},
      {"mean/row_sum", {3, 4}, [](Graph&, Var x) { return mean(square(row_sum(x))); }},
      {"layernorm", {3, 4},
       [&](Graph& g, Var x) {
         return sum(mul(layernorm(x, g.constant(row), g.constant(row)), g.constant(w2)));
       }},
      {"softmax", {3, 4}, [&](Graph& g, Var x) { return sum(mul(softmax(x), g.constant(w2))); }},
      {"log_softmax", {3, 4}, [&](Graph& g, Var x) { return sum(mul(log_softmax(x), g.constant(w2))); }},
      {"gather_rows", {3, 4}, [&](Graph&, Var x) { return sum(square(gather_rows(x, ids))); }},
      {"pick", {3, 4}, [&](Graph&, Var x) { return sum(square(pick(x, pick_idx))); }},
      {"slice/concat", {3, 4},
       [](Graph&, Var x) {
         std::vector<Var> r{slice_rows(x, 1, 2), slice_rows(x, 0, 1)};
         std::vector<Var> c{slice_cols(x, 2, 2), slice_cols(x, 0, 1)};
         return add(sum(square(concat_rows(r))), sum(square(concat_cols(c))));
       }},
      {"kl", {3, 4}, [&](Graph& g, Var x) { return sum(kl_from_logits(g.constant(w2), x)); }},
      {"kl (p side)", {3, 4}, [&](Graph& g, Var x) { return sum(kl_from_logits(x, g.constant(w2))); }},
      {"bce", {1, 4}, [&](Graph&, Var x) { return sum(bce(sigmoid(x), labels)); }},
      {"row_cosine", {3, 4}, [&](Graph& g, Var x) { return sum(row_cosine(x, g.constant(w2))); }},
  };
  for (const Case& c : cases) {
    for (std::uint64_t s = 0; s < 5; ++s) {
      const double err = grad_check(c.f, testing::random_tensor(c.shape, 1000 + s, c.lo, c.hi), 1e-5);
      INFO(std::string(c.name) << " seed " << s);
      CHECK(err <= 1e-5);
    }
  }
  // The reversal node is not a true derivative: its analytic gradient is the
  // finite-difference one scaled by -lambda.
  const ScalarFn through = [](Graph&, Var x) { return sum(tanh(grl(x, 0.3))); };
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Tensor x = testing::random_tensor({3, 4}, 1000 + s);
    const Tensor a = analytic_grad(through, x);
    const Tensor n = numeric_grad(through, x);
    for (std::size_t i = 0; i < a.data().size(); ++i) CHECK(a.data()[i] == doctest::Approx(-0.3 * n.data()[i]).epsilon(1e-8));
  }
}

TEST_CASE("log_softmax examples") {
  Graph g;
  const Tensor a = log_softmax(g.constant(Tensor::vector({0.0, 0.0}))).value();
  CHECK(a[0] == doctest::Approx(-std::numbers::ln2).epsilon(1e-15));
  CHECK(a[1] == doctest::Approx(-std::numbers::ln2).epsilon(1e-15));
  for (double c : {-7.0, 0.0, 123.0}) {
    const Tensor b = log_softmax(g.constant(Tensor::vector({c, c, c, c}))).value();
    for (double v : b.data()) CHECK(v == doctest::Approx(-std::log(4.0)).epsilon(1e-14));
  }
  const Tensor s = log_softmax(g.constant(Tensor::vector({1000.0, 0.0}))).value();
  CHECK(std::isfinite(s[0]));
  CHECK(std::isfinite(s[1]));
  CHECK(std::abs(s[0]) < 1e-12);
  CHECK(s[1] == doctest::Approx(-1000.0));
}

TEST_CASE("log_softmax rows exponentiate to one") {
  Graph g;
  const Tensor z = log_softmax(g.constant(testing::random_tensor({6, 9}, 21, -5, 5))).value();
  for (std::size_t r = 0; r < z.rows(); ++r) {
    double total = 0.0;
    for (double v : z.row(r)) total += std::exp(v);
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
}

TEST_CASE("kl_from_logits examples") {
  Graph g;
  const Tensor p = testing::random_tensor({1, 5}, 31, -2, 2);
  CHECK(kl_from_logits(g.constant(p), g.constant(p)).value()[0] == 0.0);
  const double forced =
      kl_from_logits(g.constant(Tensor::vector({40.0, -40.0})), g.constant(Tensor::vector({0.0, 0.0}))).value()[0];
  CHECK(forced == doctest::Approx(std::numbers::ln2).epsilon(1e-12));

  const Tensor q = testing::random_tensor({1, 5}, 32, -2, 2);
  const auto softmax_of = [](const Tensor& t) {
    std::vector<double> out(t.numel());
    double z = 0.0;
    for (std::size_t i = 0; i < t.numel(); ++i) z += std::exp(t[i]);
    for (std::size_t i = 0; i < t.numel(); ++i) out[i] = std::exp(t[i]) / z;
    return out;
  };
  const auto pp = softmax_of(p), qq = softmax_of(q);
  double oracle = 0.0;
  for (std::size_t i = 0; i < pp.size(); ++i) oracle += pp[i] * std::log(pp[i] / qq[i]);
  CHECK(std::abs(kl_from_logits(g.constant(p), g.constant(q)).value()[0] - oracle) <= 1e-10);
}

TEST_CASE("kl_from_logits is non-negative and rejects shape mismatch") {
  Graph g;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Tensor kl =
        kl_from_logits(g.constant(testing::random_tensor({2, 7}, s, -4, 4)),
                       g.constant(testing::random_tensor({2, 7}, s + 500, -4, 4)))
            .value();
    for (double v : kl.data()) CHECK(v >= 0.0);
  }
  CHECK_THROWS_AS(kl_from_logits(g.constant(Tensor::vector({1, 2})), g.constant(Tensor::vector({1, 2, 3}))), Error);
}

TEST_CASE("bce examples") {
  Graph g;
  const std::vector<double> one{1.0}, zero{0.0};
  CHECK(bce(g.constant(Tensor::vector({0.5})), one).value()[0] == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
  CHECK(bce(g.constant(Tensor::vector({0.5})), zero).value()[0] == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
  CHECK(bce(g.constant(Tensor::vector({1.0 - 1e-7})), one).value()[0] < 1.1e-7);
  CHECK(bce(g.constant(Tensor::vector({0.25})), one).value()[0] == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  // Clamping keeps the saturated cases finite.
  CHECK(std::isfinite(bce(g.constant(Tensor::vector({0.0})), one).value()[0]));
  CHECK(std::isfinite(bce(g.constant(Tensor::vector({1.0})), zero).value()[0]));
}

TEST_CASE("shape errors") {
  Graph g;
  Var a = g.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  Var b = g.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  CHECK_THROWS_AS(matmul(a, b), Error);
  CHECK_THROWS_AS(add(a, g.constant(Tensor::vector({1, 2}))), Error);
}
