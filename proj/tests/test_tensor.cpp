#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "seqrl/tensor.hpp"

using namespace seqrl;

namespace {

Tensor<double> rand_tensor(std::vector<int64_t> shape, Rng& rng, double lo = -1.0,
                           double hi = 1.0) {
  Tensor<double> t = Tensor<double>::zeros(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("matmul identity and projector") {
  auto I = Tensor<double>::from_vector({2, 2}, {1, 0, 0, 1});
  auto A = Tensor<double>::from_vector({2, 2}, {1, 2, 3, 4});
  auto C = matmul<double>(nullptr, I, A);
  for (int i = 0; i < 4; ++i) CHECK(C.data()[i] == doctest::Approx(A.data()[i]).epsilon(1e-12));

  auto P = Tensor<double>::from_vector({2, 2}, {1, 0, 0, 0});
  auto B = Tensor<double>::from_vector({2, 2}, {5, 6, 7, 8});
  auto D = matmul<double>(nullptr, P, B);
  std::vector<double> want = {5, 6, 0, 0};
  for (int i = 0; i < 4; ++i) CHECK(D.data()[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("matmul rejects dimension mismatch") {
  auto A = Tensor<double>::zeros({2, 3});
  auto B = Tensor<double>::zeros({4, 2});
  CHECK_THROWS_AS(matmul<double>(nullptr, A, B), ShapeError);
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(7);
  auto A = rand_tensor({3, 4}, rng);
  auto B = rand_tensor({4, 2}, rng);
  auto W = rand_tensor({3, 2}, rng);  // fixed weights so the loss is scalar
  double err = gradient_check(
      [&](Graph<double>* g) {
        auto C = matmul(g, A, B);
        return sum(g, mul(g, C, W));
      },
      {A, B});
  CHECK(err < 1e-6);
}

TEST_CASE("softmax symmetry, stability, normalization") {
  auto x = Tensor<double>::from_vector({3}, {0, 0, 0});
  auto p = softmax<double>(nullptr, x);
  for (int i = 0; i < 3; ++i) CHECK(p.data()[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));

  auto hot = Tensor<double>::from_vector({2}, {1000, 0});
  auto q = softmax<double>(nullptr, hot);
  CHECK(std::isfinite(q.data()[0]));
  CHECK(q.data()[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(q.data()[1] == doctest::Approx(0.0).epsilon(1e-9));

  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    auto v = rand_tensor({5}, rng, -1e4, 1e4);
    auto s = softmax<double>(nullptr, v);
    double acc = 0;
    for (int i = 0; i < 5; ++i) {
      CHECK(s.data()[i] > 0);
      acc += s.data()[i];
    }
    CHECK(acc == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("softmax gradient matches finite differences") {
  Rng rng(11);
  auto x = rand_tensor({7}, rng);
  auto w = rand_tensor({7}, rng);
  double err = gradient_check(
      [&](Graph<double>* g) { return sum(g, mul(g, softmax(g, x), w)); }, {x});
  CHECK(err < 1e-6);
}

TEST_CASE("elementwise basics") {
  auto z = Tensor<double>::from_vector({1}, {0});
  CHECK(sigmoid<double>(nullptr, z).data()[0] == doctest::Approx(0.5));
  CHECK(tanh<double>(nullptr, z).data()[0] == doctest::Approx(0.0));
  auto neg = Tensor<double>::from_vector({1}, {-1});
  CHECK_THROWS_AS(log<double>(nullptr, neg), NumericError);
}

TEST_CASE("elementwise op gradients match finite differences") {
  Rng rng(3);
  auto x = rand_tensor({6}, rng, 0.1, 2.0);  // positive so log is in-domain
  auto y = rand_tensor({6}, rng);
  auto w = rand_tensor({6}, rng);

  auto check1 = [&](auto op) {
    return gradient_check(
        [&](Graph<double>* g) { return sum(g, mul(g, op(g, x), w)); }, {x});
  };
  CHECK(check1([](Graph<double>* g, Tensor<double> t) { return sigmoid(g, t); }) < 1e-6);
  CHECK(check1([](Graph<double>* g, Tensor<double> t) { return tanh(g, t); }) < 1e-6);
  CHECK(check1([](Graph<double>* g, Tensor<double> t) { return log(g, t); }) < 1e-6);

  CHECK(gradient_check([&](Graph<double>* g) { return sum(g, mul(g, add(g, x, y), w)); },
                       {x, y}) < 1e-6);
  CHECK(gradient_check([&](Graph<double>* g) { return sum(g, mul(g, sub(g, x, y), w)); },
                       {x, y}) < 1e-6);
  CHECK(gradient_check([&](Graph<double>* g) { return sum(g, mul(g, mul(g, x, y), w)); },
                       {x, y}) < 1e-6);
  CHECK(gradient_check([&](Graph<double>* g) { return mean(g, mul(g, x, w)); }, {x}) < 1e-6);
  CHECK(gradient_check(
            [&](Graph<double>* g) { return sum(g, mul(g, concat(g, {x, y}), concat(g, {w, w}))); },
            {x, y}) < 1e-6);
  CHECK(gradient_check(
            [&](Graph<double>* g) { return sum(g, mul(g, slice(g, x, 1, 3), slice(g, w, 0, 3))); },
            {x}) < 1e-6);
  CHECK(gradient_check([&](Graph<double>* g) { return dot(g, x, y); }, {x, y}) < 1e-6);
}

TEST_CASE("matvec variants match finite differences") {
  Rng rng(21);
  auto A = rand_tensor({4, 3}, rng);
  auto x = rand_tensor({3}, rng);
  auto u = rand_tensor({4}, rng);
  CHECK(gradient_check([&](Graph<double>* g) { return dot(g, matvec(g, A, x), u); }, {A, x}) <
        1e-6);
  CHECK(gradient_check([&](Graph<double>* g) { return dot(g, matvec_t(g, A, u), x); }, {A, u}) <
        1e-6);
  auto b = rand_tensor({4}, rng);
  CHECK(gradient_check([&](Graph<double>* g) { return dot(g, linear(g, A, b, x), u); },
                       {A, b, x}) < 1e-6);
  auto X = rand_tensor({5, 3}, rng);
  auto Wt = rand_tensor({5, 4}, rng);
  CHECK(gradient_check(
            [&](Graph<double>* g) { return sum(g, mul(g, linear_batch(g, A, b, X), Wt)); },
            {A, b, X}) < 1e-6);
}

TEST_CASE("gather and embedding ops route gradients to exactly the selected rows") {
  Rng rng(5);
  auto table = rand_tensor({6, 3}, rng);
  auto w = rand_tensor({3}, rng);
  CHECK(gradient_check([&](Graph<double>* g) { return dot(g, embed_row(g, table, 4), w); },
                       {table}) < 1e-6);

  std::vector<int32_t> ids = {5, 0, 5};
  auto W2 = rand_tensor({3, 3}, rng);
  CHECK(gradient_check(
            [&](Graph<double>* g) { return sum(g, mul(g, gather_rows(g, table, ids), W2)); },
            {table}) < 1e-6);

  // rows 1..3 must receive exactly zero gradient
  table.zero_grad();
  Graph<double> g;
  auto out = gather_rows(&g, table, ids);
  auto loss = sum(&g, out);
  g.backward(loss);
  const double* gd = table.grad_data_if_any();
  REQUIRE(gd != nullptr);
  for (int64_t r = 1; r <= 3; ++r)
    for (int64_t c = 0; c < 3; ++c) CHECK(gd[r * 3 + c] == 0.0);
  for (int64_t c = 0; c < 3; ++c) CHECK(gd[5 * 3 + c] == doctest::Approx(2.0));
}

TEST_CASE("stack_rows and gather(1-D) gradients") {
  Rng rng(9);
  auto a = rand_tensor({3}, rng);
  auto b = rand_tensor({3}, rng);
  auto W = rand_tensor({2, 3}, rng);
  CHECK(gradient_check(
            [&](Graph<double>* g) { return sum(g, mul(g, stack_rows(g, {a, b}), W)); }, {a, b}) <
        1e-6);
  auto v = rand_tensor({5}, rng);
  std::vector<int32_t> ids = {4, 4, 1};
  auto u = rand_tensor({3}, rng);
  CHECK(gradient_check([&](Graph<double>* g) { return dot(g, gather(g, v, ids), u); }, {v}) <
        1e-6);
}

TEST_CASE("fused losses match finite differences") {
  Rng rng(17);
  auto logits = rand_tensor({9}, rng, -2, 2);
  CHECK(gradient_check([&](Graph<double>* g) { return nll_from_logits(g, logits, 3, 0.7); },
                       {logits}) < 1e-6);

  auto probs = rand_tensor({8}, rng, 0.05, 0.95);
  auto targets = Tensor<double>::from_vector({8}, {1, 0, 0.5, 1, 0, 0, 1, 0.25});
  CHECK(gradient_check([&](Graph<double>* g) { return bce_sum(g, probs, targets); }, {probs}) <
        1e-6);
}

TEST_CASE("nll_from_logits agrees with explicit log-softmax") {
  Rng rng(23);
  auto logits = rand_tensor({6}, rng, -3, 3);
  auto p = softmax<double>(nullptr, logits);
  double want = -std::log(p.data()[2]);
  CHECK(nll_from_logits<double>(nullptr, logits, 2).item() == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("gradient check is exact for a linear function") {
  Rng rng(29);
  auto x = rand_tensor({5}, rng);
  auto w = rand_tensor({5}, rng);
  double err = gradient_check([&](Graph<double>* g) { return dot(g, x, w); }, {x});
  CHECK(err < 1e-9);
}

TEST_CASE("gradient check rejects non-scalar losses") {
  auto x = Tensor<double>::from_vector({2}, {1, 2});
  CHECK_THROWS_AS(gradient_check([&](Graph<double>* g) { return tanh(g, x); }, {x}), ShapeError);
}

TEST_CASE("gradients accumulate across backward calls until zeroed") {
  auto x = Tensor<double>::from_vector({3}, {1, 2, 3});
  Graph<double> g;
  auto loss = sum(&g, x);
  g.backward(loss);
  g.backward(loss);
  const double* gd = x.grad_data_if_any();
  REQUIRE(gd != nullptr);
  for (int i = 0; i < 3; ++i) CHECK(gd[i] == doctest::Approx(2.0));

  x.zero_grad();
  Graph<double> g2;
  auto loss2 = sum(&g2, x);
  g2.backward(loss2);
  for (int i = 0; i < 3; ++i) CHECK(x.grad_data_if_any()[i] == doctest::Approx(1.0));
}

TEST_CASE("backward visits ops in reverse order and composed graphs check out") {
  Rng rng(31);
  auto W1 = rand_tensor({4, 3}, rng);
  auto b1 = rand_tensor({4}, rng);
  auto W2 = rand_tensor({2, 4}, rng);
  auto b2 = rand_tensor({2}, rng);
  auto x = rand_tensor({3}, rng);
  double err = gradient_check(
      [&](Graph<double>* g) {
        auto h = tanh(g, linear(g, W1, b1, x));
        auto o = sigmoid(g, linear(g, W2, b2, h));
        return mean(g, o);
      },
      {W1, b1, W2, b2, x});
  CHECK(err < 1e-5);
}

TEST_CASE("activation accounting rises while a graph is live and falls when freed") {
  std::size_t before = alloc::live_activation_bytes();
  {
    Graph<double> g;
    auto x = Tensor<double>::from_vector({64}, std::vector<double>(64, 0.5));
    auto y = tanh(&g, x);
    auto z = sigmoid(&g, y);
    auto l = sum(&g, z);
    CHECK(alloc::live_activation_bytes() >= before + 2 * 64 * sizeof(double));
    g.backward(l);
    g.clear();
  }
  CHECK(alloc::live_activation_bytes() == before);
}

TEST_CASE("strict finite mode flags NaN outputs") {
  runtime_checks::strict_finite = true;
  auto x = Tensor<double>::from_vector({2}, {1e308, 1e308});
  CHECK_THROWS_AS(add<double>(nullptr, x, x), NumericError);
  runtime_checks::strict_finite = false;
}
