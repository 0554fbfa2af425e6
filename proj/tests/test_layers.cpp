#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "seqrl/layers.hpp"

using namespace seqrl;

namespace {

void randomize(Tensor<double>& t, Rng& rng, double lo = -0.5, double hi = 0.5) {
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
}

}  // namespace

TEST_CASE("lstm_step with zero parameters and state gives zero output") {
  LstmCell<double> cell(3, 4);
  auto h = Tensor<double>::zeros({4});
  auto c = Tensor<double>::zeros({4});
  auto x = Tensor<double>::from_vector({3}, {1, -2, 3});
  auto [h1, c1] = lstm_step<double>(nullptr, cell, h, c, x);
  for (int i = 0; i < 4; ++i) CHECK(h1.data()[i] == doctest::Approx(0.0));
}

TEST_CASE("saturated forget gate with zero input weights preserves the cell state") {
  LstmCell<double> cell(2, 3);
  for (int64_t i = 3; i < 6; ++i) cell.b.data()[i] = 25.0;  // forget rows
  auto h = Tensor<double>::zeros({3});
  auto c = Tensor<double>::from_vector({3}, {0.3, -0.7, 1.1});
  auto x = Tensor<double>::from_vector({2}, {5, -5});
  auto [h1, c1] = lstm_step<double>(nullptr, cell, h, c, x);
  for (int i = 0; i < 3; ++i) CHECK(c1.data()[i] == doctest::Approx(c.data()[i]).epsilon(1e-9));
}

TEST_CASE("lstm_step rejects width mismatches") {
  LstmCell<double> cell(2, 3);
  auto h = Tensor<double>::zeros({3});
  auto c = Tensor<double>::zeros({3});
  auto bad = Tensor<double>::zeros({5});
  CHECK_THROWS_AS(lstm_step<double>(nullptr, cell, h, c, bad), ShapeError);
}

TEST_CASE("gradient check through three chained LSTM steps") {
  Rng rng(41);
  LstmCell<double> cell(3, 4);
  randomize(cell.W, rng);
  randomize(cell.b, rng);
  std::vector<Tensor<double>> xs;
  for (int t = 0; t < 3; ++t) {
    auto x = Tensor<double>::zeros({3});
    randomize(x, rng);
    xs.push_back(x);
  }
  auto w = Tensor<double>::zeros({4});
  randomize(w, rng);
  double err = gradient_check(
      [&](Graph<double>* g) {
        auto h = Tensor<double>::zeros({4});
        auto c = Tensor<double>::zeros({4});
        for (int t = 0; t < 3; ++t) {
          auto [nh, nc] = lstm_step(g, cell, h, c, xs[t]);
          h = nh;
          c = nc;
        }
        return dot(g, h, w);
      },
      {cell.W, cell.b, xs[0], xs[1], xs[2]});
  CHECK(err < 1e-5);
}

TEST_CASE("bilstm_encode shapes, single-token initializer, and empty input") {
  Rng rng(43);
  LstmCell<double> fwd(5, 4), bwd(5, 4);
  randomize(fwd.W, rng);
  randomize(bwd.W, rng);

  std::vector<Tensor<double>> one;
  auto e = Tensor<double>::zeros({5});
  randomize(e, rng);
  one.push_back(e);
  auto [states1, h01] = bilstm_encode<double>(nullptr, fwd, bwd, one);
  REQUIRE(states1.size() == 1);
  CHECK(states1[0].size() == 8);
  auto [hf, cf] = lstm_step<double>(nullptr, fwd, Tensor<double>::zeros({4}),
                                    Tensor<double>::zeros({4}), e);
  auto [hb, cb] = lstm_step<double>(nullptr, bwd, Tensor<double>::zeros({4}),
                                    Tensor<double>::zeros({4}), e);
  for (int i = 0; i < 4; ++i)
    CHECK(h01.data()[i] == doctest::Approx(hf.data()[i] + hb.data()[i]).epsilon(1e-12));

  CHECK_THROWS_AS(bilstm_encode<double>(nullptr, fwd, bwd, {}), ShapeError);
}

TEST_CASE("palindromic input with shared directional weights gives mirror states") {
  Rng rng(47);
  LstmCell<double> cell(3, 4);
  randomize(cell.W, rng);
  randomize(cell.b, rng);
  auto a = Tensor<double>::zeros({3});
  auto b = Tensor<double>::zeros({3});
  randomize(a, rng);
  randomize(b, rng);
  std::vector<Tensor<double>> emb = {a, b, a};  // palindrome
  auto [states, h0] = bilstm_encode<double>(nullptr, cell, cell, emb);
  std::size_t m = emb.size();
  for (std::size_t i = 0; i < m; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(states[i].data()[j] ==
            doctest::Approx(states[m - 1 - i].data()[4 + j]).epsilon(1e-12));
}

TEST_CASE("residual block with zero linear weights is the identity in eval mode") {
  ResidualBlock<double> block(6);
  auto v = Tensor<double>::from_vector({6}, {0.5, -1, 2, 0, 3, -0.25});
  auto out = block.apply(nullptr, v, false, nullptr);
  REQUIRE(out.size() == 6);
  for (int i = 0; i < 6; ++i) CHECK(out.data()[i] == v.data()[i]);
}

TEST_CASE("residual block preserves width at d_v = 512") {
  ResidualBlock<double> block(512);
  auto v = Tensor<double>::zeros({512});
  auto out = block.apply(nullptr, v, false, nullptr);
  CHECK(out.size() == 512);
}

TEST_CASE("residual block gradient check in train and eval modes") {
  Rng rng(53);
  ResidualBlock<double> block(5);
  block.dropout_rate = 0.0;  // deterministic loss for the probe
  randomize(block.fc1.W, rng);
  randomize(block.fc1.b, rng);
  randomize(block.fc2.W, rng);
  randomize(block.fc2.b, rng);
  randomize(block.bn1.gamma, rng, 0.5, 1.5);
  randomize(block.bn1.beta, rng);
  randomize(block.bn2.gamma, rng, 0.5, 1.5);
  randomize(block.bn2.beta, rng);
  auto X = Tensor<double>::zeros({3, 5});
  randomize(X, rng);
  auto W = Tensor<double>::zeros({3, 5});
  randomize(W, rng);
  // fc1.b is excluded from the train-mode check: the following batch norm
  // removes any per-column shift, so its exact gradient is zero and the
  // finite-difference probe would only measure rounding noise there.
  std::vector<Tensor<double>> train_params = {X,
                                              block.fc1.W,
                                              block.fc2.W,
                                              block.fc2.b,
                                              block.bn1.gamma,
                                              block.bn1.beta,
                                              block.bn2.gamma,
                                              block.bn2.beta};
  double err_train = gradient_check(
      [&](Graph<double>* g) { return sum(g, mul(g, block.apply(g, X, true, nullptr), W)); },
      train_params);
  CHECK(err_train < 1e-5);
  std::vector<Tensor<double>> eval_params = train_params;
  eval_params.push_back(block.fc1.b);
  double err_eval = gradient_check(
      [&](Graph<double>* g) { return sum(g, mul(g, block.apply(g, X, false, nullptr), W)); },
      eval_params);
  CHECK(err_eval < 1e-5);
}

TEST_CASE("batch norm eval mode is a fixed affine map") {
  BatchNorm<double> bn(3);
  bn.running_mean = Tensor<double>::from_vector({3}, {1, -1, 0});
  bn.running_var = Tensor<double>::from_vector({3}, {4, 1, 0.25});
  bn.gamma = Tensor<double>::from_vector({3}, {2, 1, 3});
  bn.beta = Tensor<double>::from_vector({3}, {0, 5, -1});
  auto x = Tensor<double>::from_vector({3}, {3, -1, 1});
  auto y = bn.apply(nullptr, x, false);
  CHECK(y.data()[0] == doctest::Approx(2 * (3 - 1) / std::sqrt(4 + 1e-5) + 0).epsilon(1e-9));
  CHECK(y.data()[1] == doctest::Approx(1 * 0 / std::sqrt(1 + 1e-5) + 5).epsilon(1e-9));
  CHECK(y.data()[2] == doctest::Approx(3 * 1 / std::sqrt(0.25 + 1e-5) - 1).epsilon(1e-9));
  auto y2 = bn.apply(nullptr, x, false);
  for (int i = 0; i < 3; ++i) CHECK(y.data()[i] == y2.data()[i]);
}

TEST_CASE("batch norm train mode normalizes the batch and updates running stats") {
  BatchNorm<double> bn(2);
  auto X = Tensor<double>::from_vector({4, 2}, {1, 10, 2, 20, 3, 30, 4, 40});
  auto Y = bn.apply(nullptr, X, true);
  for (int j = 0; j < 2; ++j) {
    double mean = 0, var = 0;
    for (int r = 0; r < 4; ++r) mean += Y.data()[r * 2 + j] / 4;
    for (int r = 0; r < 4; ++r) {
      double d = Y.data()[r * 2 + j] - mean;
      var += d * d / 4;
    }
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
  CHECK(bn.running_mean.data()[0] == doctest::Approx(0.9 * 0 + 0.1 * 2.5));
  CHECK(bn.running_mean.data()[1] == doctest::Approx(0.9 * 0 + 0.1 * 25));
}

TEST_CASE("init_params ranges, forget bias, determinism") {
  LstmCell<double> cell(4, 5);
  LinearLayer<double> lin(3, 7);
  BatchNorm<double> bn(3);
  ParamList<double> params;
  cell.collect("cell", params);
  lin.collect("lin", params);
  bn.collect("bn", params);

  Rng rng(99);
  init_params(params, rng);
  for (int64_t i = 0; i < cell.W.size(); ++i) CHECK(std::abs(cell.W.data()[i]) <= 0.1);
  for (int64_t i = 0; i < lin.W.size(); ++i) CHECK(std::abs(lin.W.data()[i]) <= 0.1);
  for (int64_t i = 0; i < lin.b.size(); ++i) CHECK(lin.b.data()[i] == 0.0);
  for (int64_t i = 0; i < 5; ++i) CHECK(cell.b.data()[i] == 0.0);
  for (int64_t i = 5; i < 10; ++i) CHECK(cell.b.data()[i] == 1.0);
  for (int64_t i = 10; i < 20; ++i) CHECK(cell.b.data()[i] == 0.0);
  for (int64_t i = 0; i < 3; ++i) {
    CHECK(bn.gamma.data()[i] == 1.0);
    CHECK(bn.beta.data()[i] == 0.0);
  }

  LstmCell<double> cell2(4, 5);
  LinearLayer<double> lin2(3, 7);
  BatchNorm<double> bn2(3);
  ParamList<double> params2;
  cell2.collect("cell", params2);
  lin2.collect("lin", params2);
  bn2.collect("bn", params2);
  Rng rng2(99);
  init_params(params2, rng2);
  for (int64_t i = 0; i < cell.W.size(); ++i) CHECK(cell.W.data()[i] == cell2.W.data()[i]);
  for (int64_t i = 0; i < lin.W.size(); ++i) CHECK(lin.W.data()[i] == lin2.W.data()[i]);
}

TEST_CASE("dropout identity cases and train-mode mean preservation") {
  Rng rng(61);
  auto x = Tensor<double>::zeros({20000});
  for (int64_t i = 0; i < x.size(); ++i) x.data()[i] = 1.0;

  auto same = dropout<double>(nullptr, x, 0.0, true, &rng);
  CHECK(same.storage_id() == x.storage_id());
  auto same2 = dropout<double>(nullptr, x, 0.4, false, nullptr);
  CHECK(same2.storage_id() == x.storage_id());

  auto y = dropout<double>(nullptr, x, 0.5, true, &rng);
  double mean = 0;
  for (int64_t i = 0; i < y.size(); ++i) mean += y.data()[i];
  mean /= static_cast<double>(y.size());
  CHECK(mean == doctest::Approx(1.0).epsilon(0.02));

  CHECK_THROWS_AS(dropout<double>(nullptr, x, 1.0, true, &rng), ConfigError);
}

TEST_CASE("dropout gradient uses the same mask as forward") {
  Rng rng(67);
  auto x = Tensor<double>::from_vector({8}, {1, 1, 1, 1, 1, 1, 1, 1});
  Graph<double> g;
  auto y = dropout(&g, x, 0.5, true, &rng);
  auto loss = sum(&g, y);
  g.backward(loss);
  const double* gd = x.grad_data_if_any();
  REQUIRE(gd != nullptr);
  for (int64_t i = 0; i < 8; ++i) {
    if (y.data()[i] == 0.0)
      CHECK(gd[i] == 0.0);
    else
      CHECK(gd[i] == doctest::Approx(2.0));
  }
}

TEST_CASE("tied embedding shares storage with the projection matrix") {
  auto Wp = Tensor<double>::zeros({10, 4});
  auto emb = Embedding<double>::tied(Wp);
  CHECK(emb.table.storage_id() == Wp.storage_id());
  Wp.data()[3 * 4 + 2] = 7.5;
  auto row = emb.lookup(nullptr, 3);
  CHECK(row.data()[2] == 7.5);
}
