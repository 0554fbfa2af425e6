#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "seqrl/tensor.hpp"

namespace seqrl {

enum class ParamKind { WeightMatrix, BiasZero, LstmBias, NormScale, NormShift };

template <class T>
struct Param {
  std::string name;
  Tensor<T> t;
  ParamKind kind;
};

template <class T>
using ParamList = std::vector<Param<T>>;

template <class T>
void fill_uniform(Tensor<T>& t, Rng& rng, double lo, double hi) {
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<T>(rng.uniform(lo, hi));
}

// Uniform [-0.1, 0.1] for weight matrices and embeddings; zero biases except
// LSTM forget-gate rows, which start at one; norm scales one, shifts zero.
template <class T>
void init_params(ParamList<T>& params, Rng& rng) {
  for (Param<T>& p : params) {
    switch (p.kind) {
      case ParamKind::WeightMatrix:
        fill_uniform(p.t, rng, -0.1, 0.1);
        break;
      case ParamKind::BiasZero:
        p.t.fill(T(0));
        break;
      case ParamKind::LstmBias: {
        p.t.fill(T(0));
        int64_t d = p.t.size() / 4;
        for (int64_t i = d; i < 2 * d; ++i) p.t.data()[i] = T(1);
        break;
      }
      case ParamKind::NormScale:
        p.t.fill(T(1));
        break;
      case ParamKind::NormShift:
        p.t.fill(T(0));
        break;
    }
    p.t.set_requires_grad(true);
  }
}

template <class T>
struct LinearLayer {
  Tensor<T> W;  // [out x in]
  Tensor<T> b;  // [out]

  LinearLayer() = default;
  LinearLayer(int64_t out, int64_t in)
      : W(Tensor<T>::zeros({out, in})), b(Tensor<T>::zeros({out})) {}

  Tensor<T> apply(Graph<T>* g, Tensor<T> x) const { return linear(g, W, b, x); }
  Tensor<T> apply_batch(Graph<T>* g, Tensor<T> x) const { return linear_batch(g, W, b, x); }

  void collect(const std::string& prefix, ParamList<T>& out) {
    out.push_back({prefix + ".W", W, ParamKind::WeightMatrix});
    out.push_back({prefix + ".b", b, ParamKind::BiasZero});
  }
};

// Gates are packed in one matrix over [x; h_prev], row blocks ordered
// input / forget / output / candidate.
template <class T>
struct LstmCell {
  Tensor<T> W;  // [4d x (in + d)]
  Tensor<T> b;  // [4d]
  int64_t input_dim = 0;
  int64_t d = 0;

  LstmCell() = default;
  LstmCell(int64_t in, int64_t hidden)
      : W(Tensor<T>::zeros({4 * hidden, in + hidden})),
        b(Tensor<T>::zeros({4 * hidden})),
        input_dim(in),
        d(hidden) {}

  void collect(const std::string& prefix, ParamList<T>& out) {
    out.push_back({prefix + ".W", W, ParamKind::WeightMatrix});
    out.push_back({prefix + ".b", b, ParamKind::LstmBias});
  }
};

template <class T>
std::pair<Tensor<T>, Tensor<T>> lstm_step(Graph<T>* g, const LstmCell<T>& cell, Tensor<T> h_prev,
                                          Tensor<T> c_prev, Tensor<T> x) {
  if (x.size() != cell.input_dim || h_prev.size() != cell.d || c_prev.size() != cell.d)
    throw ShapeError("lstm_step: width mismatch");
  Tensor<T> z = linear(g, cell.W, cell.b, concat(g, {x, h_prev}));
  int64_t d = cell.d;
  Tensor<T> i = sigmoid(g, slice(g, z, 0, d));
  Tensor<T> f = sigmoid(g, slice(g, z, d, d));
  Tensor<T> o = sigmoid(g, slice(g, z, 2 * d, d));
  Tensor<T> u = tanh(g, slice(g, z, 3 * d, d));
  Tensor<T> c = add(g, mul(g, f, c_prev), mul(g, i, u));
  Tensor<T> h = mul(g, o, tanh(g, c));
  return {h, c};
}

// Runs fwd and bwd cells over the embedded sequence. State i is the
// concatenation [fwd_i ; bwd_i]; the returned initializer is fwd_M + bwd_1.
template <class T>
std::pair<std::vector<Tensor<T>>, Tensor<T>> bilstm_encode(Graph<T>* g, const LstmCell<T>& fwd,
                                                           const LstmCell<T>& bwd,
                                                           const std::vector<Tensor<T>>& emb) {
  if (emb.empty()) throw ShapeError("bilstm_encode: empty sequence");
  int64_t d = fwd.d;
  std::size_t m = emb.size();
  std::vector<Tensor<T>> hf(m), hb(m);
  Tensor<T> h = Tensor<T>::zeros({d});
  Tensor<T> c = Tensor<T>::zeros({d});
  for (std::size_t i = 0; i < m; ++i) {
    auto [nh, nc] = lstm_step(g, fwd, h, c, emb[i]);
    hf[i] = nh;
    h = nh;
    c = nc;
  }
  h = Tensor<T>::zeros({d});
  c = Tensor<T>::zeros({d});
  for (std::size_t i = m; i-- > 0;) {
    auto [nh, nc] = lstm_step(g, bwd, h, c, emb[i]);
    hb[i] = nh;
    h = nh;
    c = nc;
  }
  std::vector<Tensor<T>> states(m);
  for (std::size_t i = 0; i < m; ++i) states[i] = concat(g, {hf[i], hb[i]});
  Tensor<T> h0 = add(g, hf[m - 1], hb[0]);
  return {states, h0};
}

template <class T>
struct Embedding {
  Tensor<T> table;  // [V x d]; may alias another module's matrix (tying)

  Embedding() = default;
  Embedding(int64_t vocab, int64_t d) : table(Tensor<T>::zeros({vocab, d})) {}
  static Embedding tied(Tensor<T> shared) {
    Embedding e;
    e.table = std::move(shared);
    return e;
  }

  Tensor<T> lookup(Graph<T>* g, int64_t id) const { return embed_row(g, table, id); }

  void collect(const std::string& prefix, ParamList<T>& out) {
    out.push_back({prefix + ".table", table, ParamKind::WeightMatrix});
  }
};

// Inverted dropout: train mode masks and rescales by 1/(1-rate); eval mode is
// the identity. The same mask is applied in the backward pass.
template <class T>
Tensor<T> dropout(Graph<T>* g, Tensor<T> x, double rate, bool train, Rng* rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must be in [0, 1)");
  if (!train || rate == 0.0) return x;
  if (!rng) throw ConfigError("dropout: train mode requires an RNG");
  Tensor<T> y = Tensor<T>::zeros(x.shape(), g != nullptr);
  auto mask = std::make_shared<std::vector<uint8_t>>(static_cast<std::size_t>(x.size()));
  T inv = T(1.0 / (1.0 - rate));
  for (int64_t i = 0; i < x.size(); ++i) {
    bool keep = rng->uniform01() >= rate;
    (*mask)[static_cast<std::size_t>(i)] = keep;
    y.data()[i] = keep ? x.data()[i] * inv : T(0);
  }
  if (g) {
    g->record(y, [x, y, mask, inv]() mutable {
      if (!y.has_grad()) return;
      const T* dy = y.grad_data_if_any();
      T* dx = x.grad_data();
      for (int64_t i = 0; i < x.size(); ++i)
        if ((*mask)[static_cast<std::size_t>(i)]) dx[i] += dy[i] * inv;
    });
  }
  return y;
}

// Batch normalization over the row dimension of [B x d] inputs (1-D inputs
// are treated as a single row). Train mode normalizes with biased batch
// statistics and folds them into the running estimates with fixed momentum;
// eval mode is a deterministic affine map using the running statistics.
template <class T>
struct BatchNorm {
  Tensor<T> gamma, beta;
  Tensor<T> running_mean, running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNorm() = default;
  explicit BatchNorm(int64_t d)
      : gamma(Tensor<T>::zeros({d})),
        beta(Tensor<T>::zeros({d})),
        running_mean(Tensor<T>::zeros({d})),
        running_var(Tensor<T>::zeros({d})) {
    gamma.fill(T(1));
    running_var.fill(T(1));
  }

  void collect(const std::string& prefix, ParamList<T>& out) {
    out.push_back({prefix + ".gamma", gamma, ParamKind::NormScale});
    out.push_back({prefix + ".beta", beta, ParamKind::NormShift});
  }

  Tensor<T> apply(Graph<T>* g, Tensor<T> x, bool train) {
    bool flat = x.ndim() == 1;
    int64_t d = gamma.size();
    int64_t rows = flat ? 1 : x.dim(0);
    if ((flat ? x.size() : x.dim(1)) != d) throw ShapeError("batch_norm: width mismatch");
    Tensor<T> y = Tensor<T>::zeros(x.shape(), g != nullptr);
    if (!train) {
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < d; ++j) {
          T inv = T(1) / std::sqrt(running_var.data()[j] + T(eps));
          y.data()[r * d + j] =
              gamma.data()[j] * (x.data()[r * d + j] - running_mean.data()[j]) * inv + beta.data()[j];
        }
      detail::post_op_check(y, "batch_norm");
      if (g) {
        Tensor<T> gm = gamma, bt = beta, rm = running_mean, rv = running_var;
        double ep = eps;
        g->record(y, [x, y, gm, bt, rm, rv, d, rows, ep]() mutable {
          if (!y.has_grad()) return;
          const T* dy = y.grad_data_if_any();
          T* dx = x.grad_data();
          T* dg = gm.grad_data();
          T* db = bt.grad_data();
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < d; ++j) {
              T inv = T(1) / std::sqrt(rv.data()[j] + T(ep));
              T xhat = (x.data()[r * d + j] - rm.data()[j]) * inv;
              dx[r * d + j] += dy[r * d + j] * gm.data()[j] * inv;
              dg[j] += dy[r * d + j] * xhat;
              db[j] += dy[r * d + j];
            }
        });
      }
      return y;
    }

    // train mode
    Tensor<T> xhat = Tensor<T>::zeros(x.shape(), g != nullptr);
    std::vector<T> mu(static_cast<std::size_t>(d)), invstd(static_cast<std::size_t>(d));
    for (int64_t j = 0; j < d; ++j) {
      T m = T(0);
      for (int64_t r = 0; r < rows; ++r) m += x.data()[r * d + j];
      m /= static_cast<T>(rows);
      T v = T(0);
      for (int64_t r = 0; r < rows; ++r) {
        T diff = x.data()[r * d + j] - m;
        v += diff * diff;
      }
      v /= static_cast<T>(rows);
      mu[static_cast<std::size_t>(j)] = m;
      invstd[static_cast<std::size_t>(j)] = T(1) / std::sqrt(v + T(eps));
      T unbiased = rows > 1 ? v * static_cast<T>(rows) / static_cast<T>(rows - 1) : v;
      running_mean.data()[j] = T(1 - momentum) * running_mean.data()[j] + T(momentum) * m;
      running_var.data()[j] = T(1 - momentum) * running_var.data()[j] + T(momentum) * unbiased;
      for (int64_t r = 0; r < rows; ++r) {
        T xh = (x.data()[r * d + j] - m) * invstd[static_cast<std::size_t>(j)];
        xhat.data()[r * d + j] = xh;
        y.data()[r * d + j] = gamma.data()[j] * xh + beta.data()[j];
      }
    }
    detail::post_op_check(y, "batch_norm");
    if (g) {
      Tensor<T> gm = gamma, bt = beta;
      auto istd = std::make_shared<std::vector<T>>(std::move(invstd));
      g->record(y, [x, y, xhat, gm, bt, istd, d, rows]() mutable {
        if (!y.has_grad()) return;
        const T* dy = y.grad_data_if_any();
        T* dx = x.grad_data();
        T* dg = gm.grad_data();
        T* db = bt.grad_data();
        T n = static_cast<T>(rows);
        for (int64_t j = 0; j < d; ++j) {
          T sum_dy = T(0), sum_dy_xhat = T(0);
          for (int64_t r = 0; r < rows; ++r) {
            sum_dy += dy[r * d + j];
            sum_dy_xhat += dy[r * d + j] * xhat.data()[r * d + j];
          }
          dg[j] += sum_dy_xhat;
          db[j] += sum_dy;
          T inv = (*istd)[static_cast<std::size_t>(j)];
          for (int64_t r = 0; r < rows; ++r) {
            T xh = xhat.data()[r * d + j];
            dx[r * d + j] +=
                gm.data()[j] * inv / n * (n * dy[r * d + j] - sum_dy - xh * sum_dy_xhat);
          }
        }
      });
    }
    return y;
  }
};

// BN -> tanh -> linear -> BN -> tanh -> dropout -> linear, plus the skip path.
template <class T>
struct ResidualBlock {
  BatchNorm<T> bn1, bn2;
  LinearLayer<T> fc1, fc2;
  double dropout_rate = 0.4;

  ResidualBlock() = default;
  explicit ResidualBlock(int64_t d) : bn1(d), bn2(d), fc1(d, d), fc2(d, d) {}

  void collect(const std::string& prefix, ParamList<T>& out) {
    bn1.collect(prefix + ".bn1", out);
    fc1.collect(prefix + ".fc1", out);
    bn2.collect(prefix + ".bn2", out);
    fc2.collect(prefix + ".fc2", out);
  }

  Tensor<T> apply(Graph<T>* g, Tensor<T> v, bool train, Rng* rng) {
    Tensor<T> r2 = tanh(g, bn1.apply(g, v, train));
    Tensor<T> r3 = v.ndim() == 2 ? fc1.apply_batch(g, r2) : fc1.apply(g, r2);
    Tensor<T> r5 = tanh(g, bn2.apply(g, r3, train));
    Tensor<T> r5d = dropout(g, r5, dropout_rate, train, rng);
    Tensor<T> r6 = v.ndim() == 2 ? fc2.apply_batch(g, r5d) : fc2.apply(g, r5d);
    return add(g, r6, v);
  }
};

}  // namespace seqrl
