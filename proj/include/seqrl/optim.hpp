#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "seqrl/layers.hpp"

namespace seqrl {

template <class T>
std::vector<Tensor<T>> tensors_of(const ParamList<T>& params) {
  std::vector<Tensor<T>> out;
  out.reserve(params.size());
  for (const Param<T>& p : params) out.push_back(p.t);
  return out;
}

// Adds the L2 weight-decay term to every gradient, then rescales all
// gradients jointly so their global norm is at most clip_norm. Returns the
// pre-clip global norm. Parameters that never received a gradient are
// treated as having gradient zero (decay still applies when nonzero).
template <class T>
double decay_and_clip(std::vector<Tensor<T>>& params, double weight_decay, double clip_norm) {
  double sq = 0.0;
  for (Tensor<T>& p : params) {
    if (weight_decay == 0.0 && !p.has_grad()) continue;
    T* g = p.grad_data();
    const T* v = p.data();
    for (int64_t i = 0; i < p.size(); ++i) {
      if (weight_decay != 0.0) g[i] += static_cast<T>(weight_decay) * v[i];
      sq += static_cast<double>(g[i]) * static_cast<double>(g[i]);
    }
  }
  double norm = std::sqrt(sq);
  if (clip_norm > 0.0 && norm > clip_norm) {
    T s = static_cast<T>(clip_norm / norm);
    for (Tensor<T>& p : params) {
      if (!p.has_grad()) continue;
      T* g = p.grad_data();
      for (int64_t i = 0; i < p.size(); ++i) g[i] *= s;
    }
  }
  return norm;
}

template <class T>
void zero_grads(std::vector<Tensor<T>>& params) {
  for (Tensor<T>& p : params)
    if (p.has_grad()) p.zero_grad();
}

// v <- mu*v + g; theta <- theta - lr*v
template <class T>
struct SgdMomentum {
  std::vector<Tensor<T>> params;
  std::vector<std::vector<T>> vel;
  double lr = 1.0;
  double momentum = 0.0;
  double weight_decay = 1e-6;
  double clip_norm = 1.0;

  SgdMomentum(std::vector<Tensor<T>> ps, double lr_, double momentum_ = 0.0,
              double weight_decay_ = 1e-6, double clip_norm_ = 1.0)
      : params(std::move(ps)), lr(lr_), momentum(momentum_), weight_decay(weight_decay_),
        clip_norm(clip_norm_) {
    vel.reserve(params.size());
    for (Tensor<T>& p : params) vel.emplace_back(static_cast<std::size_t>(p.size()), T(0));
  }

  void step() {
    decay_and_clip(params, weight_decay, clip_norm);
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor<T>& p = params[k];
      const T* g = p.grad_data_if_any();
      T* v = vel[k].data();
      T* x = p.data();
      for (int64_t i = 0; i < p.size(); ++i) {
        v[i] = static_cast<T>(momentum) * v[i] + (g ? g[i] : T(0));
        x[i] -= static_cast<T>(lr) * v[i];
      }
    }
  }

  void zero_grad() { zero_grads(params); }
};

// acc <- acc + g^2; theta <- theta - lr*g/(sqrt(acc) + eps)
template <class T>
struct Adagrad {
  std::vector<Tensor<T>> params;
  std::vector<std::vector<T>> acc;
  double lr = 0.08;
  double eps = 1e-8;
  double weight_decay = 1e-6;
  double clip_norm = 1.0;

  Adagrad(std::vector<Tensor<T>> ps, double lr_, double weight_decay_ = 1e-6,
          double clip_norm_ = 1.0)
      : params(std::move(ps)), lr(lr_), weight_decay(weight_decay_), clip_norm(clip_norm_) {
    acc.reserve(params.size());
    for (Tensor<T>& p : params) acc.emplace_back(static_cast<std::size_t>(p.size()), T(0));
  }

  void step() {
    decay_and_clip(params, weight_decay, clip_norm);
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor<T>& p = params[k];
      const T* g = p.grad_data_if_any();
      if (!g) continue;
      T* a = acc[k].data();
      T* x = p.data();
      for (int64_t i = 0; i < p.size(); ++i) {
        a[i] += g[i] * g[i];
        x[i] -= static_cast<T>(lr) * g[i] / (std::sqrt(a[i]) + static_cast<T>(eps));
      }
    }
  }

  void zero_grad() { zero_grads(params); }
};

// Bias-corrected first/second moments, beta1=0.9, beta2=0.999.
template <class T>
struct Adam {
  std::vector<Tensor<T>> params;
  std::vector<std::vector<T>> m, v;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-6;
  double clip_norm = 1.0;
  int64_t t = 0;

  Adam(std::vector<Tensor<T>> ps, double lr_, double weight_decay_ = 1e-6,
       double clip_norm_ = 1.0)
      : params(std::move(ps)), lr(lr_), weight_decay(weight_decay_), clip_norm(clip_norm_) {
    m.reserve(params.size());
    v.reserve(params.size());
    for (Tensor<T>& p : params) {
      m.emplace_back(static_cast<std::size_t>(p.size()), T(0));
      v.emplace_back(static_cast<std::size_t>(p.size()), T(0));
    }
  }

  void step() {
    decay_and_clip(params, weight_decay, clip_norm);
    ++t;
    double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor<T>& p = params[k];
      const T* g = p.grad_data_if_any();
      if (!g) continue;
      T* mk = m[k].data();
      T* vk = v[k].data();
      T* x = p.data();
      for (int64_t i = 0; i < p.size(); ++i) {
        mk[i] = static_cast<T>(beta1) * mk[i] + static_cast<T>(1.0 - beta1) * g[i];
        vk[i] = static_cast<T>(beta2) * vk[i] + static_cast<T>(1.0 - beta2) * g[i] * g[i];
        double mhat = static_cast<double>(mk[i]) / c1;
        double vhat = static_cast<double>(vk[i]) / c2;
        x[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
      }
    }
  }

  void zero_grad() { zero_grads(params); }
};

// Halve on a non-improving dev score, checked every half epoch, with no
// halving inside the first `freeze_epochs` epochs. `epoch` is the number of
// completed epochs at check time (so 6.5 means halfway through epoch 7).
struct LrSchedule {
  double lr = 1.0;
  double freeze_epochs = 6.0;
  double best = -std::numeric_limits<double>::infinity();

  explicit LrSchedule(double lr0, double freeze = 6.0) : lr(lr0), freeze_epochs(freeze) {}

  double observe(double dev_score, double epoch) {
    if (dev_score > best) {
      best = dev_score;
    } else if (epoch > freeze_epochs) {
      lr *= 0.5;
    }
    return lr;
  }
};

}  // namespace seqrl
