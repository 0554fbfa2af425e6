#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "seqrl/alloc.hpp"
#include "seqrl/common.hpp"

namespace seqrl {

inline std::string shape_str(const std::vector<int64_t>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

template <class T>
struct TensorData {
  std::vector<int64_t> shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first needed
  bool requires_grad = false;
  bool activation = false;

  TensorData(std::vector<int64_t> s, bool act) : shape(std::move(s)), activation(act) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    value.assign(static_cast<std::size_t>(n), T(0));
    alloc::on_alloc(value.size() * sizeof(T), activation);
  }

  ~TensorData() {
    alloc::on_free(value.size() * sizeof(T), activation);
    if (!grad.empty()) alloc::on_free(grad.size() * sizeof(T), activation);
  }

  TensorData(const TensorData&) = delete;
  TensorData& operator=(const TensorData&) = delete;

  void ensure_grad() {
    if (grad.empty()) {
      grad.assign(value.size(), T(0));
      alloc::on_alloc(grad.size() * sizeof(T), activation);
    }
  }
};

template <class T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int64_t> shape, bool activation = false) {
    Tensor t;
    t.d_ = std::make_shared<TensorData<T>>(std::move(shape), activation);
    return t;
  }

  static Tensor scalar(T v, bool activation = false) {
    Tensor t = zeros({}, activation);
    t.data()[0] = v;
    return t;
  }

  static Tensor from_vector(std::vector<int64_t> shape, const std::vector<T>& vals) {
    Tensor t = zeros(std::move(shape));
    if (static_cast<int64_t>(vals.size()) != t.size())
      throw ShapeError("from_vector: size mismatch");
    std::copy(vals.begin(), vals.end(), t.data());
    return t;
  }

  bool defined() const { return static_cast<bool>(d_); }
  const std::vector<int64_t>& shape() const { return d_->shape; }
  int ndim() const { return static_cast<int>(d_->shape.size()); }
  int64_t dim(int i) const { return d_->shape[static_cast<std::size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(d_->value.size()); }

  T* data() { return d_->value.data(); }
  const T* data() const { return d_->value.data(); }
  T item() const {
    if (size() != 1) throw ShapeError("item: tensor is not a scalar");
    return d_->value[0];
  }

  bool requires_grad() const { return d_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    d_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !d_->grad.empty(); }
  T* grad_data() {
    d_->ensure_grad();
    return d_->grad.data();
  }
  const T* grad_data_if_any() const { return d_->grad.empty() ? nullptr : d_->grad.data(); }
  void zero_grad() { std::fill(d_->grad.begin(), d_->grad.end(), T(0)); }

  // Plain leaf holding a copy of the values; not tied to any graph.
  Tensor detach_copy() const {
    Tensor t = zeros(d_->shape);
    std::copy(d_->value.begin(), d_->value.end(), t.data());
    return t;
  }

  void copy_values_from(const Tensor& other) {
    if (other.size() != size()) throw ShapeError("copy_values_from: size mismatch");
    std::copy(other.data(), other.data() + size(), data());
  }

  void fill(T v) { std::fill(d_->value.begin(), d_->value.end(), v); }

  const void* storage_id() const { return d_.get(); }

  void check_finite(const char* what) const {
    for (const T& v : d_->value)
      if (!std::isfinite(static_cast<double>(v)))
        throw NumericError(std::string("non-finite value in ") + what);
  }

 private:
  std::shared_ptr<TensorData<T>> d_;
};

template <class T>
class Graph {
 public:
  void record(Tensor<T> out, std::function<void()> fn) {
    outputs_.push_back(std::move(out));
    tape_.push_back(std::move(fn));
  }

  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Leaf
  // gradients accumulate additively across calls until explicitly zeroed;
  // intermediate gradients are reset at the start of each pass.
  void backward(Tensor<T> loss) {
    if (loss.size() != 1) throw ShapeError("backward: loss must be scalar");
    for (auto& t : outputs_) t.zero_grad();
    loss.grad_data()[0] += T(1);
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
  }

  // Frees the tape and every intermediate captured by it.
  void clear() {
    tape_.clear();
    outputs_.clear();
  }

  std::size_t num_ops() const { return tape_.size(); }

 private:
  std::vector<std::function<void()>> tape_;
  std::vector<Tensor<T>> outputs_;
};

namespace detail {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <class T>
Eigen::Map<Mat<T>> mat(Tensor<T>& t) {
  return {t.data(), t.dim(0), t.dim(1)};
}
template <class T>
Eigen::Map<const Mat<T>> mat(const Tensor<T>& t) {
  return {t.data(), t.dim(0), t.dim(1)};
}
template <class T>
Eigen::Map<Mat<T>> gmat(Tensor<T>& t) {
  return {t.grad_data(), t.dim(0), t.dim(1)};
}
template <class T>
Eigen::Map<Vec<T>> vec(Tensor<T>& t) {
  return {t.data(), t.size()};
}
template <class T>
Eigen::Map<const Vec<T>> vec(const Tensor<T>& t) {
  return {t.data(), t.size()};
}
template <class T>
Eigen::Map<Vec<T>> gvec(Tensor<T>& t) {
  return {t.grad_data(), t.size()};
}

template <class T>
void post_op_check(const Tensor<T>& t, const char* what) {
  if (runtime_checks::strict_finite) t.check_finite(what);
}

}  // namespace detail

// ---- ops ----
// Every op takes the graph as its first argument; nullptr means "forward
// only" (no closure recorded, output not counted as an activation).

template <class T>
Tensor<T> matmul(Graph<T>* g, Tensor<T> a, Tensor<T> b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " " +
                     shape_str(b.shape()));
  Tensor<T> c = Tensor<T>::zeros({a.dim(0), b.dim(1)}, g != nullptr);
  detail::mat(c).noalias() = detail::mat(a) * detail::mat(b);
  detail::post_op_check(c, "matmul");
  if (g) {
    g->record(c, [a, b, c]() mutable {
      if (!c.has_grad()) return;
      Eigen::Map<const detail::Mat<T>> dc(c.grad_data_if_any(), c.dim(0), c.dim(1));
      detail::gmat(a).noalias() += dc * detail::mat(b).transpose();
      detail::gmat(b).noalias() += detail::mat(a).transpose() * dc;
    });
  }
  return c;
}

// C = A * B^T
template <class T>
Tensor<T> matmul_nt(Graph<T>* g, Tensor<T> a, Tensor<T> b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1))
    throw ShapeError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " " +
                     shape_str(b.shape()));
  Tensor<T> c = Tensor<T>::zeros({a.dim(0), b.dim(0)}, g != nullptr);
  detail::mat(c).noalias() = detail::mat(a) * detail::mat(b).transpose();
  detail::post_op_check(c, "matmul_nt");
  if (g) {
    g->record(c, [a, b, c]() mutable {
      if (!c.has_grad()) return;
      Eigen::Map<const detail::Mat<T>> dc(c.grad_data_if_any(), c.dim(0), c.dim(1));
      detail::gmat(a).noalias() += dc * detail::mat(b);
      detail::gmat(b).noalias() += dc.transpose() * detail::mat(a);
    });
  }
  return c;
}

// y = A * x
template <class T>
Tensor<T> matvec(Graph<T>* g, Tensor<T> a, Tensor<T> x) {
  if (a.ndim() != 2 || x.ndim() != 1 || a.dim(1) != x.dim(0))
    throw ShapeError("matvec: incompatible shapes " + shape_str(a.shape()) + " " +
                     shape_str(x.shape()));
  Tensor<T> y = Tensor<T>::zeros({a.dim(0)}, g != nullptr);
  detail::vec(y).noalias() = detail::mat(a) * detail::vec(x);
  detail::post_op_check(y, "matvec");
  if (g) {
    g->record(y, [a, x, y]() mutable {
      if (!y.has_grad()) return;
      Eigen::Map<const detail::Vec<T>> dy(y.grad_data_if_any(), y.size());
      detail::gmat(a).noalias() += dy * detail::vec(x).transpose();
      detail::gvec(x).noalias() += detail::mat(a).transpose() * dy;
    });
  }
  return y;
}

// y = A^T * x
template <class T>
Tensor<T> matvec_t(Graph<T>* g, Tensor<T> a, Tensor<T> x) {
  if (a.ndim() != 2 || x.ndim() != 1 || a.dim(0) != x.dim(0))
    throw ShapeError("matvec_t: incompatible shapes " + shape_str(a.shape()) + " " +
                     shape_str(x.shape()));
  Tensor<T> y = Tensor<T>::zeros({a.dim(1)}, g != nullptr);
  detail::vec(y).noalias() = detail::mat(a).transpose() * detail::vec(x);
  detail::post_op_check(y, "matvec_t");
  if (g) {
    g->record(y, [a, x, y]() mutable {
      if (!y.has_grad()) return;
      Eigen::Map<const detail::Vec<T>> dy(y.grad_data_if_any(), y.size());
      detail::gmat(a).noalias() += detail::vec(x) * dy.transpose();
      detail::gvec(x).noalias() += detail::mat(a) * dy;
    });
  }
  return y;
}

// y = W*x + b; pass an undefined Tensor for b to skip the bias.
template <class T>
Tensor<T> linear(Graph<T>* g, Tensor<T> w, Tensor<T> b, Tensor<T> x) {
  if (w.ndim() != 2 || x.ndim() != 1 || w.dim(1) != x.dim(0))
    throw ShapeError("linear: incompatible shapes " + shape_str(w.shape()) + " " +
                     shape_str(x.shape()));
  if (b.defined() && (b.ndim() != 1 || b.dim(0) != w.dim(0)))
    throw ShapeError("linear: bad bias shape");
  Tensor<T> y = Tensor<T>::zeros({w.dim(0)}, g != nullptr);
  detail::vec(y).noalias() = detail::mat(w) * detail::vec(x);
  if (b.defined()) detail::vec(y) += detail::vec(b);
  detail::post_op_check(y, "linear");
  if (g) {
    g->record(y, [w, b, x, y]() mutable {
      if (!y.has_grad()) return;
      Eigen::Map<const detail::Vec<T>> dy(y.grad_data_if_any(), y.size());
      detail::gmat(w).noalias() += dy * detail::vec(x).transpose();
      detail::gvec(x).noalias() += detail::mat(w).transpose() * dy;
      if (b.defined()) detail::gvec(b) += dy;
    });
  }
  return y;
}

// Y = X*W^T + 1*b^T for row-batched inputs X: [B x in] -> [B x out]
template <class T>
Tensor<T> linear_batch(Graph<T>* g, Tensor<T> w, Tensor<T> b, Tensor<T> x) {
  if (w.ndim() != 2 || x.ndim() != 2 || w.dim(1) != x.dim(1))
    throw ShapeError("linear_batch: incompatible shapes " + shape_str(w.shape()) + " " +
                     shape_str(x.shape()));
  if (b.defined() && (b.ndim() != 1 || b.dim(0) != w.dim(0)))
    throw ShapeError("linear_batch: bad bias shape");
  Tensor<T> y = Tensor<T>::zeros({x.dim(0), w.dim(0)}, g != nullptr);
  detail::mat(y).noalias() = detail::mat(x) * detail::mat(w).transpose();
  if (b.defined()) detail::mat(y).rowwise() += detail::vec(b).transpose();
  detail::post_op_check(y, "linear_batch");
  if (g) {
    g->record(y, [w, b, x, y]() mutable {
      if (!y.has_grad()) return;
      Eigen::Map<const detail::Mat<T>> dy(y.grad_data_if_any(), y.dim(0), y.dim(1));
      detail::gmat(x).noalias() += dy * detail::mat(w);
      detail::gmat(w).noalias() += dy.transpose() * detail::mat(x);
      if (b.defined()) detail::gvec(b).noalias() += dy.colwise().sum().transpose();
    });
  }
  return y;
}

// Numerically stable softmax over a 1-D tensor.
template <class T>
Tensor<T> softmax(Graph<T>* g, Tensor<T> x) {
  if (x.ndim() != 1 || x.size() == 0) throw ShapeError("softmax: expects non-empty 1-D input");
  Tensor<T> p = Tensor<T>::zeros({x.dim(0)}, g != nullptr);
  const T* xv = x.data();
  T* pv = p.data();
  int64_t n = x.size();
  T m = xv[0];
  for (int64_t i = 1; i < n; ++i) m = std::max(m, xv[i]);
  T z = T(0);
  for (int64_t i = 0; i < n; ++i) {
    pv[i] = std::exp(xv[i] - m);
    z += pv[i];
  }
  // floor keeps every probability strictly positive (log p must stay finite)
  constexpr T kFloor = std::numeric_limits<T>::min();
  for (int64_t i = 0; i < n; ++i) pv[i] = std::max(pv[i] / z, kFloor);
  detail::post_op_check(p, "softmax");
  if (g) {
    g->record(p, [x, p]() mutable {
      if (!p.has_grad()) return;
      const T* pv = p.data();
      const T* dp = p.grad_data_if_any();
      T* dx = x.grad_data();
      int64_t n = p.size();
      T acc = T(0);
      for (int64_t i = 0; i < n; ++i) acc += pv[i] * dp[i];
      for (int64_t i = 0; i < n; ++i) dx[i] += pv[i] * (dp[i] - acc);
    });
  }
  return p;
}

namespace detail {

template <class T, class Fwd, class Bwd>
Tensor<T> elementwise(Graph<T>* g, Tensor<T> x, Fwd f, Bwd dfdy, const char* what) {
  Tensor<T> y = Tensor<T>::zeros(x.shape(), g != nullptr);
  const T* xv = x.data();
  T* yv = y.data();
  for (int64_t i = 0; i < x.size(); ++i) yv[i] = f(xv[i]);
  post_op_check(y, what);
  if (g) {
    g->record(y, [x, y, dfdy]() mutable {
      if (!y.has_grad()) return;
      const T* xv = x.data();
      const T* yv = y.data();
      const T* dy = y.grad_data_if_any();
      T* dx = x.grad_data();
      for (int64_t i = 0; i < y.size(); ++i) dx[i] += dy[i] * dfdy(xv[i], yv[i]);
    });
  }
  return y;
}

}  // namespace detail

template <class T>
Tensor<T> sigmoid(Graph<T>* g, Tensor<T> x) {
  return detail::elementwise(
      g, x,
      [](T v) {
        return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                         : std::exp(v) / (T(1) + std::exp(v));
      },
      [](T, T y) { return y * (T(1) - y); }, "sigmoid");
}

template <class T>
Tensor<T> tanh(Graph<T>* g, Tensor<T> x) {
  return detail::elementwise(
      g, x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; }, "tanh");
}

template <class T>
Tensor<T> log(Graph<T>* g, Tensor<T> x) {
  for (int64_t i = 0; i < x.size(); ++i)
    if (!(x.data()[i] > T(0))) throw NumericError("log: input must be positive");
  return detail::elementwise(
      g, x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; }, "log");
}

template <class T>
Tensor<T> add(Graph<T>* g, Tensor<T> a, Tensor<T> b) {
  if (a.shape() != b.shape()) throw ShapeError("add: shape mismatch");
  Tensor<T> y = Tensor<T>::zeros(a.shape(), g != nullptr);
  for (int64_t i = 0; i < a.size(); ++i) y.data()[i] = a.data()[i] + b.data()[i];
  detail::post_op_check(y, "add");
  if (g) {
    g->record(y, [a, b, y]() mutable {
      if (!y.has_grad()) return;
      const T* dy = y.grad_data_if_any();
      T* da = a.grad_data();
      T* db = b.grad_data();
      for (int64_t i = 0; i < y.size(); ++i) {
        da[i] += dy[i];
        db[i] += dy[i];
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> sub(Graph<T>* g, Tensor<T> a, Tensor<T> b) {
  if (a.shape() != b.shape()) throw ShapeError("sub: shape mismatch");
  Tensor<T> y = Tensor<T>::zeros(a.shape(), g != nullptr);
  for (int64_t i = 0; i < a.size(); ++i) y.data()[i] = a.data()[i] - b.data()[i];
  detail::post_op_check(y, "sub");
  if (g) {
    g->record(y, [a, b, y]() mutable {
      if (!y.has_grad()) return;
      const T* dy = y.grad_data_if_any();
      T* da = a.grad_data();
      T* db = b.grad_data();
      for (int64_t i = 0; i < y.size(); ++i) {
        da[i] += dy[i];
        db[i] -= dy[i];
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> mul(Graph<T>* g, Tensor<T> a, Tensor<T> b) {
  if (a.shape() != b.shape()) throw ShapeError("mul: shape mismatch");
  Tensor<T> y = Tensor<T>::zeros(a.shape(), g != nullptr);
  for (int64_t i = 0; i < a.size(); ++i) y.data()[i] = a.data()[i] * b.data()[i];
  detail::post_op_check(y, "mul");
  if (g) {
    g->record(y, [a, b, y]() mutable {
      if (!y.has_grad()) return;
      const T* dy = y.grad_data_if_any();
      T* da = a.grad_data();
      T* db = b.grad_data();
      for (int64_t i = 0; i < y.size(); ++i) {
        da[i] += dy[i] * b.data()[i];
        db[i] += dy[i] * a.data()[i];
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> scale(Graph<T>* g, Tensor<T> a, T c) {
  Tensor<T> y = Tensor<T>::zeros(a.shape(), g != nullptr);
  for (int64_t i = 0; i < a.size(); ++i) y.data()[i] = a.data()[i] * c;
  detail::post_op_check(y, "scale");
  if (g) {
    g->record(y, [a, y, c]() mutable {
      if (!y.has_grad()) return;
      const T* dy = y.grad_data_if_any();
      T* da = a.grad_data();
      for (int64_t i = 0; i < y.size(); ++i) da[i] += dy[i] * c;
    });
  }
  return y;
}

template <class T>
Tensor<T> concat(Graph<T>* g, std::vector<Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  int64_t n = 0;
  for (const auto& p : parts) {
    if (p.ndim() != 1) throw ShapeError("concat: expects 1-D inputs");
    n += p.size();
  }
  Tensor<T> y = Tensor<T>::zeros({n}, g != nullptr);
  int64_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data(), p.data() + p.size(), y.data() + off);
    off += p.size();
  }
  detail::post_op_check(y, "concat");
  if (g) {
    g->record(y, [parts = std::move(parts), y]() mutable {
      if (!y.has_grad()) return;
      const T* dy = y.grad_data_if_any();
      int64_t off = 0;
      for (auto& p : parts) {
        T* dp = p.grad_data();
        for (int64_t i = 0; i < p.size(); ++i) dp[i] += dy[off + i];
        off += p.size();
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> slice(Graph<T>* g, Tensor<T> x, int64_t start, int64_t len) {
  if (x.ndim() != 1 || start < 0 || len < 0 || start + len > x.size())
    throw ShapeError("slice: out of range");
  Tensor<T> y = Tensor<T>::zeros({len}, g != nullptr);
  std::copy(x.data() + start, x.data() + start + len, y.data());
  detail::post_op_check(y, "slice");
  if (g) {
    g->record(y, [x, y, start]() mutable {
      if (!y.has_grad()) return;
      const T* dy = y.grad_data_if_any();
      T* dx = x.grad_data();
      for (int64_t i = 0; i < y.size(); ++i) dx[start + i] += dy[i];
    });
  }
  return y;
}

template <class T>
Tensor<T> sum(Graph<T>* g, Tensor<T> x) {
  Tensor<T> y = Tensor<T>::zeros({}, g != nullptr);
  T acc = T(0);
  for (int64_t i = 0; i < x.size(); ++i) acc += x.data()[i];
  y.data()[0] = acc;
  detail::post_op_check(y, "sum");
  if (g) {
    g->record(y, [x, y]() mutable {
      if (!y.has_grad()) return;
      T dy = y.grad_data_if_any()[0];
      T* dx = x.grad_data();
      for (int64_t i = 0; i < x.size(); ++i) dx[i] += dy;
    });
  }
  return y;
}

template <class T>
Tensor<T> mean(Graph<T>* g, Tensor<T> x) {
  if (x.size() == 0) throw ShapeError("mean: empty input");
  Tensor<T> y = Tensor<T>::zeros({}, g != nullptr);
  T acc = T(0);
  for (int64_t i = 0; i < x.size(); ++i) acc += x.data()[i];
  y.data()[0] = acc / static_cast<T>(x.size());
  detail::post_op_check(y, "mean");
  if (g) {
    g->record(y, [x, y]() mutable {
      if (!y.has_grad()) return;
      T dy = y.grad_data_if_any()[0] / static_cast<T>(x.size());
      T* dx = x.grad_data();
      for (int64_t i = 0; i < x.size(); ++i) dx[i] += dy;
    });
  }
  return y;
}

template <class T>
Tensor<T> dot(Graph<T>* g, Tensor<T> a, Tensor<T> b) {
  if (a.shape() != b.shape() || a.ndim() != 1) throw ShapeError("dot: expects equal 1-D shapes");
  Tensor<T> y = Tensor<T>::zeros({}, g != nullptr);
  T acc = T(0);
  for (int64_t i = 0; i < a.size(); ++i) acc += a.data()[i] * b.data()[i];
  y.data()[0] = acc;
  detail::post_op_check(y, "dot");
  if (g) {
    g->record(y, [a, b, y]() mutable {
      if (!y.has_grad()) return;
      T dy = y.grad_data_if_any()[0];
      T* da = a.grad_data();
      T* db = b.grad_data();
      for (int64_t i = 0; i < a.size(); ++i) {
        da[i] += dy * b.data()[i];
        db[i] += dy * a.data()[i];
      }
    });
  }
  return y;
}

// Copies one row of a [V x d] table; backward scatter-adds into that row.
template <class T>
Tensor<T> embed_row(Graph<T>* g, Tensor<T> table, int64_t row) {
  if (table.ndim() != 2 || row < 0 || row >= table.dim(0))
    throw ShapeError("embed_row: row out of range");
  int64_t d = table.dim(1);
  Tensor<T> y = Tensor<T>::zeros({d}, g != nullptr);
  std::copy(table.data() + row * d, table.data() + (row + 1) * d, y.data());
  if (g) {
    g->record(y, [table, y, row, d]() mutable {
      if (!y.has_grad()) return;
      const T* dy = y.grad_data_if_any();
      T* dt = table.grad_data() + row * d;
      for (int64_t i = 0; i < d; ++i) dt[i] += dy[i];
    });
  }
  return y;
}

// Gathers rows of a [V x d] table into a [K x d] tensor. The output rows are
// exact copies; backward scatter-adds each output row's gradient into the
// corresponding source row and nowhere else.
template <class T>
Tensor<T> gather_rows(Graph<T>* g, Tensor<T> table, std::vector<int32_t> ids) {
  if (table.ndim() != 2) throw ShapeError("gather_rows: table must be 2-D");
  int64_t d = table.dim(1);
  for (int32_t id : ids)
    if (id < 0 || id >= table.dim(0)) throw ShapeError("gather_rows: id out of range");
  Tensor<T> y = Tensor<T>::zeros({static_cast<int64_t>(ids.size()), d}, g != nullptr);
  for (std::size_t k = 0; k < ids.size(); ++k)
    std::copy(table.data() + int64_t(ids[k]) * d, table.data() + (int64_t(ids[k]) + 1) * d,
              y.data() + int64_t(k) * d);
  if (g) {
    g->record(y, [table, y, ids = std::move(ids), d]() mutable {
      if (!y.has_grad()) return;
      const T* dy = y.grad_data_if_any();
      T* dt = table.grad_data();
      for (std::size_t k = 0; k < ids.size(); ++k) {
        T* row = dt + int64_t(ids[k]) * d;
        const T* src = dy + int64_t(k) * d;
        for (int64_t i = 0; i < d; ++i) row[i] += src[i];
      }
    });
  }
  return y;
}

// 1-D gather with scatter-add backward.
template <class T>
Tensor<T> gather(Graph<T>* g, Tensor<T> x, std::vector<int32_t> ids) {
  if (x.ndim() != 1) throw ShapeError("gather: expects 1-D input");
  for (int32_t id : ids)
    if (id < 0 || id >= x.size()) throw ShapeError("gather: id out of range");
  Tensor<T> y = Tensor<T>::zeros({static_cast<int64_t>(ids.size())}, g != nullptr);
  for (std::size_t k = 0; k < ids.size(); ++k) y.data()[k] = x.data()[ids[k]];
  if (g) {
    g->record(y, [x, y, ids = std::move(ids)]() mutable {
      if (!y.has_grad()) return;
      const T* dy = y.grad_data_if_any();
      T* dx = x.grad_data();
      for (std::size_t k = 0; k < ids.size(); ++k) dx[ids[k]] += dy[k];
    });
  }
  return y;
}

// Stacks R vectors of width d into a [R x d] matrix.
template <class T>
Tensor<T> stack_rows(Graph<T>* g, std::vector<Tensor<T>> rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no inputs");
  int64_t d = rows[0].size();
  for (const auto& r : rows)
    if (r.ndim() != 1 || r.size() != d) throw ShapeError("stack_rows: width mismatch");
  Tensor<T> y = Tensor<T>::zeros({static_cast<int64_t>(rows.size()), d}, g != nullptr);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i].data(), rows[i].data() + d, y.data() + int64_t(i) * d);
  detail::post_op_check(y, "stack_rows");
  if (g) {
    g->record(y, [rows = std::move(rows), y, d]() mutable {
      if (!y.has_grad()) return;
      const T* dy = y.grad_data_if_any();
      for (std::size_t i = 0; i < rows.size(); ++i) {
        T* dr = rows[i].grad_data();
        const T* src = dy + int64_t(i) * d;
        for (int64_t j = 0; j < d; ++j) dr[j] += src[j];
      }
    });
  }
  return y;
}

// scale * (logsumexp(logits) - logits[target]). The softmax of the logits is
// materialized once in the forward pass and reused by the backward closure.
template <class T>
Tensor<T> nll_from_logits(Graph<T>* g, Tensor<T> logits, int64_t target, T sc = T(1)) {
  if (logits.ndim() != 1 || target < 0 || target >= logits.size())
    throw ShapeError("nll_from_logits: target out of range");
  int64_t n = logits.size();
  const T* z = logits.data();
  T m = z[0];
  for (int64_t i = 1; i < n; ++i) m = std::max(m, z[i]);
  Tensor<T> p = Tensor<T>::zeros({n}, g != nullptr);
  T* pv = p.data();
  T acc = T(0);
  for (int64_t i = 0; i < n; ++i) {
    pv[i] = std::exp(z[i] - m);
    acc += pv[i];
  }
  for (int64_t i = 0; i < n; ++i) pv[i] /= acc;
  T lse = m + std::log(acc);
  Tensor<T> loss = Tensor<T>::zeros({}, g != nullptr);
  loss.data()[0] = sc * (lse - z[target]);
  detail::post_op_check(loss, "nll_from_logits");
  if (g) {
    g->record(loss, [logits, p, loss, target, sc]() mutable {
      if (!loss.has_grad()) return;
      T dl = loss.grad_data_if_any()[0] * sc;
      T* dz = logits.grad_data();
      const T* pv = p.data();
      for (int64_t i = 0; i < p.size(); ++i) dz[i] += dl * pv[i];
      dz[target] -= dl;
    });
  }
  return loss;
}

// Summed binary cross-entropy with probabilities clamped to [eps, 1-eps].
template <class T>
Tensor<T> bce_sum(Graph<T>* g, Tensor<T> probs, Tensor<T> targets, T eps = T(1e-7)) {
  if (probs.shape() != targets.shape()) throw ShapeError("bce_sum: shape mismatch");
  Tensor<T> y = Tensor<T>::zeros({}, g != nullptr);
  T acc = T(0);
  for (int64_t i = 0; i < probs.size(); ++i) {
    T p = std::clamp(probs.data()[i], eps, T(1) - eps);
    T t = targets.data()[i];
    acc -= t * std::log(p) + (T(1) - t) * std::log(T(1) - p);
  }
  y.data()[0] = acc;
  detail::post_op_check(y, "bce_sum");
  if (g) {
    g->record(y, [probs, targets, y, eps]() mutable {
      if (!y.has_grad()) return;
      T dy = y.grad_data_if_any()[0];
      T* dp = probs.grad_data();
      for (int64_t i = 0; i < probs.size(); ++i) {
        T raw = probs.data()[i];
        if (raw <= eps || raw >= T(1) - eps) continue;
        T t = targets.data()[i];
        dp[i] += dy * (raw - t) / (raw * (T(1) - raw));
      }
    });
  }
  return y;
}

// Central-difference gradient check. `loss_fn` must be a deterministic pure
// function of `params`: called with a graph to get analytic gradients, and
// with nullptr for probe evaluations. Returns the max relative error
// |analytic - numeric| / max(|analytic|, |numeric|, abs_floor).
//
// Deep recurrent graphs always contain a few coordinates whose true gradient
// sits at 1e-8..1e-6 (cross-step cancellation); central differences in 64-bit
// carry ~|loss|*eps/2h of rounding noise and cannot resolve those to 1e-5
// relative. Callers checking such graphs raise abs_floor (e.g. 1e-5), which
// switches sub-floor coordinates to an absolute-error criterion while leaving
// every resolvable coordinate on the strict relative test.
template <class F>
double gradient_check(F&& loss_fn, const std::vector<Tensor<double>>& params, double h = 1e-5,
                      double abs_floor = 1e-8) {
  for (auto p : params) {
    Tensor<double> t = p;
    t.zero_grad();
  }
  Graph<double> g;
  Tensor<double> loss = loss_fn(&g);
  if (loss.size() != 1) throw ShapeError("gradient_check: loss must be scalar");
  g.backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) {
    const double* gd = p.grad_data_if_any();
    std::vector<double> row(static_cast<std::size_t>(p.size()), 0.0);
    if (gd) std::copy(gd, gd + p.size(), row.begin());
    analytic.push_back(std::move(row));
  }
  g.clear();

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<double> p = params[pi];
    for (int64_t i = 0; i < p.size(); ++i) {
      double saved = p.data()[i];
      p.data()[i] = saved + h;
      double up = loss_fn(static_cast<Graph<double>*>(nullptr)).item();
      p.data()[i] = saved - h;
      double dn = loss_fn(static_cast<Graph<double>*>(nullptr)).item();
      p.data()[i] = saved;
      double numeric = (up - dn) / (2.0 * h);
      double a = analytic[pi][static_cast<std::size_t>(i)];
      double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), abs_floor});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace seqrl
