#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "seqrl/training.hpp"

namespace seqrl {

// Binary snapshot of a model and, optionally, optimizer state: a magic
// string and format version, one hyperparameter block, a named tensor table
// (dtype, shape, row-major payload), and zero or more optimizer state
// blocks. Payloads are raw value bytes in host byte order, so a write/read
// cycle reproduces every tensor bit for bit.

enum class ModelKind : uint8_t {
  GeneratorText = 0,
  GeneratorFeatures = 1,
  PredictorText = 2,
  PredictorFeatures = 3,
};

enum class ScalarType : uint8_t { F32 = 0, F64 = 1 };

template <class T>
constexpr ScalarType scalar_type_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "checkpoints hold float or double tensors");
  return std::is_same_v<T, float> ? ScalarType::F32 : ScalarType::F64;
}

inline std::size_t scalar_width(ScalarType t) { return t == ScalarType::F32 ? 4 : 8; }

struct TensorRecord {
  std::string name;
  ScalarType dtype = ScalarType::F64;
  std::vector<int64_t> shape;
  std::vector<unsigned char> payload;

  int64_t elems() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
  }
};

constexpr uint32_t kCkptUsesFeatures = 1u << 0;
constexpr uint32_t kCkptUseAttention = 1u << 1;
constexpr uint32_t kCkptInputFeed = 1u << 2;
constexpr uint32_t kCkptGeneralAttn = 1u << 3;

struct HyperBlock {
  ModelKind kind = ModelKind::GeneratorText;
  ScalarType dtype = ScalarType::F64;
  int64_t width = 0;      // hidden width d (generator) or d_v (predictor)
  int64_t layers = 0;     // decoder layers; 0 for predictors
  int64_t input_dim = 0;  // source vocabulary size or feature dimension
  int64_t vocab = 0;      // output vocabulary size
  uint32_t flags = 0;
  double dropout = 0.0;
};

struct OptimStateBlock {
  std::string label;
  uint8_t kind = 0;  // 0 sgd+momentum, 1 adagrad, 2 adam
  double lr = 0.0;
  double momentum = 0.0;
  double weight_decay = 0.0;
  double clip_norm = 0.0;
  int64_t steps = 0;  // adam bias-correction counter
  std::vector<TensorRecord> slots;

  const TensorRecord* find(const std::string& name) const {
    for (const TensorRecord& r : slots)
      if (r.name == name) return &r;
    return nullptr;
  }
};

struct Checkpoint {
  HyperBlock hyper;
  std::vector<TensorRecord> tensors;
  std::vector<OptimStateBlock> optim;

  const TensorRecord* find(const std::string& name) const {
    for (const TensorRecord& r : tensors)
      if (r.name == name) return &r;
    return nullptr;
  }
  const OptimStateBlock* find_optim(const std::string& label) const {
    for (const OptimStateBlock& b : optim)
      if (b.label == label) return &b;
    return nullptr;
  }
};

void write_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::string& path);  // DataError on anything malformed

template <class T>
TensorRecord pack_values(const std::string& name, const T* v, int64_t n,
                         std::vector<int64_t> shape) {
  TensorRecord r;
  r.name = name;
  r.dtype = scalar_type_of<T>();
  r.shape = std::move(shape);
  r.payload.resize(static_cast<std::size_t>(n) * sizeof(T));
  if (n) std::memcpy(r.payload.data(), v, r.payload.size());
  return r;
}

template <class T>
TensorRecord pack_tensor(const std::string& name, const Tensor<T>& t) {
  return pack_values(name, t.data(), t.size(), t.shape());
}

template <class T>
void unpack_into(const TensorRecord& r, Tensor<T>& t) {
  if (r.dtype != scalar_type_of<T>())
    throw DataError("checkpoint: scalar type mismatch for " + r.name);
  if (r.shape != t.shape())
    throw DataError("checkpoint: shape mismatch for " + r.name + ", stored " +
                    shape_str(r.shape) + " vs " + shape_str(t.shape()));
  std::memcpy(t.data(), r.payload.data(), r.payload.size());
}

template <class T>
void append_tensors(Checkpoint& ck, const ParamList<T>& ps) {
  for (const Param<T>& p : ps) ck.tensors.push_back(pack_tensor(p.name, p.t));
}

// Every named tensor must be present with the exact dtype and shape.
template <class T>
void load_tensors(const Checkpoint& ck, const ParamList<T>& ps) {
  for (const Param<T>& p : ps) {
    const TensorRecord* r = ck.find(p.name);
    if (!r) throw DataError("checkpoint: missing tensor " + p.name);
    Tensor<T> t = p.t;
    unpack_into(*r, t);
  }
}

template <class T>
HyperBlock generator_hyper(const GeneratorModel<T>& m) {
  HyperBlock h;
  h.kind = m.uses_features ? ModelKind::GeneratorFeatures : ModelKind::GeneratorText;
  h.dtype = scalar_type_of<T>();
  h.width = m.d;
  h.layers = m.layers();
  h.input_dim = m.uses_features ? m.feat.W.dim(1) : m.src_embed.table.dim(0);
  h.vocab = m.vocab_size();
  h.flags = (m.uses_features ? kCkptUsesFeatures : 0u) |
            (m.use_attention ? kCkptUseAttention : 0u) |
            (m.input_feed ? kCkptInputFeed : 0u) |
            (m.attn_kind == AttnKind::General ? kCkptGeneralAttn : 0u);
  h.dropout = m.dropout_rate;
  return h;
}

template <class T>
Checkpoint make_checkpoint(GeneratorModel<T>& m) {
  Checkpoint ck;
  ck.hyper = generator_hyper(m);
  append_tensors(ck, m.params());
  return ck;
}

// The tied target embedding aliases gen.head.W_p, so loading the parameter
// list restores it too.
template <class T>
GeneratorModel<T> generator_from_checkpoint(const Checkpoint& ck) {
  const HyperBlock& h = ck.hyper;
  if (h.kind != ModelKind::GeneratorText && h.kind != ModelKind::GeneratorFeatures)
    throw DataError("checkpoint: not a generator model");
  if (h.dtype != scalar_type_of<T>()) throw DataError("checkpoint: scalar type mismatch");
  if (h.width < 1 || h.vocab < 1 || h.input_dim < 1 || h.layers < 1 || h.layers > 2)
    throw DataError("checkpoint: bad generator hyperparameters");
  if (h.kind == ModelKind::GeneratorText && !(h.flags & kCkptGeneralAttn))
    throw DataError("checkpoint: unsupported attention kind");
  GeneratorModel<T> m =
      h.kind == ModelKind::GeneratorText
          ? GeneratorModel<T>::text(h.input_dim, h.vocab, h.width, h.layers, AttnKind::General,
                                    (h.flags & kCkptInputFeed) != 0)
          : GeneratorModel<T>::features(h.input_dim, h.vocab, h.width, h.layers);
  m.dropout_rate = h.dropout;
  ParamList<T> ps = m.params();
  load_tensors(ck, ps);
  for (Param<T>& p : ps) p.t.set_requires_grad(true);
  return m;
}

template <class T>
Checkpoint make_checkpoint(PredictorModel<T>& m) {
  Checkpoint ck;
  HyperBlock h;
  h.kind = m.uses_features ? ModelKind::PredictorFeatures : ModelKind::PredictorText;
  h.dtype = scalar_type_of<T>();
  h.width = m.d_v;
  h.layers = 0;
  h.input_dim = m.uses_features ? m.feat.W.dim(1) : m.embed.table.dim(0);
  h.vocab = m.vocab_size();
  h.flags = m.uses_features ? kCkptUsesFeatures : 0u;
  h.dropout = m.block.dropout_rate;
  ck.hyper = h;
  append_tensors(ck, m.all_tensors());
  return ck;
}

// Restores trainable parameters and the batch-norm running statistics.
template <class T>
PredictorModel<T> predictor_from_checkpoint(const Checkpoint& ck) {
  const HyperBlock& h = ck.hyper;
  if (h.kind != ModelKind::PredictorText && h.kind != ModelKind::PredictorFeatures)
    throw DataError("checkpoint: not a predictor model");
  if (h.dtype != scalar_type_of<T>()) throw DataError("checkpoint: scalar type mismatch");
  if (h.width < 1 || h.vocab < 1 || h.input_dim < 1)
    throw DataError("checkpoint: bad predictor hyperparameters");
  PredictorModel<T> m = h.kind == ModelKind::PredictorText
                            ? PredictorModel<T>::text(h.input_dim, h.vocab, h.width)
                            : PredictorModel<T>::features(h.input_dim, h.vocab, h.width);
  m.block.dropout_rate = h.dropout;
  load_tensors(ck, m.all_tensors());
  for (Param<T>& p : m.params()) p.t.set_requires_grad(true);
  return m;
}

inline bool has_baseline(const Checkpoint& ck) { return ck.find("baseline.W_r") != nullptr; }

template <class T>
BaselineEstimator<T> baseline_from_checkpoint(const Checkpoint& ck) {
  const TensorRecord* w = ck.find("baseline.W_r");
  const TensorRecord* b = ck.find("baseline.b_r");
  if (!w || !b) throw DataError("checkpoint: no baseline regressor");
  if (w->shape.size() != 1) throw DataError("checkpoint: baseline.W_r is not a vector");
  BaselineEstimator<T> bl;
  bl.W_r = Tensor<T>::zeros({w->shape[0]});
  bl.b_r = Tensor<T>::zeros({});
  unpack_into(*w, bl.W_r);
  unpack_into(*b, bl.b_r);
  bl.W_r.set_requires_grad(true);
  bl.b_r.set_requires_grad(true);
  return bl;
}

namespace detail {

template <class T>
void check_aligned(const std::vector<Tensor<T>>& opt_params, const ParamList<T>& ps) {
  if (opt_params.size() != ps.size())
    throw DataError("checkpoint: optimizer holds a different parameter count");
  for (std::size_t k = 0; k < ps.size(); ++k)
    if (opt_params[k].storage_id() != ps[k].t.storage_id())
      throw DataError("checkpoint: optimizer parameters do not match " + ps[k].name);
}

template <class T>
std::vector<TensorRecord> pack_slots(const ParamList<T>& ps,
                                     const std::vector<std::vector<T>>& slot,
                                     const char* suffix) {
  std::vector<TensorRecord> out;
  out.reserve(ps.size());
  for (std::size_t k = 0; k < ps.size(); ++k)
    out.push_back(pack_values<T>(ps[k].name + suffix, slot[k].data(),
                                 static_cast<int64_t>(slot[k].size()),
                                 {static_cast<int64_t>(slot[k].size())}));
  return out;
}

template <class T>
void unpack_slots(const OptimStateBlock& blk, const ParamList<T>& ps,
                  std::vector<std::vector<T>>& slot, const char* suffix) {
  for (std::size_t k = 0; k < ps.size(); ++k) {
    std::string name = ps[k].name + suffix;
    const TensorRecord* r = blk.find(name);
    if (!r) throw DataError("checkpoint: missing optimizer slot " + name);
    if (r->dtype != scalar_type_of<T>() ||
        r->elems() != static_cast<int64_t>(slot[k].size()))
      throw DataError("checkpoint: optimizer slot mismatch for " + name);
    std::memcpy(slot[k].data(), r->payload.data(), r->payload.size());
  }
}

}  // namespace detail

// `ps` supplies the names for the positional slot vectors; it must be the
// same list the optimizer was built over.
template <class T>
OptimStateBlock pack_optimizer(const std::string& label, const OptimizerBox<T>& box,
                               const ParamList<T>& ps) {
  OptimStateBlock blk;
  blk.label = label;
  blk.kind = static_cast<uint8_t>(box.v.index());
  std::visit(
      [&](const auto& o) {
        using O = std::decay_t<decltype(o)>;
        detail::check_aligned(o.params, ps);
        blk.lr = o.lr;
        blk.weight_decay = o.weight_decay;
        blk.clip_norm = o.clip_norm;
        if constexpr (std::is_same_v<O, SgdMomentum<T>>) {
          blk.momentum = o.momentum;
          blk.slots = detail::pack_slots(ps, o.vel, "#vel");
        } else if constexpr (std::is_same_v<O, Adagrad<T>>) {
          blk.slots = detail::pack_slots(ps, o.acc, "#acc");
        } else {
          blk.steps = o.t;
          blk.slots = detail::pack_slots(ps, o.m, "#m");
          std::vector<TensorRecord> second = detail::pack_slots(ps, o.v, "#v");
          blk.slots.insert(blk.slots.end(), second.begin(), second.end());
        }
      },
      box.v);
  return blk;
}

// Restores hyperparameters (including the live learning rate) and every slot
// vector, so an interrupted run resumes bit-for-bit.
template <class T>
void unpack_optimizer(const OptimStateBlock& blk, OptimizerBox<T>& box, const ParamList<T>& ps) {
  if (blk.kind != static_cast<uint8_t>(box.v.index()))
    throw DataError("checkpoint: optimizer kind mismatch for " + blk.label);
  std::visit(
      [&](auto& o) {
        using O = std::decay_t<decltype(o)>;
        detail::check_aligned(o.params, ps);
        o.lr = blk.lr;
        o.weight_decay = blk.weight_decay;
        o.clip_norm = blk.clip_norm;
        if constexpr (std::is_same_v<O, SgdMomentum<T>>) {
          o.momentum = blk.momentum;
          detail::unpack_slots(blk, ps, o.vel, "#vel");
        } else if constexpr (std::is_same_v<O, Adagrad<T>>) {
          detail::unpack_slots(blk, ps, o.acc, "#acc");
        } else {
          o.t = blk.steps;
          detail::unpack_slots(blk, ps, o.m, "#m");
          detail::unpack_slots(blk, ps, o.v, "#v");
        }
      },
      box.v);
}

}  // namespace seqrl
