#pragma once

#include <utility>
#include <vector>

#include "seqrl/corpus.hpp"
#include "seqrl/layers.hpp"
#include "seqrl/predictor.hpp"
#include "seqrl/tensor.hpp"

namespace seqrl {

enum class AttnKind { Dot, General };

// Attention encoder-decoder for token sources; decoder initialized from a
// dense feature vector (no attention, no input feed) for feature sources.
// The output projection W_p doubles as the target embedding table.
template <class T>
struct GeneratorModel {
  // text path
  Embedding<T> src_embed;              // [src vocab x d]
  LstmCell<T> enc_fwd, enc_bwd;        // d -> d each; states are [fwd; bwd]
  Tensor<T> W_a;                       // [d x 2d], "general" attention scoring
  LinearLayer<T> attn_out;             // W_s: [d x 3d], b_s: [d]
  // feature path
  LinearLayer<T> feat;                 // [d x d_f]
  // decoder
  std::vector<LstmCell<T>> dec;        // 1 or 2 layers, width d
  // tied output head
  Tensor<T> W_p;                       // [tgt vocab x d]
  Tensor<T> b_p;                       // [tgt vocab]
  Embedding<T> tgt_embed;              // aliases W_p

  bool uses_features = false;
  bool use_attention = true;
  bool input_feed = true;
  AttnKind attn_kind = AttnKind::General;
  int64_t d = 0;
  double dropout_rate = 0.2;

  static GeneratorModel text(int64_t src_vocab, int64_t tgt_vocab, int64_t width,
                             int64_t layers, AttnKind kind = AttnKind::General,
                             bool feed = true) {
    if (layers < 1 || layers > 2) throw ConfigError("generator: layers must be 1 or 2");
    if (kind == AttnKind::Dot)
      throw ConfigError(
          "generator: dot attention needs decoder and encoder widths to match; "
          "the bidirectional encoder emits 2d-wide states");
    GeneratorModel m;
    m.d = width;
    m.src_embed = Embedding<T>(src_vocab, width);
    m.enc_fwd = LstmCell<T>(width, width);
    m.enc_bwd = LstmCell<T>(width, width);
    m.W_a = Tensor<T>::zeros({width, 2 * width});
    m.attn_out = LinearLayer<T>(width, 3 * width);
    m.attn_kind = kind;
    m.input_feed = feed;
    for (int64_t l = 0; l < layers; ++l) {
      int64_t in = l == 0 ? (feed ? 2 * width : width) : width;
      m.dec.emplace_back(in, width);
    }
    m.W_p = Tensor<T>::zeros({tgt_vocab, width});
    m.b_p = Tensor<T>::zeros({tgt_vocab});
    m.tgt_embed = Embedding<T>::tied(m.W_p);
    return m;
  }

  static GeneratorModel features(int64_t feat_dim, int64_t tgt_vocab, int64_t width,
                                 int64_t layers) {
    if (layers < 1 || layers > 2) throw ConfigError("generator: layers must be 1 or 2");
    GeneratorModel m;
    m.d = width;
    m.uses_features = true;
    m.use_attention = false;
    m.input_feed = false;  // attention off implies no input feed
    m.feat = LinearLayer<T>(width, feat_dim);
    for (int64_t l = 0; l < layers; ++l) m.dec.emplace_back(width, width);
    m.W_p = Tensor<T>::zeros({tgt_vocab, width});
    m.b_p = Tensor<T>::zeros({tgt_vocab});
    m.tgt_embed = Embedding<T>::tied(m.W_p);
    return m;
  }

  int64_t vocab_size() const { return W_p.dim(0); }
  int64_t layers() const { return static_cast<int64_t>(dec.size()); }

  ParamList<T> params() {
    ParamList<T> ps;
    if (uses_features) {
      feat.collect("gen.feat", ps);
    } else {
      src_embed.collect("gen.src_embed", ps);
      enc_fwd.collect("gen.enc_fwd", ps);
      enc_bwd.collect("gen.enc_bwd", ps);
      ps.push_back({"gen.attn.W_a", W_a, ParamKind::WeightMatrix});
      attn_out.collect("gen.attn_out", ps);
    }
    for (std::size_t l = 0; l < dec.size(); ++l)
      dec[l].collect("gen.dec" + std::to_string(l), ps);
    ps.push_back({"gen.head.W_p", W_p, ParamKind::WeightMatrix});
    ps.push_back({"gen.head.b_p", b_p, ParamKind::BiasZero});
    return ps;
  }
};

template <class T>
struct DecoderState {
  std::vector<Tensor<T>> h, c;  // one per layer
  Tensor<T> s_prev;             // last attentional vector (text path input feed)
  Tensor<T> enc_states;         // [M x 2d] stacked encoder states
  Tensor<T> attn_proj;          // [M x d] == enc_states * W_a^T, reused each step
  int64_t t = 0;
};

// The K-row view of the output head for one example. Rows of W_sub are
// copies of the masked rows of W_p; backward scatters into exactly them.
template <class T>
struct ReducedHead {
  VocabMask mask;
  Tensor<T> W_sub;  // [K x d]
  Tensor<T> b_sub;  // [K]
};

template <class T>
ReducedHead<T> make_reduced_head(Graph<T>* g, GeneratorModel<T>& model, VocabMask mask) {
  ReducedHead<T> head;
  head.W_sub = gather_rows(g, model.W_p, mask.selected);
  head.b_sub = gather(g, model.b_p, mask.selected);
  head.mask = std::move(mask);
  return head;
}

template <class T>
DecoderState<T> encode(Graph<T>* g, GeneratorModel<T>& model,
                       const std::vector<int32_t>& src) {
  if (model.uses_features) throw ConfigError("encode: feature-path model");
  if (src.empty()) throw DataError("encode: empty source");
  std::vector<Tensor<T>> emb;
  emb.reserve(src.size());
  for (int32_t id : src) {
    if (id < 0 || id >= model.src_embed.table.dim(0))
      throw DataError("encode: source id out of range");
    emb.push_back(model.src_embed.lookup(g, id));
  }
  auto [states, h0] = bilstm_encode(g, model.enc_fwd, model.enc_bwd, emb);
  DecoderState<T> st;
  st.enc_states = stack_rows(g, states);
  if (model.attn_kind == AttnKind::General)
    st.attn_proj = matmul_nt(g, st.enc_states, model.W_a);
  st.h.push_back(h0);
  st.c.push_back(Tensor<T>::zeros({model.d}, g != nullptr));
  for (int64_t l = 1; l < model.layers(); ++l) {
    st.h.push_back(Tensor<T>::zeros({model.d}, g != nullptr));
    st.c.push_back(Tensor<T>::zeros({model.d}, g != nullptr));
  }
  st.s_prev = Tensor<T>::zeros({model.d}, g != nullptr);
  return st;
}

template <class T>
DecoderState<T> init_from_features(Graph<T>* g, GeneratorModel<T>& model,
                                   const std::vector<double>& features) {
  if (!model.uses_features) throw ConfigError("init_from_features: text-path model");
  if (static_cast<int64_t>(features.size()) != model.feat.W.dim(1))
    throw ShapeError("init_from_features: feature width mismatch");
  Tensor<T> f = Tensor<T>::zeros({static_cast<int64_t>(features.size())});
  for (std::size_t i = 0; i < features.size(); ++i)
    f.data()[static_cast<int64_t>(i)] = static_cast<T>(features[i]);
  DecoderState<T> st;
  st.h.push_back(tanh(g, model.feat.apply(g, f)));
  st.c.push_back(Tensor<T>::zeros({model.d}, g != nullptr));
  for (int64_t l = 1; l < model.layers(); ++l) {
    st.h.push_back(Tensor<T>::zeros({model.d}, g != nullptr));
    st.c.push_back(Tensor<T>::zeros({model.d}, g != nullptr));
  }
  return st;
}

// a = softmax of the "general" scores h_t^T W_a state_i; attn_proj caches
// the W_a-projected states for the whole sentence.
template <class T>
Tensor<T> attention_weights(Graph<T>* g, const DecoderState<T>& st, Tensor<T> h_t) {
  if (!st.enc_states.defined() || st.enc_states.dim(0) == 0)
    throw DataError("attention: no encoder states");
  return softmax(g, matvec(g, st.attn_proj, h_t));
}

// s_t = tanh(W_s [h_t ; sum_i a_i state_i] + b_s)
template <class T>
Tensor<T> attention(Graph<T>* g, GeneratorModel<T>& model, const DecoderState<T>& st,
                    Tensor<T> h_t) {
  Tensor<T> a = attention_weights(g, st, h_t);
  Tensor<T> ctx = matvec_t(g, st.enc_states, a);
  return tanh(g, model.attn_out.apply(g, concat(g, {h_t, ctx})));
}

template <class T>
struct StepResult {
  DecoderState<T> state;
  Tensor<T> logits;    // [|V|] or [K]
  Tensor<T> dist;      // softmax(logits)
  Tensor<T> pre_head;  // s_t (text) or top h_t (features); baseline input
};

// One decoder step from the previous token's global id. Pass a head for the
// reduced output layer; local index i of the result means global id
// head->mask.selected[i].
template <class T>
StepResult<T> step(Graph<T>* g, GeneratorModel<T>& model, const DecoderState<T>& st,
                   int64_t prev_global_id, const ReducedHead<T>* head, bool train = false,
                   Rng* rng = nullptr) {
  if (prev_global_id < 0 || prev_global_id >= model.vocab_size())
    throw DataError("step: previous token id out of range");
  StepResult<T> out;
  out.state.enc_states = st.enc_states;
  out.state.attn_proj = st.attn_proj;
  out.state.t = st.t + 1;

  Tensor<T> x = model.tgt_embed.lookup(g, prev_global_id);
  if (model.input_feed) x = concat(g, {x, st.s_prev});
  for (int64_t l = 0; l < model.layers(); ++l) {
    auto [h, c] = lstm_step(g, model.dec[static_cast<std::size_t>(l)],
                            st.h[static_cast<std::size_t>(l)],
                            st.c[static_cast<std::size_t>(l)], x);
    out.state.h.push_back(h);
    out.state.c.push_back(c);
    // dropout between stacked layers and on the pre-head vector below
    x = l + 1 < model.layers() ? dropout(g, h, model.dropout_rate, train, rng) : h;
  }

  if (model.use_attention) {
    Tensor<T> s_t = attention(g, model, st, out.state.h.back());
    out.state.s_prev = s_t;
    out.pre_head = dropout(g, s_t, model.dropout_rate, train, rng);
  } else {
    out.state.s_prev = st.s_prev;
    out.pre_head = dropout(g, out.state.h.back(), model.dropout_rate, train, rng);
  }

  out.logits = head ? linear(g, head->W_sub, head->b_sub, out.pre_head)
                    : linear(g, model.W_p, model.b_p, out.pre_head);
  out.dist = softmax(g, out.logits);
  return out;
}

template <class T>
Tensor<T> output_dist_full(Graph<T>* g, GeneratorModel<T>& model, Tensor<T> x) {
  return softmax(g, linear(g, model.W_p, model.b_p, x));
}

template <class T>
Tensor<T> output_dist_reduced(Graph<T>* g, const ReducedHead<T>& head, Tensor<T> x) {
  return softmax(g, linear(g, head.W_sub, head.b_sub, x));
}

template <class T>
struct SampleResult {
  std::vector<int32_t> tokens;      // global ids, EOS included unless truncated
  std::vector<Tensor<T>> logps;     // recorded scalar log p(y_t), one per step
  std::vector<Tensor<T>> states;    // pre-head vectors, one per step
  bool truncated = false;
};

// Samples until EOS or max_n tokens. With greedy=true takes the argmax
// instead (ties to the lower local index).
template <class T>
SampleResult<T> sample_sentence(Graph<T>* g, GeneratorModel<T>& model, const Example& ex,
                                const ReducedHead<T>* head, int64_t max_n, Rng* rng,
                                bool greedy = false, bool train = false) {
  if (max_n <= 0) throw ConfigError("sample_sentence: max_n must be positive");
  if (!greedy && !rng) throw ConfigError("sample_sentence: sampling needs an RNG");
  DecoderState<T> st = model.uses_features ? init_from_features(g, model, ex.features)
                                           : encode(g, model, ex.src);
  SampleResult<T> res;
  int64_t prev = kBos;
  for (int64_t t = 0; t < max_n; ++t) {
    StepResult<T> sr = step(g, model, st, prev, head, train, rng);
    st = sr.state;
    int64_t k = sr.dist.size();
    int64_t pick = 0;
    if (greedy) {
      const T* p = sr.dist.data();
      for (int64_t i = 1; i < k; ++i)
        if (p[i] > p[pick]) pick = i;
    } else {
      double u = rng->uniform01();
      double acc = 0.0;
      pick = k - 1;
      for (int64_t i = 0; i < k; ++i) {
        acc += static_cast<double>(sr.dist.data()[i]);
        if (u < acc) {
          pick = i;
          break;
        }
      }
    }
    int32_t global = head ? head->mask.selected[static_cast<std::size_t>(pick)]
                          : static_cast<int32_t>(pick);
    res.tokens.push_back(global);
    res.logps.push_back(log(g, gather(g, sr.dist, {static_cast<int32_t>(pick)})));
    res.states.push_back(sr.pre_head);
    if (global == kEos) return res;
    prev = global;
  }
  res.truncated = true;
  return res;
}

}  // namespace seqrl
