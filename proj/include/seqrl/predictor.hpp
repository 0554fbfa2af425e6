#pragma once

#include <algorithm>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "seqrl/corpus.hpp"
#include "seqrl/layers.hpp"
#include "seqrl/optim.hpp"
#include "seqrl/tensor.hpp"

namespace seqrl {

// K distinct full-vocabulary ids, kept sorted ascending. The position of a
// global id inside `selected` is its local index in the reduced output layer.
struct VocabMask {
  std::vector<int32_t> selected;
  std::unordered_map<int32_t, int32_t> local_of_global;

  int64_t size() const { return static_cast<int64_t>(selected.size()); }
  bool contains(int32_t global) const { return local_of_global.count(global) != 0; }
  int32_t local(int32_t global) const {
    auto it = local_of_global.find(global);
    return it == local_of_global.end() ? -1 : it->second;
  }

  // Sorts, checks distinctness and range.
  static VocabMask from_ids(std::vector<int32_t> ids, int64_t vocab_size);
};

VocabMask top_k(const std::vector<double>& scores, int64_t k);

// Train mode: gold ids and the special symbols are always included and the
// rest of the mask is filled with the highest-scoring other ids, keeping the
// size at exactly k. Eval mode ignores gold and forces only the specials.
VocabMask build_mask(const std::vector<double>& scores, int64_t k,
                     const std::vector<int32_t>* gold, bool train_mode);

// Fraction of examples whose target contains word i, over the full vocabulary.
std::vector<double> vocab_prior(const std::vector<Example>& train, int64_t vocab_size);

// `example_id<TAB>comma-separated global ids`, one line per example.
void save_mask_cache(const std::string& path,
                     const std::vector<std::pair<int64_t, std::vector<int32_t>>>& masks);
std::unordered_map<int64_t, std::vector<int32_t>> load_mask_cache(const std::string& path);

// Bag-of-embeddings input head for text, affine projection for feature
// vectors, a residual block, and a per-word sigmoid output layer.
template <class T>
struct PredictorModel {
  Embedding<T> embed;     // text path: [src vocab x d_v]
  LinearLayer<T> feat;    // feature path: d_f -> d_v
  bool uses_features = false;
  ResidualBlock<T> block;
  LinearLayer<T> out;     // [tgt vocab x d_v]
  int64_t d_v = 0;

  static PredictorModel text(int64_t src_vocab, int64_t tgt_vocab, int64_t width) {
    PredictorModel m;
    m.embed = Embedding<T>(src_vocab, width);
    m.block = ResidualBlock<T>(width);
    m.out = LinearLayer<T>(tgt_vocab, width);
    m.d_v = width;
    return m;
  }

  static PredictorModel features(int64_t feat_dim, int64_t tgt_vocab, int64_t width) {
    PredictorModel m;
    m.feat = LinearLayer<T>(width, feat_dim);
    m.uses_features = true;
    m.block = ResidualBlock<T>(width);
    m.out = LinearLayer<T>(tgt_vocab, width);
    m.d_v = width;
    return m;
  }

  int64_t vocab_size() const { return out.W.dim(0); }

  ParamList<T> params() {
    ParamList<T> ps;
    if (uses_features)
      feat.collect("pred.feat", ps);
    else
      embed.collect("pred.embed", ps);
    block.collect("pred.block", ps);
    out.collect("pred.out", ps);
    return ps;
  }

  // Trainable parameters plus batch-norm running statistics, for checkpoints.
  ParamList<T> all_tensors() {
    ParamList<T> ps = params();
    ps.push_back({"pred.block.bn1.running_mean", block.bn1.running_mean, ParamKind::NormShift});
    ps.push_back({"pred.block.bn1.running_var", block.bn1.running_var, ParamKind::NormScale});
    ps.push_back({"pred.block.bn2.running_mean", block.bn2.running_mean, ParamKind::NormShift});
    ps.push_back({"pred.block.bn2.running_var", block.bn2.running_var, ParamKind::NormScale});
    return ps;
  }
};

template <class T>
Tensor<T> input_repr(Graph<T>* g, const PredictorModel<T>& model, const Example& ex) {
  if (model.uses_features) {
    if (ex.features.empty()) throw DataError("input_repr: example has no features");
    Tensor<T> f = Tensor<T>::zeros({static_cast<int64_t>(ex.features.size())});
    for (std::size_t i = 0; i < ex.features.size(); ++i)
      f.data()[static_cast<int64_t>(i)] = static_cast<T>(ex.features[i]);
    return model.feat.apply(g, f);
  }
  if (ex.src.empty()) throw DataError("input_repr: empty source");
  std::vector<int32_t> ids = ex.src;
  // summing in sorted order makes the bag exactly order-independent
  std::sort(ids.begin(), ids.end());
  Tensor<T> rows = gather_rows(g, model.embed.table, ids);
  Tensor<T> w = Tensor<T>::zeros({static_cast<int64_t>(ids.size())});
  w.fill(static_cast<T>(1.0 / static_cast<double>(ids.size())));
  return matvec_t(g, rows, w);
}

template <class T>
Tensor<T> predict_scores(Graph<T>* g, PredictorModel<T>& model, const Example& ex, bool train,
                         Rng* rng) {
  Tensor<T> r = model.block.apply(g, input_repr(g, model, ex), train, rng);
  return sigmoid(g, model.out.apply(g, r));
}

// [B x |V|] scores; batch norm sees the whole sub-batch in train mode.
template <class T>
Tensor<T> predict_scores_batch(Graph<T>* g, PredictorModel<T>& model,
                               const std::vector<Example>& batch, bool train, Rng* rng) {
  if (batch.empty()) throw DataError("predict_scores_batch: empty batch");
  std::vector<Tensor<T>> reps;
  reps.reserve(batch.size());
  for (const Example& ex : batch) reps.push_back(input_repr(g, model, ex));
  Tensor<T> x = stack_rows(g, reps);
  Tensor<T> r = model.block.apply(g, x, train, rng);
  return sigmoid(g, model.out.apply_batch(g, r));
}

// Summed over every vocabulary entry (and over the batch for 2-D inputs).
template <class T>
Tensor<T> multilabel_loss(Graph<T>* g, Tensor<T> scores, Tensor<T> targets) {
  return bce_sum(g, scores, targets, T(1e-7));
}

template <class T>
struct SmoothedTargets {
  Tensor<T> t;
  Tensor<T> prior;
};

// t_i = (1-eps)*raw_i + eps*prior_i with raw_i = [i in gold].
template <class T>
SmoothedTargets<T> smooth_targets(const std::vector<int32_t>& gold, double eps,
                                  Tensor<T> prior) {
  if (eps < 0.0 || eps >= 1.0) throw ConfigError("smooth_targets: eps must be in [0, 1)");
  SmoothedTargets<T> st;
  st.prior = prior;
  st.t = Tensor<T>::zeros(prior.shape());
  for (int64_t i = 0; i < prior.size(); ++i)
    st.t.data()[i] = static_cast<T>(eps) * prior.data()[i];
  for (int32_t id : gold) {
    if (id < 0 || id >= prior.size()) throw DataError("smooth_targets: gold id out of range");
    st.t.data()[id] = static_cast<T>(1.0 - eps) + static_cast<T>(eps) * prior.data()[id];
  }
  return st;
}

template <class T>
std::vector<double> scores_as_doubles(const Tensor<T>& scores) {
  std::vector<double> out(static_cast<std::size_t>(scores.size()));
  for (int64_t i = 0; i < scores.size(); ++i)
    out[static_cast<std::size_t>(i)] = static_cast<double>(scores.data()[i]);
  return out;
}

// Fraction of gold target occurrences (special symbols excluded) that fall
// inside each example's top-K prediction. K larger than |V| counts as |V|.
template <class T>
double recall_at_k(PredictorModel<T>& model, const std::vector<Example>& data, int64_t k) {
  if (data.empty()) throw DataError("recall_at_k: empty dataset");
  int64_t k_eff = std::min<int64_t>(k, model.vocab_size());
  if (k_eff <= 0) throw ConfigError("recall_at_k: K must be positive");
  int64_t hit = 0, total = 0;
  for (const Example& ex : data) {
    Tensor<T> s = predict_scores<T>(nullptr, model, ex, false, nullptr);
    VocabMask m = top_k(scores_as_doubles(s), k_eff);
    for (int32_t id : ex.tgt) {
      if (id < kNumSpecials) continue;
      ++total;
      if (m.contains(id)) ++hit;
    }
  }
  return total == 0 ? 1.0 : static_cast<double>(hit) / static_cast<double>(total);
}

struct PredictorTrainConfig {
  double lr = 0.08;
  int64_t batch_size = 128;
  int64_t epochs = 10;
  int64_t recall_k = 1000;
  double smooth_eps = 0.1;
  double weight_decay = 1e-6;
  double clip_norm = 1.0;
  uint64_t seed = 1;
  bool verbose = false;
};

struct PredictorEpochStats {
  int64_t epoch = 0;
  double loss = 0.0;        // mean per-example loss over the epoch
  double dev_recall = 0.0;  // recall at recall_k after the epoch
};

struct PredictorTrainResult {
  double best_recall = 0.0;
  int64_t best_epoch = -1;
  std::vector<PredictorEpochStats> curve;
};

// AdaGrad on the mean per-example multilabel loss; keeps the parameters of
// the epoch with the best dev recall.
template <class T>
PredictorTrainResult train_predictor(PredictorModel<T>& model,
                                     const std::vector<Example>& train,
                                     const std::vector<Example>& dev,
                                     const PredictorTrainConfig& cfg) {
  if (train.empty() || dev.empty()) throw DataError("train_predictor: empty dataset");
  int64_t V = model.vocab_size();
  Tensor<T> prior = Tensor<T>::zeros({V});
  {
    std::vector<double> p = vocab_prior(train, V);
    for (int64_t i = 0; i < V; ++i) prior.data()[i] = static_cast<T>(p[static_cast<std::size_t>(i)]);
  }

  ParamList<T> params = model.params();
  Adagrad<T> opt(tensors_of(params), cfg.lr, cfg.weight_decay, cfg.clip_norm);

  PredictorTrainResult result;
  // snapshot includes the batch-norm running statistics, so the restored
  // model is exactly the best-epoch model in eval mode
  ParamList<T> state = model.all_tensors();
  std::vector<Tensor<T>> best;
  for (Param<T>& p : state) best.push_back(p.t.detach_copy());

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    int64_t seen = 0;
    std::vector<Batch> batches =
        batch_iter(train, cfg.batch_size, mix_seed(cfg.seed, static_cast<uint64_t>(epoch)));
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const std::vector<Example>& exs = batches[bi].examples;
      int64_t B = static_cast<int64_t>(exs.size());
      Tensor<T> targets = Tensor<T>::zeros({B, V});
      for (int64_t r = 0; r < B; ++r) {
        SmoothedTargets<T> st =
            smooth_targets(exs[static_cast<std::size_t>(r)].tgt, cfg.smooth_eps, prior);
        std::copy(st.t.data(), st.t.data() + V, targets.data() + r * V);
      }
      Rng rng(mix_seed(cfg.seed, mix_seed(static_cast<uint64_t>(epoch) + 1, bi)));
      Graph<T> g;
      Tensor<T> scores = predict_scores_batch(&g, model, exs, true, &rng);
      Tensor<T> loss = scale(&g, multilabel_loss(&g, scores, targets),
                             static_cast<T>(1.0 / static_cast<double>(B)));
      g.backward(loss);
      g.clear();
      opt.step();
      opt.zero_grad();
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(B);
      seen += B;
    }

    double recall = recall_at_k(model, dev, cfg.recall_k);
    result.curve.push_back({epoch, loss_sum / static_cast<double>(seen), recall});
    if (recall > result.best_recall || result.best_epoch < 0) {
      result.best_recall = recall;
      result.best_epoch = epoch;
      for (std::size_t i = 0; i < state.size(); ++i) best[i].copy_values_from(state[i].t);
    }
  }

  for (std::size_t i = 0; i < state.size(); ++i) state[i].t.copy_values_from(best[i]);
  return result;
}

}  // namespace seqrl
