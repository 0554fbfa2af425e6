#pragma once

#include <algorithm>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "seqrl/alloc.hpp"
#include "seqrl/generator.hpp"
#include "seqrl/metrics.hpp"
#include "seqrl/optim.hpp"

namespace seqrl {

// Per-example masks keyed by example id; nullptr anywhere means full vocabulary.
using MaskTable = std::unordered_map<int64_t, VocabMask>;

inline const VocabMask& mask_for(const MaskTable& masks, const Example& ex) {
  auto it = masks.find(ex.id);
  if (it == masks.end())
    throw DataError("no mask for example " + std::to_string(ex.id));
  return it->second;
}

// Linear regressor over the decoder's pre-head state, squashed to (0,1).
// Trained on its own loss; the state input is always detached, so its
// gradients never touch the generator.
template <class T>
struct BaselineEstimator {
  Tensor<T> W_r;  // [d]
  Tensor<T> b_r;  // scalar

  static BaselineEstimator make(int64_t d, Rng& rng) {
    BaselineEstimator b;
    b.W_r = Tensor<T>::zeros({d});
    b.b_r = Tensor<T>::scalar(T(0));
    fill_uniform(b.W_r, rng, -0.1, 0.1);
    b.W_r.set_requires_grad(true);
    b.b_r.set_requires_grad(true);
    return b;
  }

  ParamList<T> params() {
    return {{"baseline.W_r", W_r, ParamKind::WeightMatrix},
            {"baseline.b_r", b_r, ParamKind::BiasZero}};
  }

  Tensor<T> predict(Graph<T>* g, Tensor<T> state) {
    return sigmoid(g, add(g, dot(g, W_r, state), b_r));
  }
};

// One sampled sentence with everything REINFORCE needs: the actions, their
// recorded log-probabilities, the baseline predictions, and the rewards
// R_t = GLEU(Y, Y_g) - b_t (sentence-level score broadcast to every step).
template <class T>
struct RewardTrace {
  std::vector<int32_t> tokens;
  std::vector<Tensor<T>> logps;      // in-graph scalars
  std::vector<Tensor<T>> baselines;  // in-graph scalars through W_r, b_r only
  std::vector<T> baseline_values;
  std::vector<T> rewards;
  T gleu_score = T(0);
  bool truncated = false;

  std::size_t size() const { return tokens.size(); }
};

template <class T>
RewardTrace<T> run_episode(Graph<T>* g, GeneratorModel<T>& model, BaselineEstimator<T>& bl,
                           const Example& ex, const ReducedHead<T>* head, int64_t max_n,
                           Rng* rng, bool train) {
  SampleResult<T> sr = sample_sentence(g, model, ex, head, max_n, rng, false, train);
  RewardTrace<T> tr;
  tr.tokens = sr.tokens;
  tr.logps.reserve(sr.logps.size());
  for (Tensor<T>& lp : sr.logps)  // one-element [1] tensors down to scalars
    tr.logps.push_back(lp.ndim() == 0 ? lp : sum(g, lp));
  tr.truncated = sr.truncated;
  tr.gleu_score =
      static_cast<T>(gleu(without_trailing_eos(tr.tokens), without_trailing_eos(ex.tgt)));
  tr.baselines.reserve(sr.states.size());
  for (Tensor<T>& s : sr.states) {
    Tensor<T> b = bl.predict(g, s.detach_copy());
    tr.baselines.push_back(b);
    tr.baseline_values.push_back(b.item());
    tr.rewards.push_back(tr.gleu_score - b.item());
  }
  return tr;
}

// Teacher-forced -sum_t log p(y_t | y_<t, X). With a reduced head, gold ids
// are looked up in the mask; an absent id throws unless `skipped_gold` is
// given, in which case the position contributes nothing and is counted.
template <class T>
Tensor<T> xent_loss(Graph<T>* g, GeneratorModel<T>& model, const Example& ex,
                    const ReducedHead<T>* head = nullptr, bool train = false,
                    Rng* rng = nullptr, int64_t* skipped_gold = nullptr) {
  DecoderState<T> st = model.uses_features ? init_from_features(g, model, ex.features)
                                           : encode(g, model, ex.src);
  Tensor<T> total = Tensor<T>::scalar(T(0), g != nullptr);
  int64_t prev = kBos;
  for (int32_t y : ex.tgt) {
    StepResult<T> res = step(g, model, st, prev, head, train, rng);
    int64_t target = y;
    if (head) {
      target = head->mask.local(y);
      if (target < 0) {
        if (!skipped_gold)
          throw DataError("xent_loss: gold id " + std::to_string(y) + " absent from mask");
        ++*skipped_gold;
        st = res.state;
        prev = y;
        continue;
      }
    }
    total = add(g, total, nll_from_logits(g, res.logits, target));
    st = res.state;
    prev = y;
  }
  return total;
}

// L_r = -sum_t R_t log p(y_t | y_<t, X); the rewards are constants here, so
// no gradient reaches the baseline through this loss.
template <class T>
Tensor<T> reinforce_loss(Graph<T>* g, const RewardTrace<T>& trace) {
  if (trace.size() == 0) throw DataError("reinforce_loss: empty trace");
  Tensor<T> total = Tensor<T>::scalar(T(0), g != nullptr);
  for (std::size_t t = 0; t < trace.size(); ++t)
    total = add(g, total, scale(g, trace.logps[t], -trace.rewards[t]));
  return total;
}

template <class T>
T reinforce_loss_value(const std::vector<T>& rewards, const std::vector<T>& logps) {
  if (rewards.size() != logps.size() || rewards.empty())
    throw DataError("reinforce_loss_value: malformed trace");
  T total = T(0);
  for (std::size_t t = 0; t < rewards.size(); ++t) total -= rewards[t] * logps[t];
  return total;
}

// sum_t (b_t - GLEU)^2. Only W_r and b_r receive gradients: the baselines
// were built on detached states.
template <class T>
Tensor<T> baseline_loss(Graph<T>* g, const RewardTrace<T>& trace) {
  if (trace.size() == 0) throw DataError("baseline_loss: empty trace");
  Tensor<T> target = Tensor<T>::scalar(trace.gleu_score, g != nullptr);
  Tensor<T> total = Tensor<T>::scalar(T(0), g != nullptr);
  for (const Tensor<T>& b : trace.baselines) {
    Tensor<T> diff = sub(g, b, target);
    total = add(g, total, mul(g, diff, diff));
  }
  return total;
}

enum class OptKind { SgdMomentumOpt, AdagradOpt, AdamOpt };

template <class T>
struct TrainConfig {
  OptKind optimizer = OptKind::SgdMomentumOpt;
  double lr = 1.0;  // generator cross-entropy default; RL uses 0.01
  double momentum = 0.75;
  double weight_decay = 1e-6;
  double clip_norm = 1.0;
  double lambda = 0.005;  // joint-loss mix: lambda*L_c + (1-lambda)*L_r
  int64_t k = 1000;
  int64_t split = 1;  // S sub-batches per update
  int64_t batch_size = 128;
  int64_t max_len = 50;  // sampling cap, EOS included
  double dropout = 0.2;
  double freeze_epochs = 6.0;
  int64_t epochs = 10;
  uint64_t seed = 1;
  bool rl_gold_union = false;  // RL-phase masks include gold ids when set
  double baseline_lr = 1e-3;

  void validate() const {
    if (lambda < 0.0 || lambda > 1.0) throw ConfigError("config: lambda must be in [0,1]");
    if (split < 1) throw ConfigError("config: split must be >= 1");
    if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (max_len < 1) throw ConfigError("config: max_len must be >= 1");
    if (epochs < 0) throw ConfigError("config: epochs must be >= 0");
    if (k < 1) throw ConfigError("config: k must be >= 1");
    if (lr < 0.0 || momentum < 0.0 || weight_decay < 0.0 || clip_norm < 0.0 ||
        baseline_lr < 0.0)
      throw ConfigError("config: rates must be nonnegative");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("config: dropout must be in [0,1)");
    if (freeze_epochs < 0.0) throw ConfigError("config: freeze_epochs must be >= 0");
  }
};

template <class T>
struct OptimizerBox {
  std::variant<SgdMomentum<T>, Adagrad<T>, Adam<T>> v;

  static OptimizerBox make(const TrainConfig<T>& cfg, std::vector<Tensor<T>> ts) {
    switch (cfg.optimizer) {
      case OptKind::AdagradOpt:
        return {Adagrad<T>(std::move(ts), cfg.lr, cfg.weight_decay, cfg.clip_norm)};
      case OptKind::AdamOpt:
        return {Adam<T>(std::move(ts), cfg.lr, cfg.weight_decay, cfg.clip_norm)};
      default:
        return {SgdMomentum<T>(std::move(ts), cfg.lr, cfg.momentum, cfg.weight_decay,
                               cfg.clip_norm)};
    }
  }

  void step() {
    std::visit([](auto& o) { o.step(); }, v);
  }
  void zero_grad() {
    std::visit([](auto& o) { o.zero_grad(); }, v);
  }
  double lr() const {
    return std::visit([](const auto& o) { return o.lr; }, v);
  }
  void set_lr(double x) {
    std::visit([x](auto& o) { o.lr = x; }, v);
  }
};

// One optimizer update computed over S sub-batches: each sub-batch gets its
// own graph (forward, backward, free) and gradients accumulate across them,
// so peak live activations scale with |batch|/S. `per_example` maps
// (graph, example) to that example's scalar loss; the total is scaled by
// 1/|batch| before backward. Returns the mean loss.
template <class T, class PerExample, class... Opts>
double split_update(const Batch& batch, int64_t s, PerExample&& per_example, Opts&... opts) {
  if (s < 1) throw ConfigError("split_update: S must be >= 1");
  if (s > static_cast<int64_t>(batch.size()))
    throw ConfigError("split_update: S exceeds the batch size");
  (opts.zero_grad(), ...);
  const T inv = T(1) / static_cast<T>(batch.size());
  double total = 0.0;
  for (const Batch& sub : split_batch(batch, s)) {
    Graph<T> g;
    Tensor<T> acc = Tensor<T>::scalar(T(0), true);
    for (const Example& ex : sub.examples) acc = add(&g, acc, per_example(&g, ex));
    Tensor<T> scaled = scale(&g, acc, inv);
    total += static_cast<double>(scaled.item());
    g.backward(scaled);
    g.clear();
  }
  (opts.step(), ...);
  return total;
}

template <class T>
struct JointMetrics {
  double mean_gleu = 0;
  double joint_loss = 0;      // mean lambda*L_c + (1-lambda)*L_r
  double xent_term = 0;       // mean L_c (0 when lambda == 0: not computed)
  double reinforce_term = 0;  // mean L_r (0 when lambda == 1: not computed)
  double baseline_term = 0;   // mean baseline regression loss
  int64_t skipped_gold = 0;   // gold positions outside the mask in the L_c term
  int64_t tokens_sampled = 0;
};

// One REINFORCE update on a batch: per example, sample an episode under the
// example's mask, score it with GLEU, and accumulate
// lambda*L_c + (1-lambda)*L_r plus the baseline regression loss.
// The cross-entropy term runs on the same example with teacher forcing; gold
// positions missing from the mask are skipped and counted.
template <class T, class GenOpt, class BlOpt>
JointMetrics<T> joint_step(GeneratorModel<T>& model, BaselineEstimator<T>& bl,
                           const Batch& batch, const MaskTable* masks,
                           const TrainConfig<T>& cfg, GenOpt& gen_opt, BlOpt& bl_opt,
                           uint64_t step_seed) {
  if (batch.size() == 0) throw DataError("joint_step: empty batch");
  JointMetrics<T> m;
  double gleu_sum = 0, xent_sum = 0, reinf_sum = 0, base_sum = 0;
  const T lam = static_cast<T>(cfg.lambda);
  int64_t s = std::min<int64_t>(cfg.split, static_cast<int64_t>(batch.size()));

  auto per_example = [&](Graph<T>* g, const Example& ex) -> Tensor<T> {
    ReducedHead<T> head;
    const ReducedHead<T>* hp = nullptr;
    if (masks) {
      head = make_reduced_head(g, model, mask_for(*masks, ex));
      hp = &head;
    }
    Rng rng_sample(mix_seed(step_seed, mix_seed(2, static_cast<uint64_t>(ex.id))));
    RewardTrace<T> tr = run_episode(g, model, bl, ex, hp, cfg.max_len, &rng_sample, true);
    gleu_sum += static_cast<double>(tr.gleu_score);
    m.tokens_sampled += static_cast<int64_t>(tr.size());

    Tensor<T> total = baseline_loss(g, tr);
    base_sum += static_cast<double>(total.item());
    if (cfg.lambda < 1.0) {
      Tensor<T> lr_loss = reinforce_loss(g, tr);
      reinf_sum += static_cast<double>(lr_loss.item());
      total = add(g, total, scale(g, lr_loss, T(1) - lam));
    }
    if (cfg.lambda > 0.0) {
      Rng rng_ce(mix_seed(step_seed, mix_seed(1, static_cast<uint64_t>(ex.id))));
      Tensor<T> lc = xent_loss(g, model, ex, hp, true, &rng_ce, &m.skipped_gold);
      xent_sum += static_cast<double>(lc.item());
      total = add(g, total, scale(g, lc, lam));
    }
    return total;
  };

  split_update<T>(batch, s, per_example, gen_opt, bl_opt);
  double n = static_cast<double>(batch.size());
  m.mean_gleu = gleu_sum / n;
  m.xent_term = xent_sum / n;
  m.reinforce_term = reinf_sum / n;
  m.baseline_term = base_sum / n;
  m.joint_loss = (cfg.lambda * xent_sum + (1.0 - cfg.lambda) * reinf_sum) / n;
  return m;
}

struct CurveRow {
  double epoch = 0;
  std::string phase;  // "xent" or "rl"
  double loss = 0;
  double dev_gleu = 0;
  double dev_bleu = 0;
  double lr = 0;
  double seconds = 0;
  uint64_t peak_bytes = 0;
};

inline void write_curves_csv(const std::string& path, const std::vector<CurveRow>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "epoch,phase,loss,dev_gleu,dev_bleu,lr,seconds,peak_bytes\n";
  for (const CurveRow& r : rows)
    out << r.epoch << ',' << r.phase << ',' << r.loss << ',' << r.dev_gleu << ','
        << r.dev_bleu << ',' << r.lr << ',' << r.seconds << ',' << r.peak_bytes << '\n';
}

struct EvalResult {
  double bleu = 0;
  double gleu = 0;
};

// Greedy decoding over a dataset; BLEU on the corpus, GLEU averaged per
// sentence, both with the terminating EOS stripped.
template <class T>
EvalResult evaluate_greedy(GeneratorModel<T>& model, const std::vector<Example>& data,
                           const MaskTable* masks, int64_t max_len) {
  if (data.empty()) throw DataError("evaluate_greedy: empty dataset");
  std::vector<std::vector<int32_t>> hyps, refs;
  hyps.reserve(data.size());
  refs.reserve(data.size());
  double gsum = 0;
  for (const Example& ex : data) {
    ReducedHead<T> head;
    const ReducedHead<T>* hp = nullptr;
    if (masks) {
      head = make_reduced_head<T>(nullptr, model, mask_for(*masks, ex));
      hp = &head;
    }
    SampleResult<T> sr = sample_sentence<T>(nullptr, model, ex, hp, max_len, nullptr, true);
    std::vector<int32_t> hyp = without_trailing_eos(sr.tokens);
    std::vector<int32_t> ref = without_trailing_eos(ex.tgt);
    gsum += gleu(hyp, ref);
    hyps.push_back(std::move(hyp));
    refs.push_back(std::move(ref));
  }
  return {corpus_bleu(hyps, refs), gsum / static_cast<double>(data.size())};
}

template <class T>
std::vector<std::vector<T>> snapshot_values(const std::vector<Tensor<T>>& ts) {
  std::vector<std::vector<T>> snap;
  snap.reserve(ts.size());
  for (const Tensor<T>& t : ts)
    snap.emplace_back(t.data(), t.data() + t.size());
  return snap;
}

template <class T>
void restore_values(std::vector<Tensor<T>>& ts, const std::vector<std::vector<T>>& snap) {
  for (std::size_t i = 0; i < ts.size(); ++i)
    std::copy(snap[i].begin(), snap[i].end(), ts[i].data());
}

template <class T>
struct PhaseResult {
  double best_score = -1;  // dev BLEU (xent phase) or dev GLEU (rl phase)
  double best_epoch = -1;
  std::vector<CurveRow> curve;
};

namespace detail {

// Shared epoch loop: run `run_batch` over every batch, evaluating the dev
// score at every half epoch for LR halving and best-model selection.
template <class T, class RunBatch, class Snapshot, class Restore>
PhaseResult<T> run_phase(const char* phase, const std::vector<Example>& train,
                         const std::vector<Example>& dev, const MaskTable* dev_masks,
                         GeneratorModel<T>& model, const TrainConfig<T>& cfg,
                         OptimizerBox<T>& opt, bool select_on_gleu, RunBatch&& run_batch,
                         Snapshot&& snapshot, Restore&& restore) {
  cfg.validate();
  if (train.empty()) throw DataError("run_phase: empty training set");
  LrSchedule sched(cfg.lr, cfg.freeze_epochs);
  PhaseResult<T> out;
  bool have_best = false;

  for (int64_t e = 1; e <= cfg.epochs; ++e) {
    std::vector<Batch> batches =
        batch_iter(train, cfg.batch_size, mix_seed(cfg.seed, static_cast<uint64_t>(e)));
    std::size_t half = (batches.size() + 1) / 2;
    double loss_sum = 0;
    std::size_t loss_count = 0;
    alloc::Timer timer;
    std::optional<alloc::Scope> scope;
    scope.emplace(std::string(phase) + "-segment");

    auto check_point = [&](double epoch_mark) {
      EvalResult ev = evaluate_greedy(model, dev, dev_masks, cfg.max_len);
      double score = select_on_gleu ? ev.gleu : ev.bleu;
      opt.set_lr(sched.observe(score, epoch_mark));
      if (!have_best || score > out.best_score) {
        out.best_score = score;
        out.best_epoch = epoch_mark;
        snapshot();
        have_best = true;
      }
      out.curve.push_back({epoch_mark, phase, loss_count ? loss_sum / loss_count : 0.0,
                           ev.gleu, ev.bleu, opt.lr(), timer.elapsed_ms() / 1000.0,
                           scope->peak_bytes()});
      loss_sum = 0;
      loss_count = 0;
      timer.reset();
      scope.reset();
      scope.emplace(std::string(phase) + "-segment");
    };

    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      uint64_t step_seed =
          mix_seed(mix_seed(cfg.seed, static_cast<uint64_t>(e)), static_cast<uint64_t>(bi + 1));
      loss_sum += run_batch(batches[bi], step_seed);
      ++loss_count;
      if (bi + 1 == half && bi + 1 < batches.size())
        check_point(static_cast<double>(e) - 0.5);
    }
    check_point(static_cast<double>(e));
  }
  if (have_best) restore();
  return out;
}

}  // namespace detail

// Cross-entropy pre-training with dev-BLEU model selection. Masks are the
// gold-union kind, so the reduced loss is always defined.
template <class T>
PhaseResult<T> run_xent_phase(GeneratorModel<T>& model, const std::vector<Example>& train,
                              const std::vector<Example>& dev, const MaskTable* train_masks,
                              const MaskTable* dev_masks, const TrainConfig<T>& cfg) {
  model.dropout_rate = cfg.dropout;
  OptimizerBox<T> opt = OptimizerBox<T>::make(cfg, tensors_of(model.params()));
  std::vector<Tensor<T>> model_ts = tensors_of(model.params());
  std::vector<std::vector<T>> best;

  auto run_batch = [&](const Batch& batch, uint64_t step_seed) {
    int64_t s = std::min<int64_t>(cfg.split, static_cast<int64_t>(batch.size()));
    auto per_example = [&](Graph<T>* g, const Example& ex) -> Tensor<T> {
      ReducedHead<T> head;
      const ReducedHead<T>* hp = nullptr;
      if (train_masks) {
        head = make_reduced_head(g, model, mask_for(*train_masks, ex));
        hp = &head;
      }
      Rng rng(mix_seed(step_seed, mix_seed(1, static_cast<uint64_t>(ex.id))));
      return xent_loss(g, model, ex, hp, true, &rng);
    };
    return split_update<T>(batch, s, per_example, opt);
  };

  return detail::run_phase<T>(
      "xent", train, dev, dev_masks, model, cfg, opt, false, run_batch,
      [&] { best = snapshot_values(model_ts); }, [&] { restore_values(model_ts, best); });
}

// REINFORCE phase with the joint loss; selection and LR halving follow dev
// GLEU, the quantity the reward optimizes.
template <class T>
PhaseResult<T> run_rl_phase(GeneratorModel<T>& model, BaselineEstimator<T>& bl,
                            const std::vector<Example>& train, const std::vector<Example>& dev,
                            const MaskTable* train_masks, const MaskTable* dev_masks,
                            const TrainConfig<T>& cfg) {
  model.dropout_rate = cfg.dropout;
  OptimizerBox<T> gen_opt = OptimizerBox<T>::make(cfg, tensors_of(model.params()));
  TrainConfig<T> bl_cfg = cfg;
  bl_cfg.optimizer = OptKind::AdamOpt;
  bl_cfg.lr = cfg.baseline_lr;
  OptimizerBox<T> bl_opt = OptimizerBox<T>::make(bl_cfg, tensors_of(bl.params()));

  std::vector<Tensor<T>> model_ts = tensors_of(model.params());
  std::vector<Tensor<T>> bl_ts = tensors_of(bl.params());
  std::vector<std::vector<T>> best_model, best_bl;

  auto run_batch = [&](const Batch& batch, uint64_t step_seed) {
    JointMetrics<T> jm = joint_step(model, bl, batch, train_masks, cfg, gen_opt, bl_opt,
                                    step_seed);
    return jm.joint_loss;
  };

  return detail::run_phase<T>(
      "rl", train, dev, dev_masks, model, cfg, gen_opt, true, run_batch,
      [&] {
        best_model = snapshot_values(model_ts);
        best_bl = snapshot_values(bl_ts);
      },
      [&] {
        restore_values(model_ts, best_model);
        restore_values(bl_ts, best_bl);
      });
}

template <class T>
struct PipelineResult {
  std::vector<CurveRow> curve;  // xent rows followed by rl rows
  EvalResult after_xent;
  EvalResult after_rl;
  PhaseResult<T> xent;
  PhaseResult<T> rl;
};

// Cross-entropy pre-training followed by the REINFORCE phase. Zero pretrain
// epochs starts RL from the initial parameters. Each phase restores its best
// model before handing over.
template <class T>
PipelineResult<T> pretrain_then_rl(GeneratorModel<T>& model, BaselineEstimator<T>& bl,
                                   const std::vector<Example>& train,
                                   const std::vector<Example>& dev, const MaskTable* ce_masks,
                                   const MaskTable* rl_masks, const MaskTable* dev_masks,
                                   const TrainConfig<T>& ce_cfg, const TrainConfig<T>& rl_cfg) {
  PipelineResult<T> out;
  out.xent = run_xent_phase(model, train, dev, ce_masks, dev_masks, ce_cfg);
  out.after_xent = evaluate_greedy(model, dev, dev_masks, ce_cfg.max_len);
  out.rl = run_rl_phase(model, bl, train, dev, rl_masks, dev_masks, rl_cfg);
  out.after_rl = evaluate_greedy(model, dev, dev_masks, rl_cfg.max_len);
  out.curve = out.xent.curve;
  out.curve.insert(out.curve.end(), out.rl.curve.begin(), out.rl.curve.end());
  return out;
}

}  // namespace seqrl
