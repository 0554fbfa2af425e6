#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "seqrl/training.hpp"

using namespace seqrl;

namespace {

GeneratorModel<double> toy_text_model(int64_t src_vocab, int64_t tgt_vocab, int64_t width,
                                      uint64_t seed, double drop = 0.0) {
  auto m = GeneratorModel<double>::text(src_vocab, tgt_vocab, width, 1, AttnKind::General, true);
  ParamList<double> ps = m.params();
  Rng rng(seed);
  init_params(ps, rng);
  m.dropout_rate = drop;
  return m;
}

Example text_ex(int64_t id, std::vector<int32_t> src, std::vector<int32_t> tgt) {
  Example e;
  e.id = id;
  e.src = std::move(src);
  e.tgt = std::move(tgt);
  e.tgt.push_back(kEos);
  return e;
}

// Fixed miniature batch over a 12/14-word vocabulary pair.
Batch toy_batch() {
  Batch b;
  b.examples = {
      text_ex(0, {4, 5, 6}, {7, 9}),
      text_ex(1, {7, 4}, {5, 6, 8}),
      text_ex(2, {9, 10, 4, 5}, {4, 4, 10}),
      text_ex(3, {6}, {13}),
      text_ex(4, {5, 8, 8}, {6, 7}),
      text_ex(5, {10, 9}, {12, 4, 5, 9}),
      text_ex(6, {4, 6, 9}, {8}),
      text_ex(7, {8, 7, 5}, {9, 11}),
  };
  return b;
}

struct Toy {
  Vocabulary sv, tv;
  std::vector<Example> train, dev;
};

Toy make_toy(int64_t types, int64_t train_n, int64_t dev_n, uint64_t seed) {
  SyntheticSpec spec;
  spec.src_types = types;
  spec.tgt_types = types;
  spec.min_len = 4;
  spec.max_len = 7;
  spec.train_size = train_n;
  spec.dev_size = dev_n;
  spec.test_size = 1;
  spec.seed = seed;
  SyntheticData d = make_synthetic_task(spec);
  Toy t;
  t.sv = build_vocab(d.train_src, 1);
  t.tv = build_vocab(d.train_tgt, 1);
  t.train = load_parallel_lines(d.train_src, d.train_tgt, t.sv, t.tv, 64).examples;
  t.dev = load_parallel_lines(d.dev_src, d.dev_tgt, t.sv, t.tv, 64).examples;
  return t;
}

struct FrozenEpisode {
  std::vector<int32_t> tokens;
  std::vector<double> rewards;
};

// -sum_t R_t log p(tokens_t), teacher-forcing a frozen sampled trajectory
double forced_reinforce(GeneratorModel<double>& m, const Example& ex,
                        const FrozenEpisode& ep) {
  DecoderState<double> st = encode<double>(nullptr, m, ex.src);
  int64_t prev = kBos;
  double total = 0;
  for (std::size_t t = 0; t < ep.tokens.size(); ++t) {
    StepResult<double> sr = step<double>(nullptr, m, st, prev, nullptr);
    st = sr.state;
    total += -ep.rewards[t] * std::log(sr.dist.data()[ep.tokens[t]]);
    prev = ep.tokens[t];
  }
  return total;
}

// The function of the generator parameters whose gradient one joint step
// follows: trajectories and advantages held fixed at their sampled values.
double frozen_objective(GeneratorModel<double>& m, const Batch& batch,
                        const std::vector<FrozenEpisode>& eps, double lambda) {
  double total = 0;
  for (std::size_t i = 0; i < batch.examples.size(); ++i) {
    const Example& ex = batch.examples[i];
    total += lambda * xent_loss<double>(nullptr, m, ex).item();
    total += (1.0 - lambda) * forced_reinforce(m, ex, eps[i]);
  }
  return total / static_cast<double>(batch.examples.size());
}

bool grads_all_zero(ParamList<double> ps) {
  for (auto& p : ps) {
    const double* g = p.t.grad_data_if_any();
    if (!g) continue;
    for (int64_t i = 0; i < p.t.size(); ++i)
      if (g[i] != 0.0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("baseline estimator predicts into (0,1)") {
  Rng rng(11);
  auto bl = BaselineEstimator<double>::make(6, rng);
  CHECK(bl.W_r.size() == 6);
  CHECK(bl.b_r.size() == 1);
  CHECK(bl.params().size() == 2);

  for (int trial = 0; trial < 20; ++trial) {
    Tensor<double> s = Tensor<double>::zeros({6});
    fill_uniform(s, rng, -3.0, 3.0);
    double b = bl.predict(nullptr, s).item();
    CHECK(b > 0.0);
    CHECK(b < 1.0);
  }
}

TEST_CASE("episode trace holds the reward identity") {
  auto m = toy_text_model(12, 14, 8, 21);
  Rng brng(22);
  auto bl = BaselineEstimator<double>::make(8, brng);
  Example ex = text_ex(0, {4, 5, 6}, {7, 9, 5});

  Rng rng(5);
  Graph<double> g;
  RewardTrace<double> tr = run_episode<double>(&g, m, bl, ex, nullptr, 10, &rng, false);
  REQUIRE(tr.size() >= 1);
  CHECK(tr.logps.size() == tr.size());
  CHECK(tr.baselines.size() == tr.size());
  CHECK(tr.baseline_values.size() == tr.size());
  CHECK(tr.rewards.size() == tr.size());
  CHECK(tr.gleu_score >= 0.0);
  CHECK(tr.gleu_score <= 1.0);
  for (std::size_t t = 0; t < tr.size(); ++t) {
    CHECK(tr.baseline_values[t] > 0.0);
    CHECK(tr.baseline_values[t] < 1.0);
    CHECK(tr.rewards[t] == tr.gleu_score - tr.baseline_values[t]);
    CHECK(tr.baselines[t].item() == tr.baseline_values[t]);
  }
  if (!tr.truncated) CHECK(tr.tokens.back() == kEos);
  if (tr.truncated) CHECK(tr.tokens.size() == 10);
  g.clear();
}

TEST_CASE("cross entropy: EOS-only mask gives zero loss") {
  auto m = toy_text_model(12, 14, 8, 31);
  Example ex;
  ex.id = 0;
  ex.src = {4, 5};
  ex.tgt = {kEos};
  VocabMask eos_only = VocabMask::from_ids({kEos}, 14);
  ReducedHead<double> head = make_reduced_head<double>(nullptr, m, eos_only);
  CHECK(xent_loss<double>(nullptr, m, ex, &head).item() == 0.0);
}

TEST_CASE("cross entropy: nonnegative, and the identity mask changes nothing") {
  auto m = toy_text_model(12, 14, 8, 37);
  std::vector<int32_t> all_ids(14);
  std::iota(all_ids.begin(), all_ids.end(), 0);
  VocabMask identity = VocabMask::from_ids(all_ids, 14);

  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int32_t> src, tgt;
    int64_t slen = 1 + static_cast<int64_t>(rng.uniform_int(0, 3));
    int64_t tlen = 1 + static_cast<int64_t>(rng.uniform_int(0, 3));
    for (int64_t i = 0; i < slen; ++i) src.push_back(static_cast<int32_t>(rng.uniform_int(4, 11)));
    for (int64_t i = 0; i < tlen; ++i) tgt.push_back(static_cast<int32_t>(rng.uniform_int(4, 13)));
    Example ex = text_ex(trial, src, tgt);

    double full = xent_loss<double>(nullptr, m, ex).item();
    ReducedHead<double> head = make_reduced_head<double>(nullptr, m, identity);
    double reduced = xent_loss<double>(nullptr, m, ex, &head).item();
    CHECK(full >= 0.0);
    CHECK(reduced == doctest::Approx(full).epsilon(1e-6));
  }
}

TEST_CASE("cross entropy: absent gold throws, or is counted when skipping") {
  auto m = toy_text_model(12, 14, 8, 41);
  Example ex = text_ex(0, {4, 5}, {5, 6});  // tgt = 5 6 EOS
  VocabMask mask = VocabMask::from_ids({0, 1, 2, 3, 5}, 14);  // no 6
  ReducedHead<double> head = make_reduced_head<double>(nullptr, m, mask);

  CHECK_THROWS_AS(xent_loss<double>(nullptr, m, ex, &head), DataError);

  int64_t skipped = 0;
  double loss = xent_loss<double>(nullptr, m, ex, &head, false, nullptr, &skipped).item();
  CHECK(skipped == 1);
  CHECK(loss >= 0.0);
}

TEST_CASE("reinforce loss arithmetic") {
  CHECK(reinforce_loss_value<double>({0.4, 0.4}, {-1.0, -2.0}) == doctest::Approx(1.2));
  CHECK_THROWS_AS(reinforce_loss_value<double>({}, {}), DataError);
  CHECK_THROWS_AS(reinforce_loss_value<double>({0.1}, {-1.0, -2.0}), DataError);

  RewardTrace<double> tr;
  tr.tokens = {5, 2};
  tr.logps = {Tensor<double>::scalar(-1.0), Tensor<double>::scalar(-2.0)};
  tr.rewards = {0.4, 0.4};
  CHECK(reinforce_loss<double>(nullptr, tr).item() == doctest::Approx(1.2));

  RewardTrace<double> empty;
  CHECK_THROWS_AS(reinforce_loss<double>(nullptr, empty), DataError);
}

TEST_CASE("zero rewards give zero loss and zero policy gradient") {
  auto m = toy_text_model(12, 14, 8, 43);
  Rng brng(44);
  auto bl = BaselineEstimator<double>::make(8, brng);
  Example ex = text_ex(0, {4, 5, 6}, {7, 9});

  Rng rng(9);
  Graph<double> g;
  RewardTrace<double> tr = run_episode<double>(&g, m, bl, ex, nullptr, 8, &rng, false);
  std::fill(tr.rewards.begin(), tr.rewards.end(), 0.0);  // a perfect baseline

  for (auto& p : m.params()) p.t.zero_grad();
  Tensor<double> loss = reinforce_loss(&g, tr);
  CHECK(loss.item() == 0.0);
  g.backward(loss);
  CHECK(grads_all_zero(m.params()));
  g.clear();
}

TEST_CASE("reinforce gradient at the logits is R times (p minus onehot)") {
  const double reward = 0.37;
  const int32_t picked = 3;
  Tensor<double> logits = Tensor<double>::from_vector({5}, {0.2, -1.1, 0.7, 0.4, -0.3});
  logits.set_requires_grad(true);

  auto loss_fn = [&](Graph<double>* g) {
    Tensor<double> dist = softmax(g, logits);
    Tensor<double> logp = log(g, gather(g, dist, {picked}));
    return scale(g, logp, -reward);
  };

  logits.zero_grad();
  Graph<double> g;
  Tensor<double> loss = loss_fn(&g);
  Tensor<double> dist = softmax<double>(nullptr, logits);
  g.backward(loss);
  g.clear();
  const double* grad = logits.grad_data();
  for (int64_t i = 0; i < 5; ++i) {
    double expect = reward * (dist.data()[i] - (i == picked ? 1.0 : 0.0));
    CHECK(grad[i] == doctest::Approx(expect).epsilon(1e-12));
  }

  std::vector<Tensor<double>> params = {logits};
  CHECK(gradient_check(loss_fn, params) < 1e-6);
}

TEST_CASE("baseline loss arithmetic") {
  RewardTrace<double> tr;
  tr.tokens = {4, 5, 2};
  tr.gleu_score = 1.0;
  for (int i = 0; i < 3; ++i) tr.baselines.push_back(Tensor<double>::scalar(0.5));
  CHECK(baseline_loss<double>(nullptr, tr).item() == doctest::Approx(0.75));

  RewardTrace<double> exact;
  exact.tokens = {2};
  exact.gleu_score = 0.42;
  exact.baselines.push_back(Tensor<double>::scalar(0.42));
  CHECK(baseline_loss<double>(nullptr, exact).item() == 0.0);

  RewardTrace<double> empty;
  CHECK_THROWS_AS(baseline_loss<double>(nullptr, empty), DataError);
}

TEST_CASE("baseline regression gradients pass finite differences") {
  auto m = toy_text_model(12, 14, 8, 47);
  Rng brng(48);
  auto bl = BaselineEstimator<double>::make(8, brng);
  Example ex = text_ex(0, {4, 5, 6}, {7, 9, 5});

  auto loss_fn = [&](Graph<double>* g) {
    Rng rng(13);  // same episode on every probe; W_r/b_r do not affect sampling
    RewardTrace<double> tr = run_episode<double>(g, m, bl, ex, nullptr, 8, &rng, false);
    return baseline_loss(g, tr);
  };
  std::vector<Tensor<double>> params = {bl.W_r, bl.b_r};
  CHECK(gradient_check(loss_fn, params) < 1e-5);
}

TEST_CASE("baseline and policy gradients stay in their own parameters") {
  auto m = toy_text_model(12, 14, 8, 53);
  Rng brng(54);
  auto bl = BaselineEstimator<double>::make(8, brng);
  Example ex = text_ex(0, {4, 5, 6}, {7, 9});

  // baseline loss never reaches the generator
  for (auto& p : m.params()) p.t.zero_grad();
  for (auto& p : bl.params()) p.t.zero_grad();
  {
    Rng rng(17);
    Graph<double> g;
    RewardTrace<double> tr = run_episode<double>(&g, m, bl, ex, nullptr, 8, &rng, false);
    Tensor<double> loss = baseline_loss(&g, tr);
    g.backward(loss);
    g.clear();
  }
  CHECK(grads_all_zero(m.params()));
  bool baseline_touched = false;
  for (auto& p : bl.params()) {
    const double* gd = p.t.grad_data_if_any();
    if (!gd) continue;
    for (int64_t i = 0; i < p.t.size(); ++i) baseline_touched |= gd[i] != 0.0;
  }
  CHECK(baseline_touched);

  // the policy loss never reaches the baseline
  for (auto& p : m.params()) p.t.zero_grad();
  for (auto& p : bl.params()) p.t.zero_grad();
  {
    Rng rng(17);
    Graph<double> g;
    RewardTrace<double> tr = run_episode<double>(&g, m, bl, ex, nullptr, 8, &rng, false);
    Tensor<double> loss = reinforce_loss(&g, tr);
    g.backward(loss);
    g.clear();
  }
  CHECK(grads_all_zero(bl.params()));
}

TEST_CASE("split update: S=1 equals a hand-rolled unsplit step") {
  Batch batch = toy_batch();
  auto run = [&](bool use_split) {
    auto m = toy_text_model(12, 14, 6, 61, 0.1);
    SgdMomentum<double> opt(tensors_of(m.params()), 0.5, 0.75);
    auto per_example = [&](Graph<double>* g, const Example& ex) {
      Rng rng(mix_seed(7, static_cast<uint64_t>(ex.id)));
      return xent_loss<double>(g, m, ex, nullptr, true, &rng);
    };
    if (use_split) {
      split_update<double>(batch, 1, per_example, opt);
    } else {
      opt.zero_grad();
      Graph<double> g;
      Tensor<double> acc = Tensor<double>::scalar(0.0, true);
      for (const Example& ex : batch.examples) acc = add(&g, acc, per_example(&g, ex));
      Tensor<double> scaled = scale(&g, acc, 1.0 / static_cast<double>(batch.size()));
      g.backward(scaled);
      g.clear();
      opt.step();
    }
    return snapshot_values(tensors_of(m.params()));
  };

  auto a = run(true);
  auto b = run(false);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j)
      CHECK(std::abs(a[i][j] - b[i][j]) <= 1e-12);
}

TEST_CASE("split update: S in {2,4,8} matches S=1") {
  Batch batch = toy_batch();
  auto run = [&](int64_t s) {
    auto m = toy_text_model(12, 14, 6, 67, 0.1);
    SgdMomentum<double> opt(tensors_of(m.params()), 0.5, 0.75);
    auto per_example = [&](Graph<double>* g, const Example& ex) {
      Rng rng(mix_seed(7, static_cast<uint64_t>(ex.id)));
      return xent_loss<double>(g, m, ex, nullptr, true, &rng);
    };
    split_update<double>(batch, s, per_example, opt);
    return snapshot_values(tensors_of(m.params()));
  };

  auto base = run(1);
  for (int64_t s : {2, 4, 8}) {
    auto split = run(s);
    double worst = 0;
    for (std::size_t i = 0; i < base.size(); ++i)
      for (std::size_t j = 0; j < base[i].size(); ++j) {
        double rel = std::abs(split[i][j] - base[i][j]) /
                     std::max({std::abs(split[i][j]), std::abs(base[i][j]), 1e-8});
        worst = std::max(worst, rel);
      }
    CHECK(worst < 1e-5);
  }

  CHECK_THROWS_AS(run(0), ConfigError);
  CHECK_THROWS_AS(run(9), ConfigError);
}

TEST_CASE("split update frees graphs and caps live activations") {
  // 128 examples over the toy vocabulary, lengths 4..10
  Batch batch;
  Rng rng(71);
  for (int64_t i = 0; i < 128; ++i) {
    std::vector<int32_t> src, tgt;
    int64_t slen = 4 + static_cast<int64_t>(rng.uniform_int(0, 6));
    int64_t tlen = 4 + static_cast<int64_t>(rng.uniform_int(0, 6));
    for (int64_t k = 0; k < slen; ++k) src.push_back(static_cast<int32_t>(rng.uniform_int(4, 11)));
    for (int64_t k = 0; k < tlen; ++k) tgt.push_back(static_cast<int32_t>(rng.uniform_int(4, 13)));
    batch.examples.push_back(text_ex(i, src, tgt));
  }

  auto m = toy_text_model(12, 14, 8, 73);
  SgdMomentum<double> opt(tensors_of(m.params()), 0.1, 0.75);
  auto per_example = [&](Graph<double>* g, const Example& ex) {
    return xent_loss<double>(g, m, ex, nullptr, false, nullptr);
  };

  std::size_t live_before = alloc::live_activation_bytes();
  std::size_t p1, p4;
  {
    alloc::Scope scope("unsplit");
    split_update<double>(batch, 1, per_example, opt);
    p1 = scope.peak_activation_bytes();
  }
  CHECK(alloc::live_activation_bytes() == live_before);
  {
    alloc::Scope scope("split4");
    split_update<double>(batch, 4, per_example, opt);
    p4 = scope.peak_activation_bytes();
  }
  CHECK(alloc::live_activation_bytes() == live_before);
  CHECK(p1 > 0);
  CHECK(static_cast<double>(p4) <= 0.3 * static_cast<double>(p1));
}

TEST_CASE("joint step with lambda=1 is exactly the cross-entropy step") {
  Batch batch = toy_batch();
  TrainConfig<double> cfg;
  cfg.lambda = 1.0;
  cfg.lr = 0.2;
  cfg.momentum = 0.75;
  cfg.max_len = 8;
  cfg.dropout = 0.1;
  cfg.split = 2;
  const uint64_t step_seed = 99;

  auto ma = toy_text_model(12, 14, 6, 77, cfg.dropout);
  Rng brng(78);
  auto bla = BaselineEstimator<double>::make(6, brng);
  SgdMomentum<double> gen_opt(tensors_of(ma.params()), cfg.lr, cfg.momentum);
  Adam<double> bl_opt(tensors_of(bla.params()), 1e-3);
  JointMetrics<double> jm = joint_step(ma, bla, batch, nullptr, cfg, gen_opt, bl_opt, step_seed);
  CHECK(jm.reinforce_term == 0.0);
  CHECK(jm.mean_gleu >= 0.0);

  auto mb = toy_text_model(12, 14, 6, 77, cfg.dropout);
  SgdMomentum<double> opt_b(tensors_of(mb.params()), cfg.lr, cfg.momentum);
  auto per_example = [&](Graph<double>* g, const Example& ex) {
    Rng rng(mix_seed(step_seed, mix_seed(1, static_cast<uint64_t>(ex.id))));
    return xent_loss<double>(g, mb, ex, nullptr, true, &rng);
  };
  split_update<double>(batch, cfg.split, per_example, opt_b);

  auto a = snapshot_values(tensors_of(ma.params()));
  auto b = snapshot_values(tensors_of(mb.params()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j)
      CHECK(a[i][j] == b[i][j]);
}

TEST_CASE("joint step with lambda=0 is pure REINFORCE") {
  Batch batch = toy_batch();
  TrainConfig<double> cfg;
  cfg.lambda = 0.0;
  cfg.lr = 0.01;
  cfg.max_len = 8;
  cfg.dropout = 0.0;

  auto m = toy_text_model(12, 14, 6, 83);
  auto before = snapshot_values(tensors_of(m.params()));
  Rng brng(84);
  auto bl = BaselineEstimator<double>::make(6, brng);
  SgdMomentum<double> gen_opt(tensors_of(m.params()), cfg.lr, cfg.momentum);
  Adam<double> bl_opt(tensors_of(bl.params()), 1e-3);
  JointMetrics<double> jm = joint_step(m, bl, batch, nullptr, cfg, gen_opt, bl_opt, 7);

  CHECK(jm.xent_term == 0.0);
  CHECK(jm.skipped_gold == 0);
  CHECK(jm.tokens_sampled > 0);
  CHECK(jm.joint_loss == doctest::Approx(jm.reinforce_term));

  bool moved = false;
  auto after = snapshot_values(tensors_of(m.params()));
  for (std::size_t i = 0; i < after.size(); ++i)
    for (std::size_t j = 0; j < after[i].size(); ++j) moved |= after[i][j] != before[i][j];
  CHECK(moved);

  Batch empty;
  CHECK_THROWS_AS(joint_step(m, bl, empty, nullptr, cfg, gen_opt, bl_opt, 7), DataError);
}

TEST_CASE("joint step counts gold positions outside the mask") {
  Batch batch;
  batch.examples = {text_ex(0, {4, 5}, {5, 6}), text_ex(1, {6, 4}, {6, 5})};
  // scores force {specials, 5}: every 6 in the targets is outside
  std::vector<double> scores(14, 0.0);
  scores[5] = 1.0;
  MaskTable masks;
  masks[0] = build_mask(scores, 5, nullptr, false);
  masks[1] = build_mask(scores, 5, nullptr, false);

  TrainConfig<double> cfg;
  cfg.lambda = 0.5;
  cfg.lr = 0.05;
  cfg.max_len = 6;
  cfg.dropout = 0.0;

  auto m = toy_text_model(12, 14, 6, 87);
  Rng brng(88);
  auto bl = BaselineEstimator<double>::make(6, brng);
  SgdMomentum<double> gen_opt(tensors_of(m.params()), cfg.lr, cfg.momentum);
  Adam<double> bl_opt(tensors_of(bl.params()), 1e-3);
  JointMetrics<double> jm = joint_step(m, bl, batch, &masks, cfg, gen_opt, bl_opt, 5);
  CHECK(jm.skipped_gold == 2);

  MaskTable missing;
  missing[0] = masks[0];
  CHECK_THROWS_AS(joint_step(m, bl, batch, &missing, cfg, gen_opt, bl_opt, 5), DataError);
}

TEST_CASE("one joint step descends the policy-plus-likelihood objective") {
  Batch batch = toy_batch();
  TrainConfig<double> cfg;
  cfg.lambda = 0.5;
  cfg.lr = 1e-3;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  cfg.max_len = 8;
  cfg.dropout = 0.0;
  cfg.split = 1;
  const uint64_t step_seed = 31;

  auto m = toy_text_model(12, 14, 6, 91);
  Rng brng(92);
  auto bl = BaselineEstimator<double>::make(6, brng);

  // record the trajectories and advantages the step is about to sample
  std::vector<FrozenEpisode> eps;
  for (const Example& ex : batch.examples) {
    Rng rs(mix_seed(step_seed, mix_seed(2, static_cast<uint64_t>(ex.id))));
    RewardTrace<double> tr =
        run_episode<double>(nullptr, m, bl, ex, nullptr, cfg.max_len, &rs, true);
    eps.push_back({tr.tokens, tr.rewards});
  }

  double before = frozen_objective(m, batch, eps, cfg.lambda);
  SgdMomentum<double> gen_opt(tensors_of(m.params()), cfg.lr, cfg.momentum, cfg.weight_decay,
                              cfg.clip_norm);
  Adam<double> bl_opt(tensors_of(bl.params()), cfg.baseline_lr);
  joint_step(m, bl, batch, nullptr, cfg, gen_opt, bl_opt, step_seed);
  double after = frozen_objective(m, batch, eps, cfg.lambda);
  CHECK(after < before);
}

TEST_CASE("sgd and adagrad follow their update rules") {
  // zero gradient, no decay: parameters do not move
  Tensor<double> w = Tensor<double>::from_vector({3}, {1.0, -2.0, 3.0});
  w.set_requires_grad(true);
  w.zero_grad();
  SgdMomentum<double> sgd({w}, 0.5, 0.9, 0.0, 1.0);
  sgd.step();
  CHECK(w.data()[0] == 1.0);
  CHECK(w.data()[1] == -2.0);
  CHECK(w.data()[2] == 3.0);

  // gradient of norm 10 is clipped to norm 1 before the update
  Tensor<double> v = Tensor<double>::from_vector({4}, {0.0, 0.0, 0.0, 0.0});
  v.set_requires_grad(true);
  double* g = v.grad_data();
  for (int i = 0; i < 4; ++i) g[i] = 5.0;  // norm 10
  std::vector<Tensor<double>> params = {v};
  double pre_norm = decay_and_clip(params, 0.0, 1.0);
  CHECK(pre_norm == doctest::Approx(10.0));
  double post = 0;
  for (int i = 0; i < 4; ++i) post += v.grad_data()[i] * v.grad_data()[i];
  CHECK(std::sqrt(post) == doctest::Approx(1.0));

  // constant gradient through AdaGrad: strictly shrinking steps
  Tensor<double> u = Tensor<double>::scalar(0.0);
  u.set_requires_grad(true);
  Adagrad<double> ada({u}, 0.5, 0.0, 0.0);  // no decay, no clip
  double prev_step = 1e30;
  for (int it = 0; it < 5; ++it) {
    u.zero_grad();
    u.grad_data()[0] = 1.0;
    double before = u.item();
    ada.step();
    double step_size = std::abs(u.item() - before);
    CHECK(step_size < prev_step);
    prev_step = step_size;
  }
}

TEST_CASE("learning-rate halving policy") {
  LrSchedule sched(1.0);
  CHECK(sched.observe(10.0, 0.5) == 1.0);  // first score
  CHECK(sched.observe(5.0, 3.0) == 1.0);   // drop inside the frozen epochs
  CHECK(sched.observe(11.0, 6.5) == 1.0);  // improvement
  CHECK(sched.observe(4.0, 8.0) == 0.5);
  CHECK(sched.observe(3.0, 8.5) == 0.25);  // two non-improvements: lr/4

  LrSchedule s2(0.8);
  Rng rng(5);
  double last = 0.8;
  for (int i = 0; i < 50; ++i) {
    double lr = s2.observe(rng.uniform(0.0, 20.0), 0.5 * (i + 1));
    CHECK(lr <= last);
    last = lr;
  }
}

TEST_CASE("train config validation") {
  TrainConfig<double> cfg;
  cfg.validate();
  TrainConfig<double> bad = cfg;
  bad.lambda = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.split = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.dropout = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.lr = -0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("curves csv round trip") {
  std::vector<CurveRow> rows = {{0.5, "xent", 3.25, 0.1, 12.5, 1.0, 2.5, 1024},
                                {1.0, "rl", 1.5, 0.2, 14.0, 0.01, 3.0, 2048}};
  const char* path = "curves_test.csv";
  write_curves_csv(path, rows);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "epoch,phase,loss,dev_gleu,dev_bleu,lr,seconds,peak_bytes");
  int n = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++n;
  CHECK(n == 2);
  in.close();
  std::remove(path);
}

TEST_CASE("cross-entropy phase learns the reversal toy task") {
  Toy toy = make_toy(12, 200, 40, 3);
  auto m = toy_text_model(toy.sv.size(), toy.tv.size(), 16, 101);

  TrainConfig<double> cfg;
  cfg.lr = 1.0;
  cfg.momentum = 0.75;
  cfg.batch_size = 32;
  cfg.epochs = 8;
  cfg.max_len = 12;
  cfg.dropout = 0.1;
  cfg.seed = 11;

  EvalResult before = evaluate_greedy(m, toy.dev, nullptr, cfg.max_len);
  PhaseResult<double> res = run_xent_phase(m, toy.train, toy.dev, nullptr, nullptr, cfg);

  CHECK(res.best_score > before.bleu);
  CHECK(res.best_epoch > 0);
  CHECK(res.curve.size() == 16);  // two checkpoints per epoch
  for (const CurveRow& r : res.curve) CHECK(r.phase == "xent");

  // the model is restored to the selected checkpoint
  EvalResult after = evaluate_greedy(m, toy.dev, nullptr, cfg.max_len);
  CHECK(after.bleu == doctest::Approx(res.best_score).epsilon(1e-12));
}

TEST_CASE("reinforcement phase lifts dev GLEU over the pre-trained model") {
  Toy toy = make_toy(12, 300, 48, 5);
  auto m = toy_text_model(toy.sv.size(), toy.tv.size(), 16, 103);
  Rng brng(104);
  auto bl = BaselineEstimator<double>::make(16, brng);

  TrainConfig<double> ce;
  ce.lr = 1.0;
  ce.momentum = 0.75;
  ce.batch_size = 32;
  ce.epochs = 4;  // deliberately short: leaves headroom for RL
  ce.max_len = 12;
  ce.dropout = 0.1;
  ce.seed = 21;

  TrainConfig<double> rl = ce;
  rl.lr = 0.01;
  rl.lambda = 0.005;
  rl.epochs = 3;
  rl.seed = 22;

  PipelineResult<double> out =
      pretrain_then_rl(m, bl, toy.train, toy.dev, nullptr, nullptr, nullptr, ce, rl);

  CHECK(out.after_xent.bleu > 0.0);
  CHECK(out.after_rl.gleu > out.after_xent.gleu);
  CHECK(out.curve.size() == out.xent.curve.size() + out.rl.curve.size());
  for (const CurveRow& r : out.rl.curve) CHECK(r.phase == "rl");
}

TEST_CASE("zero pretrain epochs with lambda zero runs RL from random parameters") {
  Toy toy = make_toy(10, 48, 12, 7);
  auto m = toy_text_model(toy.sv.size(), toy.tv.size(), 8, 107);
  Rng brng(108);
  auto bl = BaselineEstimator<double>::make(8, brng);

  TrainConfig<double> ce;
  ce.epochs = 0;
  ce.batch_size = 16;
  ce.max_len = 10;

  TrainConfig<double> rl = ce;
  rl.lr = 0.01;
  rl.lambda = 0.0;
  rl.epochs = 1;

  PipelineResult<double> out =
      pretrain_then_rl(m, bl, toy.train, toy.dev, nullptr, nullptr, nullptr, ce, rl);
  CHECK(out.xent.curve.empty());
  CHECK(out.rl.curve.size() >= 1);
  CHECK(std::isfinite(out.after_rl.gleu));
}

TEST_CASE("training runs are reproducible for a fixed seed") {
  Toy toy = make_toy(10, 64, 12, 9);

  auto run = [&]() {
    auto m = toy_text_model(toy.sv.size(), toy.tv.size(), 8, 109);
    Rng brng(110);
    auto bl = BaselineEstimator<double>::make(8, brng);
    TrainConfig<double> ce;
    ce.epochs = 2;
    ce.batch_size = 16;
    ce.max_len = 10;
    ce.seed = 31;
    TrainConfig<double> rl = ce;
    rl.lr = 0.01;
    rl.epochs = 1;
    rl.seed = 32;
    PipelineResult<double> out =
        pretrain_then_rl(m, bl, toy.train, toy.dev, nullptr, nullptr, nullptr, ce, rl);
    return std::make_pair(snapshot_values(tensors_of(m.params())), out);
  };

  auto [pa, oa] = run();
  auto [pb, ob] = run();
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t j = 0; j < pa[i].size(); ++j) CHECK(pa[i][j] == pb[i][j]);
  REQUIRE(oa.curve.size() == ob.curve.size());
  for (std::size_t i = 0; i < oa.curve.size(); ++i) {
    CHECK(oa.curve[i].loss == ob.curve[i].loss);
    CHECK(oa.curve[i].dev_bleu == ob.curve[i].dev_bleu);
    CHECK(oa.curve[i].dev_gleu == ob.curve[i].dev_gleu);
  }
}
