#include "seqrl/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <unordered_map>

#include <CLI11.hpp>

#include "seqrl/checkpoint.hpp"
#include "seqrl/config.hpp"
#include "seqrl/decode.hpp"
#include "seqrl/training.hpp"

namespace seqrl {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt(double v, int prec) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out.flush()) throw DataError("write failed: " + path.string());
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const std::string& s : lines) out << s << '\n';
  if (!out.flush()) throw DataError("write failed: " + path.string());
}

// Per-invocation context: the resolved config plus the run directory layout
// every command writes into.
struct Cli {
  RunConfig rc;
  fs::path run_dir, ckpt_dir, logs_dir;
  std::ofstream log;

  Cli(RunConfig c, const std::string& command) : rc(std::move(c)) {
    if (rc.run_name.empty()) throw ConfigError("run_name is required (--run <name>)");
    if (rc.run_name.find('/') != std::string::npos ||
        rc.run_name.find('\\') != std::string::npos)
      throw ConfigError("run_name must be a plain name, not a path");
    run_dir = fs::path(rc.runs_dir) / rc.run_name;
    ckpt_dir = run_dir / "checkpoints";
    logs_dir = run_dir / "logs";
    fs::create_directories(ckpt_dir);
    fs::create_directories(logs_dir);
    log.open(logs_dir / (command + ".log"), std::ios::trunc);
  }

  void say(const std::string& s) {
    std::cout << s << "\n";
    if (log) log << s << "\n";
  }
};

void write_resolved(const Cli& cli) {
  write_text(cli.run_dir / "config.resolved", config_to_json(cli.rc).dump(2) + "\n");
}

Vocabulary need_vocab(const std::string& path, const char* key) {
  if (path.empty()) throw ConfigError(std::string(key) + " is not set");
  return load_vocab(path);
}

struct Vocabs {
  Vocabulary tgt;
  std::optional<Vocabulary> src;  // absent in feature mode
};

Vocabs load_vocabs(const RunConfig& rc) {
  Vocabs v{need_vocab(rc.data.tgt_vocab, "data.tgt_vocab"), std::nullopt};
  if (!rc.data.features) v.src = need_vocab(rc.data.src_vocab, "data.src_vocab");
  return v;
}

std::vector<Example> load_split(Cli& cli, const std::string& src, const std::string& tgt,
                                const Vocabs& v, const char* what) {
  const RunConfig& rc = cli.rc;
  if (src.empty() || tgt.empty())
    throw ConfigError(std::string("data paths for the ") + what + " split are not set");
  LoadResult lr = rc.data.features ? load_features(src, tgt, v.tgt, rc.data.max_len)
                                   : load_parallel(src, tgt, *v.src, v.tgt, rc.data.max_len);
  if (lr.examples.empty())
    throw DataError(std::string(what) + " split has no usable examples");
  std::string note = std::string(what) + ": " + std::to_string(lr.examples.size()) + " examples";
  if (lr.dropped) note += " (" + std::to_string(lr.dropped) + " dropped over max_len)";
  cli.say(note);
  return lr.examples;
}

int64_t feature_dim(const std::vector<Example>& data) {
  return static_cast<int64_t>(data.front().features.size());
}

template <class T>
MaskTable masks_for(PredictorModel<T>& pred, const std::vector<Example>& data, int64_t k,
                    bool gold_union) {
  MaskTable mt;
  mt.reserve(data.size());
  int64_t k_eff = std::min<int64_t>(k, pred.vocab_size());
  for (const Example& ex : data) {
    Tensor<T> s = predict_scores<T>(nullptr, pred, ex, false, nullptr);
    mt.emplace(ex.id, build_mask(scores_as_doubles(s), k_eff,
                                 gold_union ? &ex.tgt : nullptr, gold_union));
  }
  return mt;
}

template <class T>
PredictorModel<T> load_predictor(const RunConfig& rc, const Vocabs& v) {
  if (rc.predictor.checkpoint.empty())
    throw ConfigError("predictor.checkpoint is not set");
  Checkpoint ck = read_checkpoint(rc.predictor.checkpoint);
  PredictorModel<T> m = predictor_from_checkpoint<T>(ck);
  if (m.uses_features != rc.data.features)
    throw DataError("predictor checkpoint input mode does not match data.features");
  if (m.vocab_size() != v.tgt.size())
    throw DataError("predictor vocabulary (" + std::to_string(m.vocab_size()) +
                    ") does not match data.tgt_vocab (" + std::to_string(v.tgt.size()) + ")");
  if (!m.uses_features && v.src && m.embed.table.dim(0) != v.src->size())
    throw DataError("predictor source vocabulary (" + std::to_string(m.embed.table.dim(0)) +
                    ") does not match data.src_vocab (" + std::to_string(v.src->size()) + ")");
  return m;
}

void check_generator_ck(const Checkpoint& ck, const RunConfig& rc, int64_t tgt_vocab,
                        int64_t expect_input) {
  bool is_feat = ck.hyper.kind == ModelKind::GeneratorFeatures;
  bool is_text = ck.hyper.kind == ModelKind::GeneratorText;
  if (!is_feat && !is_text) throw DataError("checkpoint does not hold a generator model");
  if (is_feat != rc.data.features)
    throw DataError("generator checkpoint input mode does not match data.features");
  if (ck.hyper.vocab != tgt_vocab)
    throw DataError("checkpoint target vocabulary (" + std::to_string(ck.hyper.vocab) +
                    ") does not match data.tgt_vocab (" + std::to_string(tgt_vocab) + ")");
  if (expect_input >= 0 && ck.hyper.input_dim != expect_input)
    throw DataError("checkpoint input dimension (" + std::to_string(ck.hyper.input_dim) +
                    ") does not match the data (" + std::to_string(expect_input) + ")");
}

template <class T>
TrainConfig<T> base_train_config(const RunConfig& rc) {
  TrainConfig<T> tc;
  tc.optimizer = rc.train.optimizer == "adam"      ? OptKind::AdamOpt
                 : rc.train.optimizer == "adagrad" ? OptKind::AdagradOpt
                                                   : OptKind::SgdMomentumOpt;
  tc.lr = rc.train.lr;
  tc.momentum = rc.train.momentum;
  tc.weight_decay = rc.train.weight_decay;
  tc.clip_norm = rc.train.clip_norm;
  tc.lambda = rc.rl.lambda;
  tc.k = rc.train.k;
  tc.split = rc.train.split;
  tc.batch_size = rc.train.batch_size;
  tc.max_len = rc.train.max_len;
  tc.dropout = rc.train.dropout;
  tc.freeze_epochs = rc.train.freeze_epochs;
  tc.epochs = rc.train.epochs;
  tc.seed = static_cast<uint64_t>(rc.seed);
  tc.rl_gold_union = rc.rl.gold_union;
  tc.baseline_lr = rc.rl.baseline_lr;
  return tc;
}

template <class T>
TrainConfig<T> rl_train_config(const RunConfig& rc) {
  TrainConfig<T> tc = base_train_config<T>(rc);
  tc.lr = rc.rl.lr;
  tc.epochs = rc.rl.epochs;
  return tc;
}

// Deterministic runs zero the wall-clock column so reruns are byte-identical.
std::vector<CurveRow> publishable(std::vector<CurveRow> rows, bool deterministic) {
  if (deterministic)
    for (CurveRow& r : rows) r.seconds = 0;
  return rows;
}

template <class T>
GeneratorModel<T> fresh_generator(const RunConfig& rc, const Vocabs& v, int64_t feat_dim) {
  GeneratorModel<T> model =
      rc.data.features
          ? GeneratorModel<T>::features(feat_dim, v.tgt.size(), rc.model.width, rc.model.layers)
          : GeneratorModel<T>::text(v.src->size(), v.tgt.size(), rc.model.width,
                                    rc.model.layers, AttnKind::General, rc.model.input_feed);
  model.dropout_rate = rc.model.dropout;
  Rng rng(static_cast<uint64_t>(rc.seed));
  init_params(model.params(), rng);
  return model;
}

template <class T>
BaselineEstimator<T> fresh_baseline(const RunConfig& rc, int64_t d) {
  Rng rng(mix_seed(static_cast<uint64_t>(rc.seed), 0xba5e));
  return BaselineEstimator<T>::make(d, rng);
}

std::vector<int64_t> parse_pretrain_list(const std::string& s, int64_t fallback) {
  if (s.empty()) return {fallback};
  std::vector<int64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos)
      throw ConfigError("rl.pretrain_epochs: expected comma-separated nonnegative integers");
    out.push_back(std::stoll(item));
  }
  if (out.empty())
    throw ConfigError("rl.pretrain_epochs: expected comma-separated nonnegative integers");
  return out;
}

DecodeMode decode_mode(const RunConfig& rc) {
  DecodeMode m;
  m.beam = rc.decode.beam > 1;
  m.cfg.width = rc.decode.beam;
  m.cfg.max_len = rc.decode.max_len;
  m.cfg.norm = rc.decode.length_norm == "none" ? LengthNorm::None : LengthNorm::ByLength;
  m.cfg.alpha = rc.decode.alpha;
  return m;
}

std::string detok(const std::vector<int32_t>& ids, const Vocabulary& v) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) s += ' ';
    s += v.token(ids[i]);
  }
  return s;
}

// ---- commands -------------------------------------------------------------

int cmd_build_vocab(Cli& cli) {
  RunConfig& rc = cli.rc;
  if (rc.data.train_tgt.empty()) throw ConfigError("data.train_tgt is not set");
  if (!rc.data.features && rc.data.train_src.empty())
    throw ConfigError("data.train_src is not set");
  if (!rc.data.features && rc.data.src_vocab.empty())
    rc.data.src_vocab = (cli.run_dir / "src.vocab").string();
  if (rc.data.tgt_vocab.empty()) rc.data.tgt_vocab = (cli.run_dir / "tgt.vocab").string();
  write_resolved(cli);

  if (!rc.data.features) {
    Vocabulary sv = build_vocab_file(rc.data.train_src, rc.data.min_count);
    save_vocab(sv, rc.data.src_vocab);
    cli.say("build-vocab: source vocabulary " + std::to_string(sv.size()) + " types -> " +
            rc.data.src_vocab);
  }
  Vocabulary tv = build_vocab_file(rc.data.train_tgt, rc.data.min_count);
  save_vocab(tv, rc.data.tgt_vocab);
  cli.say("build-vocab: target vocabulary " + std::to_string(tv.size()) + " types -> " +
          rc.data.tgt_vocab);
  return 0;
}

int cmd_make_synthetic(Cli& cli) {
  RunConfig& rc = cli.rc;
  if (rc.synthetic.out_dir.empty()) rc.synthetic.out_dir = (cli.run_dir / "data").string();
  write_resolved(cli);

  SyntheticSpec sp;
  sp.src_types = rc.synthetic.src_types;
  sp.tgt_types = rc.synthetic.tgt_types;
  sp.min_len = rc.synthetic.min_len;
  sp.max_len = rc.synthetic.max_len;
  sp.train_size = rc.synthetic.train_size;
  sp.dev_size = rc.synthetic.dev_size;
  sp.test_size = rc.synthetic.test_size;
  sp.zipf_exponent = rc.synthetic.zipf_exponent;
  sp.seed = static_cast<uint64_t>(rc.synthetic.seed);
  SyntheticData d = make_synthetic_task(sp);

  fs::path dir(rc.synthetic.out_dir);
  fs::create_directories(dir);
  write_lines(dir / "train.src", d.train_src);
  write_lines(dir / "train.tgt", d.train_tgt);
  write_lines(dir / "dev.src", d.dev_src);
  write_lines(dir / "dev.tgt", d.dev_tgt);
  write_lines(dir / "test.src", d.test_src);
  write_lines(dir / "test.tgt", d.test_tgt);
  cli.say("make-synthetic: " + std::to_string(d.train_src.size()) + " train / " +
          std::to_string(d.dev_src.size()) + " dev / " + std::to_string(d.test_src.size()) +
          " test pairs -> " + dir.string());
  return 0;
}

template <class T>
int cmd_train_predictor(Cli& cli) {
  const RunConfig& rc = cli.rc;
  write_resolved(cli);
  Vocabs v = load_vocabs(rc);
  std::vector<Example> train = load_split(cli, rc.data.train_src, rc.data.train_tgt, v, "train");
  std::vector<Example> dev = load_split(cli, rc.data.dev_src, rc.data.dev_tgt, v, "dev");

  PredictorModel<T> model =
      rc.data.features
          ? PredictorModel<T>::features(feature_dim(train), v.tgt.size(), rc.predictor.width)
          : PredictorModel<T>::text(v.src->size(), v.tgt.size(), rc.predictor.width);
  Rng rng(static_cast<uint64_t>(rc.seed));
  init_params(model.params(), rng);

  PredictorTrainConfig pc;
  pc.lr = rc.predictor.lr;
  pc.batch_size = rc.predictor.batch_size;
  pc.epochs = rc.predictor.epochs;
  pc.recall_k = rc.predictor.recall_k;
  pc.smooth_eps = rc.predictor.smooth_eps;
  pc.weight_decay = rc.predictor.weight_decay;
  pc.clip_norm = rc.predictor.clip_norm;
  pc.seed = static_cast<uint64_t>(rc.seed);
  PredictorTrainResult res = train_predictor(model, train, dev, pc);

  std::string csv = "epoch,loss,dev_recall\n";
  for (const PredictorEpochStats& row : res.curve)
    csv += std::to_string(row.epoch) + "," + fmt(row.loss, 6) + "," + fmt(row.dev_recall, 6) +
           "\n";
  write_text(cli.run_dir / "curves.csv", csv);

  fs::path out = cli.ckpt_dir / "predictor.ckpt";
  write_checkpoint(out.string(), make_checkpoint(model));
  cli.say("train-predictor: best recall@" + std::to_string(pc.recall_k) + " " +
          fmt(res.best_recall, 4) + " at epoch " + std::to_string(res.best_epoch) + " -> " +
          out.string());
  return 0;
}

template <class T>
int cmd_eval_predictor(Cli& cli) {
  const RunConfig& rc = cli.rc;
  write_resolved(cli);
  Vocabs v = load_vocabs(rc);
  PredictorModel<T> model = load_predictor<T>(rc, v);
  bool test = rc.data.eval_split == "test";
  std::vector<Example> data =
      test ? load_split(cli, rc.data.test_src, rc.data.test_tgt, v, "test")
           : load_split(cli, rc.data.dev_src, rc.data.dev_tgt, v, "dev");

  const std::vector<int64_t> ks = {20, 50, 100, 200, 500, 1000, 2000};
  std::string csv = "k,recall\n";
  for (int64_t k : ks) {
    double r = recall_at_k(model, data, k);
    csv += std::to_string(k) + "," + fmt(r, 6) + "\n";
    cli.say("eval-predictor: recall@" + std::to_string(k) + " " + fmt(r, 4));
  }
  fs::path out = cli.run_dir / "recall.csv";
  write_text(out, csv);
  cli.say("eval-predictor: " + std::string(rc.data.eval_split) + " recall curve -> " +
          out.string());
  return 0;
}

template <class T>
int cmd_train_xent(Cli& cli) {
  const RunConfig& rc = cli.rc;
  write_resolved(cli);
  Vocabs v = load_vocabs(rc);
  std::vector<Example> train = load_split(cli, rc.data.train_src, rc.data.train_tgt, v, "train");
  std::vector<Example> dev = load_split(cli, rc.data.dev_src, rc.data.dev_tgt, v, "dev");

  GeneratorModel<T> model =
      fresh_generator<T>(rc, v, rc.data.features ? feature_dim(train) : 0);
  TrainConfig<T> tc = base_train_config<T>(rc);
  tc.validate();

  MaskTable train_masks, dev_masks;
  const MaskTable *tm = nullptr, *dm = nullptr;
  if (rc.head == "small") {
    PredictorModel<T> pred = load_predictor<T>(rc, v);
    train_masks = masks_for(pred, train, tc.k, true);
    dev_masks = masks_for(pred, dev, tc.k, false);
    tm = &train_masks;
    dm = &dev_masks;
    cli.say("train-xent: masks of size " +
            std::to_string(std::min<int64_t>(tc.k, v.tgt.size())) + " over " +
            std::to_string(v.tgt.size()) + " types");
  }

  PhaseResult<T> res = run_xent_phase(model, train, dev, tm, dm, tc);
  write_curves_csv((cli.run_dir / "curves.csv").string(),
                   publishable(res.curve, rc.deterministic));
  fs::path out = cli.ckpt_dir / "best.ckpt";
  write_checkpoint(out.string(), make_checkpoint(model));
  cli.say("train-xent: best dev BLEU " + fmt(res.best_score, 2) + " at epoch " +
          fmt(res.best_epoch, 1) + " -> " + out.string());
  return 0;
}

template <class T>
int cmd_train_rl(Cli& cli) {
  const RunConfig& rc = cli.rc;
  write_resolved(cli);
  Vocabs v = load_vocabs(rc);
  std::vector<Example> train = load_split(cli, rc.data.train_src, rc.data.train_tgt, v, "train");
  std::vector<Example> dev = load_split(cli, rc.data.dev_src, rc.data.dev_tgt, v, "dev");
  int64_t feat_dim = rc.data.features ? feature_dim(train) : 0;

  TrainConfig<T> rl_cfg = rl_train_config<T>(rc);
  rl_cfg.validate();

  MaskTable ce_masks, rl_masks, dev_masks;
  const MaskTable *cm = nullptr, *rm = nullptr, *dm = nullptr;
  if (rc.head == "small") {
    PredictorModel<T> pred = load_predictor<T>(rc, v);
    ce_masks = masks_for(pred, train, rl_cfg.k, true);
    rl_masks = rc.rl.gold_union ? ce_masks : masks_for(pred, train, rl_cfg.k, false);
    dev_masks = masks_for(pred, dev, rl_cfg.k, false);
    cm = &ce_masks;
    rm = &rl_masks;
    dm = &dev_masks;
  }

  auto save_model = [&](GeneratorModel<T>& model, BaselineEstimator<T>& bl,
                        const fs::path& path) {
    Checkpoint ck = make_checkpoint(model);
    append_tensors(ck, bl.params());
    write_checkpoint(path.string(), ck);
  };

  if (!rc.rl.from_scratch) {
    if (rc.checkpoint.empty())
      throw ConfigError("train-rl needs an initial checkpoint (--init) or --from-scratch");
    Checkpoint ck = read_checkpoint(rc.checkpoint);
    check_generator_ck(ck, rc, v.tgt.size(),
                       rc.data.features ? feat_dim : v.src->size());
    GeneratorModel<T> model = generator_from_checkpoint<T>(ck);
    BaselineEstimator<T> bl = has_baseline(ck) ? baseline_from_checkpoint<T>(ck)
                                               : fresh_baseline<T>(rc, model.d);

    PhaseResult<T> res = run_rl_phase(model, bl, train, dev, rm, dm, rl_cfg);
    write_curves_csv((cli.run_dir / "curves.csv").string(),
                     publishable(res.curve, rc.deterministic));
    fs::path out = cli.ckpt_dir / "best.ckpt";
    save_model(model, bl, out);
    cli.say("train-rl: best dev GLEU " + fmt(res.best_score, 4) + " at epoch " +
            fmt(res.best_epoch, 1) + " -> " + out.string());
    return 0;
  }

  std::vector<int64_t> sweep = parse_pretrain_list(rc.rl.pretrain_epochs, rc.train.epochs);
  std::string sweep_csv = "pretrain_epochs,dev_bleu_xent,dev_gleu_xent,dev_bleu_rl,dev_gleu_rl\n";
  for (int64_t p : sweep) {
    GeneratorModel<T> model = fresh_generator<T>(rc, v, feat_dim);
    BaselineEstimator<T> bl = fresh_baseline<T>(rc, model.d);
    TrainConfig<T> ce_cfg = base_train_config<T>(rc);
    ce_cfg.epochs = p;
    ce_cfg.validate();

    PipelineResult<T> res =
        pretrain_then_rl(model, bl, train, dev, cm, rm, dm, ce_cfg, rl_cfg);
    std::string tag = "pretrain" + std::to_string(p);
    write_curves_csv((cli.run_dir / ("curves_" + tag + ".csv")).string(),
                     publishable(res.curve, rc.deterministic));
    save_model(model, bl, cli.ckpt_dir / (tag + ".ckpt"));
    sweep_csv += std::to_string(p) + "," + fmt(res.after_xent.bleu, 4) + "," +
                 fmt(res.after_xent.gleu, 6) + "," + fmt(res.after_rl.bleu, 4) + "," +
                 fmt(res.after_rl.gleu, 6) + "\n";
    cli.say("train-rl: pretrain " + std::to_string(p) + " epochs, dev BLEU " +
            fmt(res.after_xent.bleu, 2) + " -> " + fmt(res.after_rl.bleu, 2) + ", dev GLEU " +
            fmt(res.after_xent.gleu, 4) + " -> " + fmt(res.after_rl.gleu, 4));
    if (sweep.size() == 1) {
      write_curves_csv((cli.run_dir / "curves.csv").string(),
                       publishable(res.curve, rc.deterministic));
      save_model(model, bl, cli.ckpt_dir / "best.ckpt");
    }
  }
  if (sweep.size() > 1)
    write_text(cli.run_dir / "pretrain_sweep.csv", sweep_csv);
  return 0;
}

template <class T>
int cmd_translate(Cli& cli) {
  RunConfig& rc = cli.rc;
  if (rc.checkpoint.empty()) throw ConfigError("checkpoint is not set");
  if (rc.translate.input.empty()) rc.translate.input = rc.data.test_src;
  if (rc.translate.input.empty())
    throw ConfigError("translate.input (or data.test_src) is not set");
  if (rc.translate.output.empty())
    rc.translate.output = (cli.run_dir / "hyps.txt").string();
  write_resolved(cli);

  Vocabs v = load_vocabs(rc);
  Checkpoint ck = read_checkpoint(rc.checkpoint);
  check_generator_ck(ck, rc, v.tgt.size(), rc.data.features ? -1 : v.src->size());
  GeneratorModel<T> model = generator_from_checkpoint<T>(ck);

  std::vector<std::string> lines = read_lines(rc.translate.input);
  std::vector<Example> inputs;
  inputs.reserve(lines.size());
  std::size_t width = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    Example ex;
    ex.id = static_cast<int64_t>(i);
    if (rc.data.features) {
      std::istringstream is(lines[i]);
      double x;
      while (is >> x) ex.features.push_back(x);
      if (!ex.features.empty()) {
        if (width == 0) width = ex.features.size();
        if (ex.features.size() != width)
          throw DataError("feature row width mismatch at line " + std::to_string(i + 1));
      }
    } else {
      for (const std::string& tok : split_tokens(lines[i])) ex.src.push_back(v.src->id(tok));
    }
    inputs.push_back(std::move(ex));
  }
  if (rc.data.features && width && static_cast<int64_t>(width) != ck.hyper.input_dim)
    throw DataError("checkpoint input dimension (" + std::to_string(ck.hyper.input_dim) +
                    ") does not match the data (" + std::to_string(width) + ")");

  std::optional<PredictorModel<T>> pred;
  if (rc.head == "small") pred.emplace(load_predictor<T>(rc, v));
  DecodeMode mode = decode_mode(rc);

  std::vector<std::string> hyps;
  hyps.reserve(inputs.size());
  for (const Example& ex : inputs) {
    if (ex.src.empty() && ex.features.empty()) {
      hyps.emplace_back();
      continue;
    }
    std::vector<int32_t> tokens;
    if (pred) {
      tokens = decode_with_predictor(model, *pred, ex, rc.decode.k, mode).tokens;
    } else if (mode.beam) {
      tokens = beam_decode(model, ex, nullptr, mode.cfg);
    } else {
      tokens = greedy_decode(model, ex, nullptr, mode.cfg.max_len);
    }
    hyps.push_back(detok(tokens, v.tgt));
  }
  write_lines(rc.translate.output, hyps);
  cli.say("translate: " + std::to_string(hyps.size()) + " sentences -> " + rc.translate.output);
  return 0;
}

int cmd_evaluate(Cli& cli) {
  const RunConfig& rc = cli.rc;
  if (rc.eval.hyp.empty() || rc.eval.ref.empty())
    throw ConfigError("eval.hyp and eval.ref must both be set");
  write_resolved(cli);

  std::vector<std::string> hyp_lines = read_lines(rc.eval.hyp);
  std::vector<std::string> ref_lines = read_lines(rc.eval.ref);
  if (hyp_lines.size() != ref_lines.size())
    throw DataError("line count mismatch: " + rc.eval.hyp + " vs " + rc.eval.ref);
  if (hyp_lines.empty()) throw DataError("evaluate: empty input files");

  // Metrics only compare token identities, so a shared on-the-fly dictionary
  // scores any pair of token files without a vocabulary.
  std::unordered_map<std::string, int32_t> dict;
  auto to_ids = [&dict](const std::string& line) {
    std::vector<int32_t> ids;
    for (const std::string& tok : split_tokens(line)) {
      auto it = dict.emplace(tok, static_cast<int32_t>(dict.size())).first;
      ids.push_back(it->second);
    }
    return ids;
  };
  std::vector<std::vector<int32_t>> hyps, refs;
  hyps.reserve(hyp_lines.size());
  refs.reserve(ref_lines.size());
  double gsum = 0;
  for (std::size_t i = 0; i < hyp_lines.size(); ++i) {
    hyps.push_back(to_ids(hyp_lines[i]));
    refs.push_back(to_ids(ref_lines[i]));
    gsum += gleu(hyps.back(), refs.back());
  }
  double bleu = corpus_bleu(hyps, refs);
  double gmean = gsum / static_cast<double>(hyps.size());

  std::string csv = "metric,value\n";
  csv += "bleu," + fmt(bleu, 2) + "\n";
  csv += "gleu," + fmt(gmean, 4) + "\n";
  fs::path out = cli.run_dir / "metrics.csv";
  write_text(out, csv);
  cli.say("evaluate: BLEU " + fmt(bleu, 2) + " GLEU " + fmt(gmean, 4) + " over " +
          std::to_string(hyps.size()) + " sentences -> " + out.string());
  return 0;
}

int cmd_analyze_percentiles(Cli& cli) {
  const RunConfig& rc = cli.rc;
  if (rc.analyze.text.empty()) throw ConfigError("analyze.text is not set");
  write_resolved(cli);

  Vocabulary tv = need_vocab(rc.data.tgt_vocab, "data.tgt_vocab");
  std::vector<std::vector<int32_t>> outputs;
  std::size_t tokens = 0;
  for (const std::string& line : read_lines(rc.analyze.text)) {
    std::vector<int32_t> ids;
    for (const std::string& tok : split_tokens(line)) ids.push_back(tv.id(tok));
    tokens += ids.size();
    outputs.push_back(std::move(ids));
  }
  if (tokens == 0) throw DataError("analyze-percentiles: no tokens in " + rc.analyze.text);

  std::vector<double> bins = percentile_histogram(outputs, tv);
  std::string csv = "percentile,fraction\n";
  for (std::size_t b = 0; b < bins.size(); ++b)
    csv += std::to_string((b + 1) * 10) + "," + fmt(bins[b], 6) + "\n";
  fs::path out = cli.run_dir / "percentiles.csv";
  write_text(out, csv);
  cli.say("analyze-percentiles: " + std::to_string(tokens) + " tokens over " +
          std::to_string(outputs.size()) + " lines -> " + out.string());
  return 0;
}

template <class T>
int cmd_benchmark(Cli& cli) {
  const RunConfig& rc = cli.rc;
  if (rc.checkpoint.empty()) throw ConfigError("checkpoint is not set");
  write_resolved(cli);
  Vocabs v = load_vocabs(rc);
  Checkpoint ck = read_checkpoint(rc.checkpoint);
  check_generator_ck(ck, rc, v.tgt.size(), rc.data.features ? -1 : v.src->size());
  GeneratorModel<T> gen = generator_from_checkpoint<T>(ck);
  PredictorModel<T> pred = load_predictor<T>(rc, v);

  bool test = rc.data.eval_split == "test";
  std::vector<Example> data =
      test ? load_split(cli, rc.data.test_src, rc.data.test_tgt, v, "test")
           : load_split(cli, rc.data.dev_src, rc.data.dev_tgt, v, "dev");
  if (static_cast<int64_t>(data.size()) > rc.benchmark.sentences)
    data.resize(static_cast<std::size_t>(rc.benchmark.sentences));

  DecodeMode mode = decode_mode(rc);
  std::vector<BenchSetting> settings = {{"small", true, rc.decode.k, mode},
                                        {"full", false, rc.decode.k, mode}};
  std::vector<BenchRow> rows = decode_benchmark(gen, pred, data, settings);
  if (rc.deterministic)
    for (BenchRow& r : rows) r.mean_ms = r.p50_ms = r.p95_ms = 0;
  write_benchmark_csv((cli.run_dir / "benchmark.csv").string(), rows);

  auto ratio = [](double a, double b) { return b > 0 ? a / b : 0.0; };
  const BenchRow& s = rows[0];
  const BenchRow& f = rows[1];
  std::string csv = "metric,small,full,ratio\n";
  csv += "mean_ms," + fmt(s.mean_ms, 6) + "," + fmt(f.mean_ms, 6) + "," +
         fmt(ratio(s.mean_ms, f.mean_ms), 6) + "\n";
  csv += "p50_ms," + fmt(s.p50_ms, 6) + "," + fmt(f.p50_ms, 6) + "," +
         fmt(ratio(s.p50_ms, f.p50_ms), 6) + "\n";
  csv += "p95_ms," + fmt(s.p95_ms, 6) + "," + fmt(f.p95_ms, 6) + "," +
         fmt(ratio(s.p95_ms, f.p95_ms), 6) + "\n";
  write_text(cli.run_dir / "benchmark_ratio.csv", csv);
  cli.say("benchmark: " + std::to_string(data.size()) + " sentences, small/full mean ratio " +
          fmt(ratio(s.mean_ms, f.mean_ms), 4) +
          (rc.deterministic ? " (timings zeroed in deterministic mode)" : ""));
  return 0;
}

template <class F>
int with_precision(const RunConfig& rc, F&& f) {
  if (rc.precision == "float32") return f(float{});
  return f(double{});
}

int dispatch_command(const std::string& name, RunConfig rc) {
  Cli cli(std::move(rc), name);
  if (name == "build-vocab") return cmd_build_vocab(cli);
  if (name == "make-synthetic") return cmd_make_synthetic(cli);
  if (name == "evaluate") return cmd_evaluate(cli);
  if (name == "analyze-percentiles") return cmd_analyze_percentiles(cli);
  return with_precision(cli.rc, [&](auto tag) {
    using T = decltype(tag);
    if (name == "train-predictor") return cmd_train_predictor<T>(cli);
    if (name == "eval-predictor") return cmd_eval_predictor<T>(cli);
    if (name == "train-xent") return cmd_train_xent<T>(cli);
    if (name == "train-rl") return cmd_train_rl<T>(cli);
    if (name == "translate") return cmd_translate<T>(cli);
    if (name == "benchmark") return cmd_benchmark<T>(cli);
    throw ConfigError("unknown command " + name);
  });
}

template <class V>
void set_path(json& j, const std::string& dotted, const V& v) {
  json* cur = &j;
  std::size_t start = 0;
  for (std::size_t dot = dotted.find('.'); dot != std::string::npos;
       dot = dotted.find('.', start)) {
    cur = &(*cur)[dotted.substr(start, dot - start)];
    start = dot + 1;
  }
  (*cur)[dotted.substr(start)] = v;
}

// Flags parsed by CLI11 are committed into a JSON override object after the
// parse, so they run through the same typed key table as config files.
struct Pending {
  std::string config_file;
  json overrides = json::object();
  std::vector<std::function<void()>> commits;
};

struct FlagBinder {
  CLI::App* cmd;
  std::shared_ptr<Pending> pend;

  void common() {
    cmd->add_option("--config", pend->config_file, "JSON config file");
    str("--run", "run_name", "run name under the runs directory");
    str("--runs-dir", "runs_dir", "root directory for run outputs");
    str("--precision", "precision", "float64 or float32");
    num("--seed", "seed", "master seed");
    boolean("--deterministic", "deterministic", "zero timing columns, single thread");
    num("--threads", "threads", "worker threads (deterministic mode forces 1)");
  }

  void data(bool vocabs_only = false) {
    if (!vocabs_only) {
      str("--train-src", "data.train_src", "training source file");
      str("--train-tgt", "data.train_tgt", "training target file");
      str("--dev-src", "data.dev_src", "dev source file");
      str("--dev-tgt", "data.dev_tgt", "dev target file");
      str("--test-src", "data.test_src", "test source file");
      str("--test-tgt", "data.test_tgt", "test target file");
      num("--min-count", "data.min_count", "drop rarer tokens from vocabularies");
      num("--max-len", "data.max_len", "drop longer target sentences");
    }
    str("--src-vocab", "data.src_vocab", "source vocabulary file");
    str("--tgt-vocab", "data.tgt_vocab", "target vocabulary file");
    boolean("--features", "data.features", "sources are dense feature rows");
  }

  void head() { str("--head", "head", "full or small (predicted vocabulary)"); }
  void predictor_in() { str("--predictor", "predictor.checkpoint", "predictor checkpoint"); }
  void generator_in(const char* flag) { str(flag, "checkpoint", "generator checkpoint"); }

  void model() {
    num("--width", "model.width", "hidden size");
    num("--layers", "model.layers", "decoder LSTM layers (1 or 2)");
    boolean("--input-feed", "model.input_feed", "feed attention output back in");
    real("--model-dropout", "model.dropout", "generator dropout rate");
  }

  void train() {
    str("--optimizer", "train.optimizer", "sgd, adagrad, or adam");
    real("--lr", "train.lr", "learning rate");
    real("--momentum", "train.momentum", "SGD momentum");
    real("--weight-decay", "train.weight_decay", "L2 penalty");
    real("--clip-norm", "train.clip_norm", "global gradient norm cap");
    num("--k", "train.k", "mask size for the small head");
    num("--split", "train.split", "sub-batches per update");
    num("--batch-size", "train.batch_size", "examples per batch");
    num("--train-max-len", "train.max_len", "sampling cap during training");
    real("--dropout", "train.dropout", "dropout rate during training");
    real("--freeze-epochs", "train.freeze_epochs", "epochs before LR halving");
    num("--epochs", "train.epochs", "training epochs");
  }

  void rl() {
    real("--rl-lr", "rl.lr", "reward-phase learning rate");
    num("--rl-epochs", "rl.epochs", "reward-phase epochs");
    real("--lambda", "rl.lambda", "cross-entropy share of the joint loss");
    boolean("--gold-union", "rl.gold_union", "keep gold ids inside sampling masks");
    real("--baseline-lr", "rl.baseline_lr", "baseline regressor learning rate");
  }

  void decode() {
    num("--beam", "decode.beam", "beam width (1 = greedy)");
    num("--decode-max-len", "decode.max_len", "output length cap");
    str("--length-norm", "decode.length_norm", "length or none");
    real("--alpha", "decode.alpha", "length normalization exponent");
    num("--decode-k", "decode.k", "mask size for small-head decoding");
  }

  void str(const char* flag, const char* key, const char* desc) { add<std::string>(flag, key, desc); }
  void num(const char* flag, const char* key, const char* desc) { add<int64_t>(flag, key, desc); }
  void real(const char* flag, const char* key, const char* desc) { add<double>(flag, key, desc); }
  void boolean(const char* flag, const char* key, const char* desc) { add<bool>(flag, key, desc); }

  template <class V>
  void add(const char* flag, const char* key, const char* desc) {
    auto val = std::make_shared<V>();
    CLI::Option* o = cmd->add_option(flag, *val, desc);
    Pending* p = pend.get();
    pend->commits.push_back([p, o, val, k = std::string(key)] {
      if (o->count()) set_path(p->overrides, k, *val);
    });
  }
};

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"sequence generation with predicted vocabularies"};
  app.require_subcommand(1);
  auto pend = std::make_shared<Pending>();

  auto sub = [&](const char* name, const char* desc) {
    FlagBinder b{app.add_subcommand(name, desc), pend};
    b.common();
    return b;
  };

  {
    FlagBinder b = sub("build-vocab", "count training tokens into vocabulary files");
    b.data();
  }
  {
    FlagBinder b = sub("make-synthetic", "write a reversal task with Zipf-distributed tokens");
    b.str("--out-dir", "synthetic.out_dir", "where the six data files go");
    b.num("--src-types", "synthetic.src_types", "source content types");
    b.num("--tgt-types", "synthetic.tgt_types", "target content types");
    b.num("--syn-min-len", "synthetic.min_len", "shortest sentence");
    b.num("--syn-max-len", "synthetic.max_len", "longest sentence");
    b.num("--train-size", "synthetic.train_size", "training pairs");
    b.num("--dev-size", "synthetic.dev_size", "dev pairs");
    b.num("--test-size", "synthetic.test_size", "test pairs");
    b.real("--zipf", "synthetic.zipf_exponent", "token frequency skew");
    b.num("--syn-seed", "synthetic.seed", "data generation seed");
  }
  {
    FlagBinder b = sub("train-predictor", "train the per-input vocabulary predictor");
    b.data();
    b.num("--pred-width", "predictor.width", "predictor hidden size");
    b.real("--pred-lr", "predictor.lr", "AdaGrad learning rate");
    b.num("--pred-batch", "predictor.batch_size", "examples per batch");
    b.num("--pred-epochs", "predictor.epochs", "training epochs");
    b.num("--recall-k", "predictor.recall_k", "dev recall cutoff for model selection");
    b.real("--smooth-eps", "predictor.smooth_eps", "label smoothing mass");
  }
  {
    FlagBinder b = sub("eval-predictor", "recall of predicted vocabularies over a K sweep");
    b.data();
    b.predictor_in();
    b.str("--split", "data.eval_split", "dev or test");
  }
  {
    FlagBinder b = sub("train-xent", "cross-entropy training of the generator");
    b.data();
    b.head();
    b.predictor_in();
    b.model();
    b.train();
  }
  {
    FlagBinder b = sub("train-rl", "REINFORCE training with a learned baseline");
    b.data();
    b.head();
    b.predictor_in();
    b.generator_in("--init");
    b.model();
    b.train();
    b.rl();
    auto from_scratch = std::make_shared<bool>(false);
    CLI::Option* o = b.cmd->add_flag("--from-scratch", *from_scratch,
                                     "pre-train first instead of loading --init");
    Pending* p = pend.get();
    pend->commits.push_back([p, o, from_scratch] {
      if (o->count()) set_path(p->overrides, "rl.from_scratch", *from_scratch);
    });
    b.str("--pretrain-epochs", "rl.pretrain_epochs",
          "comma list of pre-training epoch counts to sweep");
  }
  {
    FlagBinder b = sub("translate", "decode a source file into hypotheses");
    b.data(true);
    b.head();
    b.predictor_in();
    b.generator_in("--checkpoint");
    b.decode();
    b.str("--input", "translate.input", "source file (defaults to data.test_src)");
    b.str("--out", "translate.output", "hypothesis file");
  }
  {
    FlagBinder b = sub("evaluate", "BLEU and GLEU of a hypothesis file against references");
    b.str("--hyp", "eval.hyp", "hypothesis token file");
    b.str("--ref", "eval.ref", "reference token file");
  }
  {
    FlagBinder b = sub("analyze-percentiles", "frequency-decile histogram of a token file");
    b.data(true);
    b.str("--text", "analyze.text", "token file to histogram");
  }
  {
    FlagBinder b = sub("benchmark", "decode timing, small head against the full head");
    b.data();
    b.predictor_in();
    b.generator_in("--checkpoint");
    b.decode();
    b.str("--split", "data.eval_split", "dev or test");
    b.num("--sentences", "benchmark.sentences", "how many sentences to time");
  }

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);

    for (const auto& commit : pend->commits) commit();
    RunConfig rc;
    if (!pend->config_file.empty()) rc = load_config_file(pend->config_file, rc);
    rc = config_from_json(pend->overrides, rc);
    if (!rc.deterministic) {
      if (const char* env = std::getenv("SEQRL_THREADS")) {
        char* end = nullptr;
        long n = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || n < 1)
          throw ConfigError("SEQRL_THREADS must be a positive integer");
        rc.threads = n;
      }
    }
    validate_config(rc);

    std::vector<CLI::App*> picked = app.get_subcommands();
    return dispatch_command(picked.front()->get_name(), std::move(rc));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace seqrl
