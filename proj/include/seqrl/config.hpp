#pragma once

#include <string>

#include <json.hpp>

#include "seqrl/common.hpp"

namespace seqrl {

// Every knob a run can set, with its default. The CLI materializes one of
// these per invocation, echoes it back as `config.resolved`, and from then on
// the file alone determines the run.
struct RunConfig {
  std::string run_name;
  std::string runs_dir = "runs";
  std::string precision = "float64";  // or "float32"
  std::string head = "full";          // or "small": decode/train over a predicted mask
  int64_t seed = 1;
  bool deterministic = true;  // single thread, timing columns written as 0
  int64_t threads = 1;

  struct Data {
    std::string train_src, train_tgt;
    std::string dev_src, dev_tgt;
    std::string test_src, test_tgt;
    std::string src_vocab, tgt_vocab;
    bool features = false;  // sources are dense feature rows, not token lines
    int64_t min_count = 1;
    int64_t max_len = 50;
    std::string eval_split = "dev";  // which split eval-predictor/benchmark read
  } data;

  struct Model {
    int64_t width = 256;
    int64_t layers = 1;
    bool input_feed = true;
    double dropout = 0.2;
  } model;

  struct Predictor {
    int64_t width = 512;
    double lr = 0.08;
    int64_t batch_size = 128;
    int64_t epochs = 10;
    int64_t recall_k = 1000;
    double smooth_eps = 0.1;
    double weight_decay = 1e-6;
    double clip_norm = 1.0;
    std::string checkpoint;  // trained predictor, read by small-head commands
  } predictor;

  struct Train {
    std::string optimizer = "sgd";  // "sgd" | "adagrad" | "adam"
    double lr = 1.0;
    double momentum = 0.75;
    double weight_decay = 1e-6;
    double clip_norm = 1.0;
    int64_t k = 1000;
    int64_t split = 1;
    int64_t batch_size = 128;
    int64_t max_len = 50;
    double dropout = 0.2;
    double freeze_epochs = 6.0;
    int64_t epochs = 10;
  } train;

  // Reward-phase overrides; everything not listed here is taken from train.*.
  struct Rl {
    double lr = 0.01;
    int64_t epochs = 5;
    double lambda = 0.005;
    bool gold_union = false;  // keep gold ids inside the sampling mask
    double baseline_lr = 1e-3;
    bool from_scratch = false;          // ignore `checkpoint`, pre-train first
    std::string pretrain_epochs;        // comma list for from-scratch sweeps
  } rl;

  struct Decode {
    int64_t beam = 1;  // 1 = greedy
    int64_t max_len = 50;
    std::string length_norm = "length";  // or "none"
    double alpha = 1.0;
    int64_t k = 1000;  // mask size when head = "small"
  } decode;

  struct Synthetic {
    int64_t src_types = 200;
    int64_t tgt_types = 200;
    int64_t min_len = 4;
    int64_t max_len = 12;
    int64_t train_size = 5000;
    int64_t dev_size = 500;
    int64_t test_size = 500;
    double zipf_exponent = 1.1;
    int64_t seed = 1;
    std::string out_dir;  // defaults to <run dir>/data
  } synthetic;

  struct Benchmark {
    int64_t sentences = 50;  // cap on timed examples
  } benchmark;

  struct Translate {
    std::string input;   // defaults to data.test_src
    std::string output;  // defaults to <run dir>/hyps.txt
  } translate;

  struct Eval {
    std::string hyp;
    std::string ref;
  } eval;

  struct Analyze {
    std::string text;  // token file whose frequency profile is histogrammed
  } analyze;

  std::string checkpoint;  // generator checkpoint read by train-rl/translate/benchmark
};

// Applies `j` on top of `base`. Unknown keys and type mismatches throw
// ConfigError naming the offending dotted key.
RunConfig config_from_json(const nlohmann::json& j, RunConfig base = {});

// Full nested echo, every key present. Serializing this and parsing it back
// reproduces the config exactly.
nlohmann::json config_to_json(const RunConfig& rc);

// Enum strings, ranges, and cross-field rules (deterministic forces one
// thread). Throws ConfigError.
void validate_config(RunConfig& rc);

RunConfig load_config_file(const std::string& path, RunConfig base = {});

}  // namespace seqrl
