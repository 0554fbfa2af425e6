#include "seqrl/config.hpp"

#include <fstream>
#include <functional>
#include <map>

namespace seqrl {

namespace {

using nlohmann::json;

using Setter = std::function<void(RunConfig&, const json&)>;

void require(bool ok, const std::string& key, const char* want) {
  if (!ok) throw ConfigError("config key " + key + ": expected " + want);
}

// The table maps each documented dotted key to a typed store. Building it
// with member lambdas per key keeps parse, echo, and docs in one place.
const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto s = [&](const char* key, std::function<void(RunConfig&, const json&)> f) {
      t.emplace(key, std::move(f));
    };
    auto str = [&](const char* key, auto ref) {
      s(key, [ref, key](RunConfig& rc, const json& v) {
        require(v.is_string(), key, "a string");
        ref(rc) = v.get<std::string>();
      });
    };
    auto num_i = [&](const char* key, auto ref) {
      s(key, [ref, key](RunConfig& rc, const json& v) {
        require(v.is_number_integer(), key, "an integer");
        ref(rc) = v.get<int64_t>();
      });
    };
    auto num_f = [&](const char* key, auto ref) {
      s(key, [ref, key](RunConfig& rc, const json& v) {
        require(v.is_number(), key, "a number");
        ref(rc) = v.get<double>();
      });
    };
    auto flag = [&](const char* key, auto ref) {
      s(key, [ref, key](RunConfig& rc, const json& v) {
        require(v.is_boolean(), key, "a boolean");
        ref(rc) = v.get<bool>();
      });
    };

    str("run_name", [](RunConfig& c) -> std::string& { return c.run_name; });
    str("runs_dir", [](RunConfig& c) -> std::string& { return c.runs_dir; });
    str("precision", [](RunConfig& c) -> std::string& { return c.precision; });
    str("head", [](RunConfig& c) -> std::string& { return c.head; });
    str("checkpoint", [](RunConfig& c) -> std::string& { return c.checkpoint; });
    num_i("seed", [](RunConfig& c) -> int64_t& { return c.seed; });
    flag("deterministic", [](RunConfig& c) -> bool& { return c.deterministic; });
    num_i("threads", [](RunConfig& c) -> int64_t& { return c.threads; });

    str("data.train_src", [](RunConfig& c) -> std::string& { return c.data.train_src; });
    str("data.train_tgt", [](RunConfig& c) -> std::string& { return c.data.train_tgt; });
    str("data.dev_src", [](RunConfig& c) -> std::string& { return c.data.dev_src; });
    str("data.dev_tgt", [](RunConfig& c) -> std::string& { return c.data.dev_tgt; });
    str("data.test_src", [](RunConfig& c) -> std::string& { return c.data.test_src; });
    str("data.test_tgt", [](RunConfig& c) -> std::string& { return c.data.test_tgt; });
    str("data.src_vocab", [](RunConfig& c) -> std::string& { return c.data.src_vocab; });
    str("data.tgt_vocab", [](RunConfig& c) -> std::string& { return c.data.tgt_vocab; });
    flag("data.features", [](RunConfig& c) -> bool& { return c.data.features; });
    num_i("data.min_count", [](RunConfig& c) -> int64_t& { return c.data.min_count; });
    num_i("data.max_len", [](RunConfig& c) -> int64_t& { return c.data.max_len; });
    str("data.eval_split", [](RunConfig& c) -> std::string& { return c.data.eval_split; });

    num_i("model.width", [](RunConfig& c) -> int64_t& { return c.model.width; });
    num_i("model.layers", [](RunConfig& c) -> int64_t& { return c.model.layers; });
    flag("model.input_feed", [](RunConfig& c) -> bool& { return c.model.input_feed; });
    num_f("model.dropout", [](RunConfig& c) -> double& { return c.model.dropout; });

    num_i("predictor.width", [](RunConfig& c) -> int64_t& { return c.predictor.width; });
    num_f("predictor.lr", [](RunConfig& c) -> double& { return c.predictor.lr; });
    num_i("predictor.batch_size", [](RunConfig& c) -> int64_t& { return c.predictor.batch_size; });
    num_i("predictor.epochs", [](RunConfig& c) -> int64_t& { return c.predictor.epochs; });
    num_i("predictor.recall_k", [](RunConfig& c) -> int64_t& { return c.predictor.recall_k; });
    num_f("predictor.smooth_eps", [](RunConfig& c) -> double& { return c.predictor.smooth_eps; });
    num_f("predictor.weight_decay",
          [](RunConfig& c) -> double& { return c.predictor.weight_decay; });
    num_f("predictor.clip_norm", [](RunConfig& c) -> double& { return c.predictor.clip_norm; });
    str("predictor.checkpoint",
        [](RunConfig& c) -> std::string& { return c.predictor.checkpoint; });

    str("train.optimizer", [](RunConfig& c) -> std::string& { return c.train.optimizer; });
    num_f("train.lr", [](RunConfig& c) -> double& { return c.train.lr; });
    num_f("train.momentum", [](RunConfig& c) -> double& { return c.train.momentum; });
    num_f("train.weight_decay", [](RunConfig& c) -> double& { return c.train.weight_decay; });
    num_f("train.clip_norm", [](RunConfig& c) -> double& { return c.train.clip_norm; });
    num_i("train.k", [](RunConfig& c) -> int64_t& { return c.train.k; });
    num_i("train.split", [](RunConfig& c) -> int64_t& { return c.train.split; });
    num_i("train.batch_size", [](RunConfig& c) -> int64_t& { return c.train.batch_size; });
    num_i("train.max_len", [](RunConfig& c) -> int64_t& { return c.train.max_len; });
    num_f("train.dropout", [](RunConfig& c) -> double& { return c.train.dropout; });
    num_f("train.freeze_epochs", [](RunConfig& c) -> double& { return c.train.freeze_epochs; });
    num_i("train.epochs", [](RunConfig& c) -> int64_t& { return c.train.epochs; });

    num_f("rl.lr", [](RunConfig& c) -> double& { return c.rl.lr; });
    num_i("rl.epochs", [](RunConfig& c) -> int64_t& { return c.rl.epochs; });
    num_f("rl.lambda", [](RunConfig& c) -> double& { return c.rl.lambda; });
    flag("rl.gold_union", [](RunConfig& c) -> bool& { return c.rl.gold_union; });
    num_f("rl.baseline_lr", [](RunConfig& c) -> double& { return c.rl.baseline_lr; });
    flag("rl.from_scratch", [](RunConfig& c) -> bool& { return c.rl.from_scratch; });
    str("rl.pretrain_epochs",
        [](RunConfig& c) -> std::string& { return c.rl.pretrain_epochs; });

    num_i("decode.beam", [](RunConfig& c) -> int64_t& { return c.decode.beam; });
    num_i("decode.max_len", [](RunConfig& c) -> int64_t& { return c.decode.max_len; });
    str("decode.length_norm", [](RunConfig& c) -> std::string& { return c.decode.length_norm; });
    num_f("decode.alpha", [](RunConfig& c) -> double& { return c.decode.alpha; });
    num_i("decode.k", [](RunConfig& c) -> int64_t& { return c.decode.k; });

    num_i("synthetic.src_types", [](RunConfig& c) -> int64_t& { return c.synthetic.src_types; });
    num_i("synthetic.tgt_types", [](RunConfig& c) -> int64_t& { return c.synthetic.tgt_types; });
    num_i("synthetic.min_len", [](RunConfig& c) -> int64_t& { return c.synthetic.min_len; });
    num_i("synthetic.max_len", [](RunConfig& c) -> int64_t& { return c.synthetic.max_len; });
    num_i("synthetic.train_size",
          [](RunConfig& c) -> int64_t& { return c.synthetic.train_size; });
    num_i("synthetic.dev_size", [](RunConfig& c) -> int64_t& { return c.synthetic.dev_size; });
    num_i("synthetic.test_size", [](RunConfig& c) -> int64_t& { return c.synthetic.test_size; });
    num_f("synthetic.zipf_exponent",
          [](RunConfig& c) -> double& { return c.synthetic.zipf_exponent; });
    num_i("synthetic.seed", [](RunConfig& c) -> int64_t& { return c.synthetic.seed; });
    str("synthetic.out_dir", [](RunConfig& c) -> std::string& { return c.synthetic.out_dir; });

    num_i("benchmark.sentences",
          [](RunConfig& c) -> int64_t& { return c.benchmark.sentences; });

    str("translate.input", [](RunConfig& c) -> std::string& { return c.translate.input; });
    str("translate.output", [](RunConfig& c) -> std::string& { return c.translate.output; });
    str("eval.hyp", [](RunConfig& c) -> std::string& { return c.eval.hyp; });
    str("eval.ref", [](RunConfig& c) -> std::string& { return c.eval.ref; });
    str("analyze.text", [](RunConfig& c) -> std::string& { return c.analyze.text; });
    return t;
  }();
  return table;
}

void apply_keys(RunConfig& rc, const json& node, const std::string& prefix) {
  for (const auto& item : node.items()) {
    std::string key = prefix.empty() ? item.key() : prefix + "." + item.key();
    const json& v = item.value();
    if (v.is_object()) {
      apply_keys(rc, v, key);
      continue;
    }
    auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("unknown config key: " + key);
    it->second(rc, v);
  }
}

[[noreturn]] void enum_error(const std::string& key, const std::string& got,
                             const char* allowed) {
  throw ConfigError("config key " + key + ": got \"" + got + "\", expected one of " + allowed);
}

}  // namespace

RunConfig config_from_json(const nlohmann::json& j, RunConfig base) {
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  apply_keys(base, j, "");
  return base;
}

nlohmann::json config_to_json(const RunConfig& rc) {
  json j;
  j["run_name"] = rc.run_name;
  j["runs_dir"] = rc.runs_dir;
  j["precision"] = rc.precision;
  j["head"] = rc.head;
  j["checkpoint"] = rc.checkpoint;
  j["seed"] = rc.seed;
  j["deterministic"] = rc.deterministic;
  j["threads"] = rc.threads;

  json d;
  d["train_src"] = rc.data.train_src;
  d["train_tgt"] = rc.data.train_tgt;
  d["dev_src"] = rc.data.dev_src;
  d["dev_tgt"] = rc.data.dev_tgt;
  d["test_src"] = rc.data.test_src;
  d["test_tgt"] = rc.data.test_tgt;
  d["src_vocab"] = rc.data.src_vocab;
  d["tgt_vocab"] = rc.data.tgt_vocab;
  d["features"] = rc.data.features;
  d["min_count"] = rc.data.min_count;
  d["max_len"] = rc.data.max_len;
  d["eval_split"] = rc.data.eval_split;
  j["data"] = d;

  json m;
  m["width"] = rc.model.width;
  m["layers"] = rc.model.layers;
  m["input_feed"] = rc.model.input_feed;
  m["dropout"] = rc.model.dropout;
  j["model"] = m;

  json p;
  p["width"] = rc.predictor.width;
  p["lr"] = rc.predictor.lr;
  p["batch_size"] = rc.predictor.batch_size;
  p["epochs"] = rc.predictor.epochs;
  p["recall_k"] = rc.predictor.recall_k;
  p["smooth_eps"] = rc.predictor.smooth_eps;
  p["weight_decay"] = rc.predictor.weight_decay;
  p["clip_norm"] = rc.predictor.clip_norm;
  p["checkpoint"] = rc.predictor.checkpoint;
  j["predictor"] = p;

  json t;
  t["optimizer"] = rc.train.optimizer;
  t["lr"] = rc.train.lr;
  t["momentum"] = rc.train.momentum;
  t["weight_decay"] = rc.train.weight_decay;
  t["clip_norm"] = rc.train.clip_norm;
  t["k"] = rc.train.k;
  t["split"] = rc.train.split;
  t["batch_size"] = rc.train.batch_size;
  t["max_len"] = rc.train.max_len;
  t["dropout"] = rc.train.dropout;
  t["freeze_epochs"] = rc.train.freeze_epochs;
  t["epochs"] = rc.train.epochs;
  j["train"] = t;

  json r;
  r["lr"] = rc.rl.lr;
  r["epochs"] = rc.rl.epochs;
  r["lambda"] = rc.rl.lambda;
  r["gold_union"] = rc.rl.gold_union;
  r["baseline_lr"] = rc.rl.baseline_lr;
  r["from_scratch"] = rc.rl.from_scratch;
  r["pretrain_epochs"] = rc.rl.pretrain_epochs;
  j["rl"] = r;

  json dc;
  dc["beam"] = rc.decode.beam;
  dc["max_len"] = rc.decode.max_len;
  dc["length_norm"] = rc.decode.length_norm;
  dc["alpha"] = rc.decode.alpha;
  dc["k"] = rc.decode.k;
  j["decode"] = dc;

  json s;
  s["src_types"] = rc.synthetic.src_types;
  s["tgt_types"] = rc.synthetic.tgt_types;
  s["min_len"] = rc.synthetic.min_len;
  s["max_len"] = rc.synthetic.max_len;
  s["train_size"] = rc.synthetic.train_size;
  s["dev_size"] = rc.synthetic.dev_size;
  s["test_size"] = rc.synthetic.test_size;
  s["zipf_exponent"] = rc.synthetic.zipf_exponent;
  s["seed"] = rc.synthetic.seed;
  s["out_dir"] = rc.synthetic.out_dir;
  j["synthetic"] = s;

  json b;
  b["sentences"] = rc.benchmark.sentences;
  j["benchmark"] = b;

  json tr;
  tr["input"] = rc.translate.input;
  tr["output"] = rc.translate.output;
  j["translate"] = tr;

  json e;
  e["hyp"] = rc.eval.hyp;
  e["ref"] = rc.eval.ref;
  j["eval"] = e;

  json a;
  a["text"] = rc.analyze.text;
  j["analyze"] = a;
  return j;
}

void validate_config(RunConfig& rc) {
  if (rc.precision != "float64" && rc.precision != "float32")
    enum_error("precision", rc.precision, "float64, float32");
  if (rc.head != "full" && rc.head != "small") enum_error("head", rc.head, "full, small");
  if (rc.train.optimizer != "sgd" && rc.train.optimizer != "adagrad" &&
      rc.train.optimizer != "adam")
    enum_error("train.optimizer", rc.train.optimizer, "sgd, adagrad, adam");
  if (rc.decode.length_norm != "length" && rc.decode.length_norm != "none")
    enum_error("decode.length_norm", rc.decode.length_norm, "length, none");
  if (rc.data.eval_split != "dev" && rc.data.eval_split != "test")
    enum_error("data.eval_split", rc.data.eval_split, "dev, test");
  if (rc.threads < 1) throw ConfigError("threads must be at least 1");
  if (rc.deterministic) rc.threads = 1;
  if (rc.model.width < 1 || rc.predictor.width < 1)
    throw ConfigError("model widths must be positive");
  if (rc.model.layers < 1 || rc.model.layers > 2)
    throw ConfigError("model.layers must be 1 or 2");
  if (rc.data.min_count < 1) throw ConfigError("data.min_count must be at least 1");
  if (rc.data.max_len < 1 || rc.train.max_len < 1 || rc.decode.max_len < 1)
    throw ConfigError("max_len values must be positive");
  if (rc.decode.beam < 1) throw ConfigError("decode.beam must be at least 1");
  if (rc.decode.k < 1 || rc.train.k < 1 || rc.predictor.recall_k < 1)
    throw ConfigError("mask sizes must be positive");
  if (rc.benchmark.sentences < 1) throw ConfigError("benchmark.sentences must be positive");
}

RunConfig load_config_file(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
  return config_from_json(j, std::move(base));
}

}  // namespace seqrl
