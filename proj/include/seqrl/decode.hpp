#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "seqrl/alloc.hpp"
#include "seqrl/generator.hpp"
#include "seqrl/predictor.hpp"

namespace seqrl {

enum class LengthNorm { None, ByLength };

struct BeamConfig {
  int64_t width = 10;
  int64_t max_len = 50;
  LengthNorm norm = LengthNorm::ByLength;
  double alpha = 1.0;  // ranking score = logp / steps^alpha
};

// One decode path. `tokens` holds emitted content ids only; the EOS action,
// when taken, contributes to `logp` and `steps` but is never emitted.
// `state` is positioned so that stepping it with `last` yields the
// distribution over the next token.
template <class T>
struct BeamHyp {
  std::vector<int32_t> tokens;
  double logp = 0;
  int64_t steps = 0;
  int32_t last = kBos;
  DecoderState<T> state;
  bool finished = false;  // ended on EOS rather than the length cap
};

template <class T>
struct Beam {
  std::vector<BeamHyp<T>> hypotheses;  // normalized score nonincreasing
  int64_t width = 1;
};

inline double normalized_score(double logp, int64_t steps, LengthNorm norm, double alpha) {
  if (norm == LengthNorm::None || steps < 1) return logp;
  return logp / std::pow(static_cast<double>(steps), alpha);
}

template <class T>
std::vector<int32_t> greedy_decode(GeneratorModel<T>& model, const Example& ex,
                                   const ReducedHead<T>* head, int64_t max_n) {
  SampleResult<T> sr = sample_sentence<T>(nullptr, model, ex, head, max_n, nullptr, true);
  return without_trailing_eos(std::move(sr.tokens));
}

template <class T>
Beam<T> beam_search(GeneratorModel<T>& model, const Example& ex, const ReducedHead<T>* head,
                    const BeamConfig& cfg) {
  if (cfg.width < 1) throw ConfigError("beam_search: width must be >= 1");
  if (cfg.max_len < 1) throw ConfigError("beam_search: max_len must be >= 1");

  BeamHyp<T> root;
  root.state = model.uses_features ? init_from_features<T>(nullptr, model, ex.features)
                                   : encode<T>(nullptr, model, ex.src);
  std::vector<BeamHyp<T>> live;
  live.push_back(std::move(root));
  std::vector<BeamHyp<T>> done;

  auto norm_of = [&](const BeamHyp<T>& h) {
    return normalized_score(h.logp, h.steps, cfg.norm, cfg.alpha);
  };

  for (int64_t depth = 0; depth < cfg.max_len && !live.empty(); ++depth) {
    if (!done.empty()) {
      // logp only falls as a path grows, so the best final score a live path
      // can still reach is logp now, normalized at the maximum length
      double best_done = -std::numeric_limits<double>::infinity();
      for (const BeamHyp<T>& h : done) best_done = std::max(best_done, norm_of(h));
      double bound = -std::numeric_limits<double>::infinity();
      for (const BeamHyp<T>& h : live)
        bound = std::max(bound, normalized_score(h.logp, cfg.max_len, cfg.norm, cfg.alpha));
      if (bound <= best_done) break;
    }

    struct Cand {
      double logp;
      std::size_t parent;
      int64_t local;
    };
    std::vector<Cand> cands;
    std::vector<StepResult<T>> expanded(live.size());
    for (std::size_t p = 0; p < live.size(); ++p) {
      expanded[p] = step<T>(nullptr, model, live[p].state, live[p].last, head);
      const T* d = expanded[p].dist.data();
      for (int64_t i = 0; i < expanded[p].dist.size(); ++i)
        cands.push_back({live[p].logp + std::log(static_cast<double>(d[i])), p, i});
    }
    std::size_t keep = std::min<std::size_t>(cands.size(), static_cast<std::size_t>(cfg.width));
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep),
                      cands.end(), [](const Cand& a, const Cand& b) {
                        if (a.logp != b.logp) return a.logp > b.logp;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.local < b.local;
                      });
    cands.resize(keep);

    std::vector<BeamHyp<T>> next;
    next.reserve(keep);
    for (const Cand& c : cands) {
      int32_t global = head ? head->mask.selected[static_cast<std::size_t>(c.local)]
                            : static_cast<int32_t>(c.local);
      BeamHyp<T> h;
      h.tokens = live[c.parent].tokens;
      h.logp = c.logp;
      h.steps = live[c.parent].steps + 1;
      h.state = expanded[c.parent].state;
      h.last = global;
      if (global == kEos) {
        h.finished = true;
        done.push_back(std::move(h));
      } else {
        h.tokens.push_back(global);
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
  }
  // the length cap ends whatever is still alive
  for (BeamHyp<T>& h : live) done.push_back(std::move(h));

  std::stable_sort(done.begin(), done.end(),
                   [&](const BeamHyp<T>& a, const BeamHyp<T>& b) { return norm_of(a) > norm_of(b); });
  Beam<T> beam;
  beam.width = cfg.width;
  beam.hypotheses = std::move(done);
  return beam;
}

template <class T>
std::vector<int32_t> beam_decode(GeneratorModel<T>& model, const Example& ex,
                                 const ReducedHead<T>* head, const BeamConfig& cfg) {
  return beam_search(model, ex, head, cfg).hypotheses.front().tokens;
}

struct DecodeMode {
  bool beam = false;  // greedy otherwise
  BeamConfig cfg;     // max_len caps greedy decoding too
};

struct DecodeTiming {
  double mask_ms = 0;    // predictor forward + top-K mask construction
  double decode_ms = 0;  // reduced-head gather + search
};

struct PredictedDecode {
  std::vector<int32_t> tokens;
  VocabMask mask;
  DecodeTiming timing;
};

// Predict the example's vocabulary, reduce the head to it, decode. K beyond
// the target vocabulary is clamped, so a sweep over K is always legal.
template <class T>
PredictedDecode decode_with_predictor(GeneratorModel<T>& gen, PredictorModel<T>& pred,
                                      const Example& ex, int64_t k, const DecodeMode& mode) {
  PredictedDecode out;
  alloc::Timer mask_timer;
  Tensor<T> s = predict_scores<T>(nullptr, pred, ex, false, nullptr);
  int64_t k_eff = std::min<int64_t>(k, pred.vocab_size());
  out.mask = build_mask(scores_as_doubles(s), k_eff, nullptr, false);
  out.timing.mask_ms = mask_timer.elapsed_ms();

  alloc::Timer decode_timer;
  ReducedHead<T> head = make_reduced_head<T>(nullptr, gen, out.mask);
  out.tokens = mode.beam ? beam_decode(gen, ex, &head, mode.cfg)
                         : greedy_decode(gen, ex, &head, mode.cfg.max_len);
  out.timing.decode_ms = decode_timer.elapsed_ms();
  return out;
}

struct BenchSetting {
  std::string label;
  bool small_head = false;
  int64_t k = 1000;  // ignored for the full head
  DecodeMode mode;
};

struct BenchRow {
  std::string setting;
  int64_t vocab = 0;
  int64_t k = 0;  // == vocab for the full head
  double mean_ms = 0;
  double p50_ms = 0;
  double p95_ms = 0;
};

inline double nearest_rank(std::vector<double> xs, double q) {
  if (xs.empty()) throw DataError("nearest_rank: empty sample");
  std::sort(xs.begin(), xs.end());
  std::size_t idx = static_cast<std::size_t>(
      std::ceil(q * static_cast<double>(xs.size())));
  idx = std::max<std::size_t>(idx, 1);
  return xs[std::min(idx, xs.size()) - 1];
}

// Per-sentence wall time for each setting; the small head is charged for its
// mask construction, matching the reported timings.
template <class T>
std::vector<BenchRow> decode_benchmark(GeneratorModel<T>& gen, PredictorModel<T>& pred,
                                       const std::vector<Example>& data,
                                       const std::vector<BenchSetting>& settings) {
  if (data.empty()) throw DataError("decode_benchmark: empty dataset");
  std::vector<BenchRow> rows;
  rows.reserve(settings.size());
  for (const BenchSetting& s : settings) {
    std::vector<double> ms;
    ms.reserve(data.size());
    for (const Example& ex : data) {
      if (s.small_head) {
        PredictedDecode r = decode_with_predictor(gen, pred, ex, s.k, s.mode);
        ms.push_back(r.timing.mask_ms + r.timing.decode_ms);
      } else {
        alloc::Timer t;
        if (s.mode.beam)
          beam_decode<T>(gen, ex, nullptr, s.mode.cfg);
        else
          greedy_decode<T>(gen, ex, nullptr, s.mode.cfg.max_len);
        ms.push_back(t.elapsed_ms());
      }
    }
    double mean = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
    rows.push_back({s.label, gen.vocab_size(),
                    s.small_head ? std::min<int64_t>(s.k, gen.vocab_size()) : gen.vocab_size(),
                    mean, nearest_rank(ms, 0.5), nearest_rank(ms, 0.95)});
  }
  return rows;
}

inline void write_benchmark_csv(const std::string& path, const std::vector<BenchRow>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "setting,vocab,K,mean_ms,p50_ms,p95_ms\n";
  for (const BenchRow& r : rows)
    out << r.setting << ',' << r.vocab << ',' << r.k << ',' << r.mean_ms << ',' << r.p50_ms
        << ',' << r.p95_ms << '\n';
}

}  // namespace seqrl
