#include "seqrl/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace seqrl {

namespace {

const char* kSpecialTokens[kNumSpecials] = {"<pad>", "<bos>", "<eos>", "<unk>"};

Vocabulary with_specials() {
  Vocabulary v;
  for (int32_t i = 0; i < kNumSpecials; ++i) {
    v.tokens.emplace_back(kSpecialTokens[i]);
    v.index.emplace(kSpecialTokens[i], i);
    v.counts.push_back(0);
  }
  return v;
}

std::vector<int32_t> to_ids(const std::string& line, const Vocabulary& vocab) {
  std::vector<int32_t> ids;
  for (const std::string& tok : split_tokens(line)) ids.push_back(vocab.id(tok));
  return ids;
}

}  // namespace

std::vector<std::string> split_tokens(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

Vocabulary build_vocab(const std::vector<std::string>& lines, int64_t min_count) {
  if (lines.empty()) throw DataError("build_vocab: empty corpus");
  std::unordered_map<std::string, int64_t> counts;
  std::unordered_map<std::string, int64_t> first_seen;
  int64_t pos = 0;
  for (const std::string& line : lines)
    for (const std::string& tok : split_tokens(line)) {
      if (counts.emplace(tok, 0).second) first_seen[tok] = pos;
      ++counts[tok];
      ++pos;
    }
  std::vector<std::string> kept;
  for (const auto& [tok, c] : counts)
    if (c >= min_count) kept.push_back(tok);
  std::sort(kept.begin(), kept.end(), [&](const std::string& a, const std::string& b) {
    if (counts[a] != counts[b]) return counts[a] > counts[b];
    return first_seen[a] < first_seen[b];
  });
  Vocabulary v = with_specials();
  v.min_count = min_count;
  for (const std::string& tok : kept) {
    v.index.emplace(tok, static_cast<int32_t>(v.tokens.size()));
    v.tokens.push_back(tok);
    v.counts.push_back(counts[tok]);
  }
  return v;
}

Vocabulary build_vocab_file(const std::string& path, int64_t min_count) {
  return build_vocab(read_lines(path), min_count);
}

void save_vocab(const Vocabulary& v, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (int64_t i = kNumSpecials; i < v.size(); ++i)
    out << v.tokens[static_cast<std::size_t>(i)] << '\t' << v.counts[static_cast<std::size_t>(i)]
        << '\n';
}

Vocabulary load_vocab(const std::string& path) {
  Vocabulary v = with_specials();
  for (const std::string& line : read_lines(path)) {
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError("vocab line missing tab: " + line);
    std::string tok = line.substr(0, tab);
    int64_t count = std::stoll(line.substr(tab + 1));
    v.index.emplace(tok, static_cast<int32_t>(v.tokens.size()));
    v.tokens.push_back(tok);
    v.counts.push_back(count);
  }
  return v;
}

LoadResult load_parallel(const std::string& src_path, const std::string& tgt_path,
                         const Vocabulary& src_vocab, const Vocabulary& tgt_vocab,
                         int64_t max_len) {
  std::vector<std::string> src_lines = read_lines(src_path);
  std::vector<std::string> tgt_lines = read_lines(tgt_path);
  if (src_lines.size() != tgt_lines.size())
    throw DataError("line count mismatch: " + src_path + " vs " + tgt_path);
  return load_parallel_lines(src_lines, tgt_lines, src_vocab, tgt_vocab, max_len);
}

LoadResult load_parallel_lines(const std::vector<std::string>& src_lines,
                               const std::vector<std::string>& tgt_lines,
                               const Vocabulary& src_vocab, const Vocabulary& tgt_vocab,
                               int64_t max_len) {
  if (src_lines.size() != tgt_lines.size()) throw DataError("parallel line count mismatch");
  LoadResult res;
  for (std::size_t i = 0; i < src_lines.size(); ++i) {
    Example ex;
    ex.src = to_ids(src_lines[i], src_vocab);
    ex.tgt = to_ids(tgt_lines[i], tgt_vocab);
    ex.tgt.push_back(kEos);
    if (static_cast<int64_t>(ex.tgt.size()) > max_len) {
      ++res.dropped;
      continue;
    }
    ex.id = static_cast<int64_t>(res.examples.size());
    res.examples.push_back(std::move(ex));
  }
  return res;
}

LoadResult load_features(const std::string& feat_path, const std::string& tgt_path,
                         const Vocabulary& tgt_vocab, int64_t max_len) {
  std::vector<std::string> feat_lines = read_lines(feat_path);
  std::vector<std::string> tgt_lines = read_lines(tgt_path);
  if (feat_lines.size() != tgt_lines.size())
    throw DataError("line count mismatch: " + feat_path + " vs " + tgt_path);
  LoadResult res;
  std::size_t width = 0;
  for (std::size_t i = 0; i < feat_lines.size(); ++i) {
    Example ex;
    std::istringstream is(feat_lines[i]);
    double v;
    while (is >> v) ex.features.push_back(v);
    if (i == 0)
      width = ex.features.size();
    else if (ex.features.size() != width)
      throw DataError("feature row width mismatch at line " + std::to_string(i + 1));
    ex.tgt = to_ids(tgt_lines[i], tgt_vocab);
    ex.tgt.push_back(kEos);
    if (static_cast<int64_t>(ex.tgt.size()) > max_len) {
      ++res.dropped;
      continue;
    }
    ex.id = static_cast<int64_t>(res.examples.size());
    res.examples.push_back(std::move(ex));
  }
  return res;
}

void save_features(const std::vector<std::vector<double>>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out.precision(9);
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ' ';
      out << row[i];
    }
    out << '\n';
  }
}

SyntheticData make_synthetic_task(const SyntheticSpec& spec) {
  if (spec.src_types < 1 || spec.tgt_types < spec.src_types || spec.min_len < 1 ||
      spec.max_len < spec.min_len || spec.train_size < 1)
    throw ConfigError("make_synthetic_task: invalid spec");
  Rng rng(mix_seed(spec.seed, 0x5e71c));

  // Zipf CDF over source content types.
  std::vector<double> cdf(static_cast<std::size_t>(spec.src_types));
  double z = 0;
  for (int64_t r = 0; r < spec.src_types; ++r) {
    z += 1.0 / std::pow(static_cast<double>(r + 1), spec.zipf_exponent);
    cdf[static_cast<std::size_t>(r)] = z;
  }
  for (double& c : cdf) c /= z;

  auto sample_type = [&]() {
    double u = rng.uniform01();
    return static_cast<int64_t>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
  };

  // Bijective substitution map from source types into target types.
  std::vector<int64_t> subst(static_cast<std::size_t>(spec.tgt_types));
  for (int64_t i = 0; i < spec.tgt_types; ++i) subst[static_cast<std::size_t>(i)] = i;
  for (int64_t i = spec.tgt_types - 1; i > 0; --i)
    std::swap(subst[static_cast<std::size_t>(i)],
              subst[static_cast<std::size_t>(rng.uniform_int(0, i))]);

  std::unordered_set<std::string> seen;
  auto gen_pair = [&](std::vector<std::string>& src_out, std::vector<std::string>& tgt_out,
                      bool must_be_new) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      int64_t len = rng.uniform_int(spec.min_len, spec.max_len);
      std::vector<int64_t> types(static_cast<std::size_t>(len));
      for (int64_t& t : types) t = sample_type();
      std::string src;
      for (std::size_t i = 0; i < types.size(); ++i) {
        if (i) src += ' ';
        src += "s" + std::to_string(types[i]);
      }
      if (must_be_new && seen.count(src)) continue;
      seen.insert(src);
      std::string tgt;
      for (std::size_t i = types.size(); i-- > 0;) {
        if (tgt.size()) tgt += ' ';
        tgt += "t" + std::to_string(subst[static_cast<std::size_t>(types[i])]);
      }
      src_out.push_back(std::move(src));
      tgt_out.push_back(std::move(tgt));
      return;
    }
    throw DataError("make_synthetic_task: could not generate a fresh sentence");
  };

  SyntheticData data;
  for (int64_t i = 0; i < spec.train_size; ++i) gen_pair(data.train_src, data.train_tgt, false);
  // train sources are registered in `seen`, so dev/test stay disjoint from train
  for (int64_t i = 0; i < spec.dev_size; ++i) gen_pair(data.dev_src, data.dev_tgt, true);
  for (int64_t i = 0; i < spec.test_size; ++i) gen_pair(data.test_src, data.test_tgt, true);
  return data;
}

std::vector<Batch> batch_iter(const std::vector<Example>& examples, int64_t batch_size,
                              uint64_t shuffle_seed) {
  if (batch_size < 1) throw ConfigError("batch_iter: batch size must be >= 1");
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(shuffle_seed);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(
                                rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    Batch b;
    std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    for (std::size_t i = start; i < end; ++i) b.examples.push_back(examples[order[i]]);
    std::stable_sort(b.examples.begin(), b.examples.end(),
                     [](const Example& a, const Example& c) { return a.src_len() > c.src_len(); });
    batches.push_back(std::move(b));
  }
  return batches;
}

std::vector<Batch> split_batch(const Batch& batch, int64_t s) {
  int64_t n = static_cast<int64_t>(batch.examples.size());
  if (s < 1 || s > n) throw ConfigError("split_batch: need 1 <= S <= batch size");
  std::vector<Batch> parts;
  int64_t base = n / s;
  int64_t extra = n % s;
  std::size_t pos = 0;
  for (int64_t i = 0; i < s; ++i) {
    int64_t take = base + (i < extra ? 1 : 0);
    Batch b;
    b.split_factor = batch.split_factor;
    for (int64_t j = 0; j < take; ++j) b.examples.push_back(batch.examples[pos++]);
    parts.push_back(std::move(b));
  }
  return parts;
}

}  // namespace seqrl
