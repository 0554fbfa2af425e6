#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "seqrl/common.hpp"

namespace seqrl {

// Special symbols occupy the first ids of every vocabulary.
inline constexpr int32_t kPad = 0;
inline constexpr int32_t kBos = 1;
inline constexpr int32_t kEos = 2;
inline constexpr int32_t kUnk = 3;
inline constexpr int32_t kNumSpecials = 4;

struct Vocabulary {
  std::vector<std::string> tokens;  // id -> token, specials first
  std::unordered_map<std::string, int32_t> index;
  std::vector<int64_t> counts;  // id -> training frequency (0 for specials)
  int64_t min_count = 1;

  int64_t size() const { return static_cast<int64_t>(tokens.size()); }

  int32_t id(const std::string& tok) const {
    auto it = index.find(tok);
    return it == index.end() ? kUnk : it->second;
  }

  const std::string& token(int32_t id) const { return tokens.at(static_cast<std::size_t>(id)); }
};

struct Example {
  int64_t id = 0;
  std::vector<int32_t> src;      // token ids (text path); empty on the feature path
  std::vector<double> features;  // dense source (feature path); empty on the text path
  std::vector<int32_t> tgt;      // token ids, EOS-terminated

  int64_t src_len() const {
    return src.empty() ? static_cast<int64_t>(features.size()) : static_cast<int64_t>(src.size());
  }
};

// Examples are kept sorted by source length (descending) so a contiguous
// split groups similar lengths; per-example processing needs no padding.
struct Batch {
  std::vector<Example> examples;
  int split_factor = 1;

  std::size_t size() const { return examples.size(); }
};

Vocabulary build_vocab(const std::vector<std::string>& lines, int64_t min_count);
Vocabulary build_vocab_file(const std::string& path, int64_t min_count);

void save_vocab(const Vocabulary& v, const std::string& path);
Vocabulary load_vocab(const std::string& path);

std::vector<std::string> read_lines(const std::string& path);
std::vector<std::string> split_tokens(const std::string& line);

struct LoadResult {
  std::vector<Example> examples;
  int64_t dropped = 0;  // targets longer than max_N (EOS included)
};

LoadResult load_parallel(const std::string& src_path, const std::string& tgt_path,
                         const Vocabulary& src_vocab, const Vocabulary& tgt_vocab,
                         int64_t max_len);

LoadResult load_parallel_lines(const std::vector<std::string>& src_lines,
                               const std::vector<std::string>& tgt_lines,
                               const Vocabulary& src_vocab, const Vocabulary& tgt_vocab,
                               int64_t max_len);

LoadResult load_features(const std::string& feat_path, const std::string& tgt_path,
                         const Vocabulary& tgt_vocab, int64_t max_len);

void save_features(const std::vector<std::vector<double>>& rows, const std::string& path);

struct SyntheticSpec {
  int64_t src_types = 200;  // content types, excluding specials
  int64_t tgt_types = 200;
  int64_t min_len = 4;
  int64_t max_len = 12;
  int64_t train_size = 5000;
  int64_t dev_size = 500;
  int64_t test_size = 500;
  double zipf_exponent = 1.1;
  uint64_t seed = 1;
};

struct SyntheticData {
  std::vector<std::string> train_src, train_tgt;
  std::vector<std::string> dev_src, dev_tgt;
  std::vector<std::string> test_src, test_tgt;
};

// Reversal with a bijective type substitution and Zipf-distributed tokens.
// Deterministic for a fixed spec; dev/test sources are disjoint from train.
SyntheticData make_synthetic_task(const SyntheticSpec& spec);

// Sentence content without the terminating EOS, for scoring.
inline std::vector<int32_t> without_trailing_eos(std::vector<int32_t> seq) {
  if (!seq.empty() && seq.back() == kEos) seq.pop_back();
  return seq;
}

// One epoch of batches: shuffled by the seed, every example exactly once,
// each batch sorted by source length descending.
std::vector<Batch> batch_iter(const std::vector<Example>& examples, int64_t batch_size,
                              uint64_t shuffle_seed);

// Contiguous split into S sub-batches whose sizes differ by at most one.
std::vector<Batch> split_batch(const Batch& batch, int64_t s);

}  // namespace seqrl
