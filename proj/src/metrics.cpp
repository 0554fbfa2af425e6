#include "seqrl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace seqrl {

namespace {

using Gram = std::vector<int32_t>;

std::map<Gram, int64_t> ngram_counts(const std::vector<int32_t>& sent, int n) {
  std::map<Gram, int64_t> counts;
  if (static_cast<int>(sent.size()) >= n)
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= sent.size(); ++i)
      ++counts[Gram(sent.begin() + static_cast<std::ptrdiff_t>(i),
                    sent.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  return counts;
}

int64_t clipped_matches(const std::map<Gram, int64_t>& hyp, const std::map<Gram, int64_t>& ref) {
  int64_t matches = 0;
  for (const auto& [gram, count] : hyp) {
    auto it = ref.find(gram);
    if (it != ref.end()) matches += std::min(count, it->second);
  }
  return matches;
}

}  // namespace

double gleu(const std::vector<int32_t>& hyp, const std::vector<int32_t>& ref) {
  int64_t matches = 0, hyp_total = 0, ref_total = 0;
  for (int n = 1; n <= 4; ++n) {
    matches += clipped_matches(ngram_counts(hyp, n), ngram_counts(ref, n));
    hyp_total += std::max<int64_t>(0, static_cast<int64_t>(hyp.size()) - n + 1);
    ref_total += std::max<int64_t>(0, static_cast<int64_t>(ref.size()) - n + 1);
  }
  if (hyp_total == 0 || ref_total == 0) return 0.0;
  double precision = static_cast<double>(matches) / static_cast<double>(hyp_total);
  double recall = static_cast<double>(matches) / static_cast<double>(ref_total);
  return std::min(precision, recall);
}

double corpus_bleu(const std::vector<std::vector<int32_t>>& hyps,
                   const std::vector<std::vector<int32_t>>& refs) {
  if (hyps.size() != refs.size()) throw DataError("corpus_bleu: list length mismatch");
  int64_t matches[4] = {0, 0, 0, 0};
  int64_t totals[4] = {0, 0, 0, 0};
  int64_t hyp_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    hyp_len += static_cast<int64_t>(hyps[i].size());
    ref_len += static_cast<int64_t>(refs[i].size());
    for (int n = 1; n <= 4; ++n) {
      matches[n - 1] += clipped_matches(ngram_counts(hyps[i], n), ngram_counts(refs[i], n));
      totals[n - 1] += std::max<int64_t>(0, static_cast<int64_t>(hyps[i].size()) - n + 1);
    }
  }
  double log_mean = 0;
  for (int n = 0; n < 4; ++n) {
    if (matches[n] == 0 || totals[n] == 0) return 0.0;
    log_mean += std::log(static_cast<double>(matches[n]) / static_cast<double>(totals[n])) / 4.0;
  }
  double bp = hyp_len >= ref_len
                  ? 1.0
                  : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return 100.0 * bp * std::exp(log_mean);
}

std::vector<double> percentile_histogram(const std::vector<std::vector<int32_t>>& outputs,
                                         const Vocabulary& vocab) {
  int64_t v = vocab.size();
  std::vector<int32_t> ranked(static_cast<std::size_t>(v));
  for (int64_t i = 0; i < v; ++i) ranked[static_cast<std::size_t>(i)] = static_cast<int32_t>(i);
  std::sort(ranked.begin(), ranked.end(), [&](int32_t a, int32_t b) {
    int64_t ca = vocab.counts[static_cast<std::size_t>(a)];
    int64_t cb = vocab.counts[static_cast<std::size_t>(b)];
    if (ca != cb) return ca > cb;
    return a < b;
  });
  std::vector<int> bin_of(static_cast<std::size_t>(v));
  for (int64_t r = 0; r < v; ++r) {
    int bin = static_cast<int>(r * 10 / v);
    bin_of[static_cast<std::size_t>(ranked[static_cast<std::size_t>(r)])] = bin;
  }
  std::vector<double> fractions(10, 0.0);
  int64_t total = 0;
  for (const auto& sent : outputs)
    for (int32_t id : sent) {
      if (id < 0 || id >= v) continue;
      ++fractions[static_cast<std::size_t>(bin_of[static_cast<std::size_t>(id)])];
      ++total;
    }
  if (total > 0)
    for (double& f : fractions) f /= static_cast<double>(total);
  return fractions;
}

}  // namespace seqrl
