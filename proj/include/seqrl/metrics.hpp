#pragma once

#include <cstdint>
#include <vector>

#include "seqrl/alloc.hpp"
#include "seqrl/corpus.hpp"

namespace seqrl {

// Sentence-level reward: clipped n-gram matches pooled over orders 1..4;
// score = min(pooled precision, pooled recall). Range [0, 1].
double gleu(const std::vector<int32_t>& hyp, const std::vector<int32_t>& ref);

// Corpus BLEU-4 with clipped counts, geometric mean, brevity penalty, no
// smoothing. Reported x100.
double corpus_bleu(const std::vector<std::vector<int32_t>>& hyps,
                   const std::vector<std::vector<int32_t>>& refs);

// Fraction of output tokens falling into each of 10 equal-size vocabulary
// bins ranked by training frequency (ties by id). bins[0] is the most
// frequent decile.
std::vector<double> percentile_histogram(const std::vector<std::vector<int32_t>>& outputs,
                                         const Vocabulary& vocab);

}  // namespace seqrl
