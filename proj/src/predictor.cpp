#include "seqrl/predictor.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

namespace seqrl {

namespace {

VocabMask finish(std::vector<int32_t> ids) {
  std::sort(ids.begin(), ids.end());
  VocabMask m;
  m.selected = std::move(ids);
  m.local_of_global.reserve(m.selected.size());
  for (std::size_t i = 0; i < m.selected.size(); ++i)
    m.local_of_global.emplace(m.selected[i], static_cast<int32_t>(i));
  return m;
}

}  // namespace

VocabMask VocabMask::from_ids(std::vector<int32_t> ids, int64_t vocab_size) {
  for (int32_t id : ids)
    if (id < 0 || id >= vocab_size) throw DataError("VocabMask: id out of range");
  VocabMask m = finish(std::move(ids));
  for (std::size_t i = 1; i < m.selected.size(); ++i)
    if (m.selected[i] == m.selected[i - 1]) throw DataError("VocabMask: duplicate id");
  return m;
}

VocabMask top_k(const std::vector<double>& scores, int64_t k) {
  int64_t v = static_cast<int64_t>(scores.size());
  if (k <= 0) throw ConfigError("top_k: K must be positive");
  if (k > v) throw ConfigError("top_k: K exceeds the vocabulary size");
  std::vector<int32_t> ids(static_cast<std::size_t>(v));
  std::iota(ids.begin(), ids.end(), 0);
  auto better = [&](int32_t a, int32_t b) {
    double sa = scores[static_cast<std::size_t>(a)], sb = scores[static_cast<std::size_t>(b)];
    return sa != sb ? sa > sb : a < b;
  };
  std::nth_element(ids.begin(), ids.begin() + (k - 1), ids.end(), better);
  ids.resize(static_cast<std::size_t>(k));
  return finish(std::move(ids));
}

VocabMask build_mask(const std::vector<double>& scores, int64_t k,
                     const std::vector<int32_t>* gold, bool train_mode) {
  int64_t v = static_cast<int64_t>(scores.size());
  if (k <= 0) throw ConfigError("build_mask: K must be positive");
  if (k > v) throw ConfigError("build_mask: K exceeds the vocabulary size");
  if (train_mode && !gold) throw ConfigError("build_mask: train mode requires gold ids");

  std::vector<uint8_t> forced(static_cast<std::size_t>(v), 0);
  std::vector<int32_t> picked;
  for (int32_t s = 0; s < kNumSpecials; ++s) {
    forced[static_cast<std::size_t>(s)] = 1;
    picked.push_back(s);
  }
  if (train_mode) {
    for (int32_t id : *gold) {
      if (id < 0 || id >= v) throw DataError("build_mask: gold id out of range");
      if (!forced[static_cast<std::size_t>(id)]) {
        forced[static_cast<std::size_t>(id)] = 1;
        picked.push_back(id);
      }
    }
  }
  if (static_cast<int64_t>(picked.size()) > k)
    throw DataError("build_mask: gold ids and specials exceed K");

  int64_t fill = k - static_cast<int64_t>(picked.size());
  if (fill > 0) {
    std::vector<int32_t> rest;
    rest.reserve(static_cast<std::size_t>(v));
    for (int32_t id = 0; id < v; ++id)
      if (!forced[static_cast<std::size_t>(id)]) rest.push_back(id);
    auto better = [&](int32_t a, int32_t b) {
      double sa = scores[static_cast<std::size_t>(a)], sb = scores[static_cast<std::size_t>(b)];
      return sa != sb ? sa > sb : a < b;
    };
    std::nth_element(rest.begin(), rest.begin() + (fill - 1), rest.end(), better);
    picked.insert(picked.end(), rest.begin(), rest.begin() + fill);
  }
  return finish(std::move(picked));
}

std::vector<double> vocab_prior(const std::vector<Example>& train, int64_t vocab_size) {
  if (train.empty()) throw DataError("vocab_prior: empty training set");
  std::vector<double> p(static_cast<std::size_t>(vocab_size), 0.0);
  std::vector<int64_t> last_seen(static_cast<std::size_t>(vocab_size), -1);
  for (std::size_t n = 0; n < train.size(); ++n) {
    for (int32_t id : train[n].tgt) {
      if (id < 0 || id >= vocab_size) throw DataError("vocab_prior: target id out of range");
      if (last_seen[static_cast<std::size_t>(id)] != static_cast<int64_t>(n)) {
        last_seen[static_cast<std::size_t>(id)] = static_cast<int64_t>(n);
        p[static_cast<std::size_t>(id)] += 1.0;
      }
    }
  }
  for (double& x : p) x /= static_cast<double>(train.size());
  return p;
}

void save_mask_cache(const std::string& path,
                     const std::vector<std::pair<int64_t, std::vector<int32_t>>>& masks) {
  std::ofstream out(path);
  if (!out) throw DataError("save_mask_cache: cannot open " + path);
  for (const auto& [id, ids] : masks) {
    out << id << '\t';
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) out << ',';
      out << ids[i];
    }
    out << '\n';
  }
}

std::unordered_map<int64_t, std::vector<int32_t>> load_mask_cache(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("load_mask_cache: cannot open " + path);
  std::unordered_map<int64_t, std::vector<int32_t>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t tab = line.find('\t');
    if (tab == std::string::npos) throw DataError("load_mask_cache: malformed line");
    int64_t id = std::stoll(line.substr(0, tab));
    std::vector<int32_t> ids;
    std::stringstream ss(line.substr(tab + 1));
    std::string tok;
    while (std::getline(ss, tok, ',')) ids.push_back(static_cast<int32_t>(std::stol(tok)));
    if (!out.emplace(id, std::move(ids)).second)
      throw DataError("load_mask_cache: duplicate example id");
  }
  return out;
}

}  // namespace seqrl
