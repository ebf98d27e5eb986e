// Word alignment: IBM Model 1 EM training with a null word, per-word Viterbi
// alignment in both directions, and intersection/union/grow-diag-final
// symmetrization.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtlab/common.hpp"
#include "mtlab/corpus.hpp"

namespace mtlab::align {

using corpus::ParallelCorpus;
using corpus::SentencePair;

// t(f | e): source word given target word, target side extended with a null
// word. Stored sparsely over co-occurring pairs.
struct TranslationTable {
  std::unordered_map<std::string, uint32_t> src_index;
  std::unordered_map<std::string, uint32_t> tgt_index;
  std::vector<std::string> src_tokens;
  std::vector<std::string> tgt_tokens;
  static constexpr uint32_t kNull = 0xFFFFFFFFu;

  std::unordered_map<uint64_t, double> t;      // key = e << 32 | f
  std::vector<double> log_likelihood;          // per EM iteration, before update

  static uint64_t key(uint32_t e, uint32_t f) { return (uint64_t(e) << 32) | f; }

  double prob_ids(uint32_t e, uint32_t f) const {
    auto it = t.find(key(e, f));
    return it == t.end() ? 0.0 : it->second;
  }

  // t(f | e) by surface form; e empty means the null word.
  double prob(const std::string& f, const std::string& e) const {
    auto fit = src_index.find(f);
    if (fit == src_index.end()) return 0.0;
    if (e.empty()) return prob_ids(kNull, fit->second);
    auto eit = tgt_index.find(e);
    if (eit == tgt_index.end()) return 0.0;
    return prob_ids(eit->second, fit->second);
  }

  uint32_t src_id(const std::string& f) const {
    auto it = src_index.find(f);
    return it == src_index.end() ? kNull : it->second;
  }
  uint32_t tgt_id(const std::string& e) const {
    auto it = tgt_index.find(e);
    return it == tgt_index.end() ? kNull : it->second;
  }
};

inline TranslationTable train_ibm1(const ParallelCorpus& corpus, int iterations) {
  if (corpus.pairs.empty()) fail("train_ibm1: empty corpus");
  if (iterations < 1) fail("train_ibm1: iterations must be >= 1");

  TranslationTable table;
  auto intern = [](std::unordered_map<std::string, uint32_t>& index,
                   std::vector<std::string>& tokens, const std::string& tok) {
    auto it = index.find(tok);
    if (it != index.end()) return it->second;
    uint32_t id = uint32_t(tokens.size());
    index.emplace(tok, id);
    tokens.push_back(tok);
    return id;
  };

  // Sentences as ids; uniform initialization over co-occurring pairs.
  std::vector<std::vector<uint32_t>> src_ids(corpus.pairs.size());
  std::vector<std::vector<uint32_t>> tgt_ids(corpus.pairs.size());
  for (size_t s = 0; s < corpus.pairs.size(); ++s) {
    const auto& p = corpus.pairs[s];
    for (const auto& tok : p.source)
      src_ids[s].push_back(intern(table.src_index, table.src_tokens, tok));
    for (const auto& tok : p.target)
      tgt_ids[s].push_back(intern(table.tgt_index, table.tgt_tokens, tok));
  }
  double uniform = 1.0 / double(std::max<size_t>(table.src_tokens.size(), 1));
  for (size_t s = 0; s < corpus.pairs.size(); ++s) {
    for (uint32_t f : src_ids[s]) {
      table.t[TranslationTable::key(TranslationTable::kNull, f)] = uniform;
      for (uint32_t e : tgt_ids[s]) table.t[TranslationTable::key(e, f)] = uniform;
    }
  }

  std::unordered_map<uint64_t, double> counts;
  std::unordered_map<uint32_t, double> totals;  // per e (null included as kNull)
  for (int iter = 0; iter < iterations; ++iter) {
    counts.clear();
    totals.clear();
    double ll = 0.0;
    for (size_t s = 0; s < corpus.pairs.size(); ++s) {
      const auto& src = src_ids[s];
      const auto& tgt = tgt_ids[s];
      if (src.empty() || tgt.empty()) continue;
      double prior = 1.0 / double(tgt.size() + 1);
      for (uint32_t f : src) {
        double denom = table.t[TranslationTable::key(TranslationTable::kNull, f)];
        for (uint32_t e : tgt) denom += table.t[TranslationTable::key(e, f)];
        ll += std::log(denom * prior);
        double share = table.t[TranslationTable::key(TranslationTable::kNull, f)] / denom;
        counts[TranslationTable::key(TranslationTable::kNull, f)] += share;
        totals[TranslationTable::kNull] += share;
        for (uint32_t e : tgt) {
          share = table.t[TranslationTable::key(e, f)] / denom;
          counts[TranslationTable::key(e, f)] += share;
          totals[e] += share;
        }
      }
    }
    table.log_likelihood.push_back(ll);
    for (auto& [k, v] : table.t) {
      uint32_t e = uint32_t(k >> 32);
      auto cit = counts.find(k);
      double c = cit == counts.end() ? 0.0 : cit->second;
      double tot = totals[e];
      v = tot > 0.0 ? c / tot : 0.0;
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// Alignments

struct AlignmentMatrix {
  int src_len = 0;
  int tgt_len = 0;
  std::set<std::pair<int, int>> points;  // (source index, target index)

  bool has(int i, int j) const { return points.count({i, j}) > 0; }
};

enum class Direction { kForward, kReverse };

// Forward: each source word links to its argmax target word under the given
// table (trained source-given-target); null beats a position only strictly,
// ties between positions go to the lowest target index. Reverse swaps roles
// and expects a table trained on the swapped corpus.
inline AlignmentMatrix viterbi_align(const TranslationTable& table,
                                     const SentencePair& pair, Direction dir) {
  AlignmentMatrix a;
  a.src_len = int(pair.source.size());
  a.tgt_len = int(pair.target.size());
  const auto& query = dir == Direction::kForward ? pair.source : pair.target;
  const auto& against = dir == Direction::kForward ? pair.target : pair.source;
  for (size_t q = 0; q < query.size(); ++q) {
    double best = -1.0;
    int best_pos = -1;
    for (size_t o = 0; o < against.size(); ++o) {
      double p = table.prob(query[q], against[o]);
      if (p > best) {
        best = p;
        best_pos = int(o);
      }
    }
    double null_p = table.prob(query[q], "");
    if (best_pos < 0 || null_p > best) continue;  // null wins: no point
    if (dir == Direction::kForward)
      a.points.insert({int(q), best_pos});
    else
      a.points.insert({best_pos, int(q)});
  }
  return a;
}

inline void check_dims(const AlignmentMatrix& a, const AlignmentMatrix& b) {
  if (a.src_len != b.src_len || a.tgt_len != b.tgt_len)
    fail("alignment dimension mismatch: ", a.src_len, "x", a.tgt_len, " vs ",
         b.src_len, "x", b.tgt_len);
}

inline AlignmentMatrix intersect(const AlignmentMatrix& a, const AlignmentMatrix& b) {
  check_dims(a, b);
  AlignmentMatrix r;
  r.src_len = a.src_len;
  r.tgt_len = a.tgt_len;
  for (const auto& p : a.points)
    if (b.points.count(p)) r.points.insert(p);
  return r;
}

inline AlignmentMatrix align_union(const AlignmentMatrix& a, const AlignmentMatrix& b) {
  check_dims(a, b);
  AlignmentMatrix r;
  r.src_len = a.src_len;
  r.tgt_len = a.tgt_len;
  r.points = a.points;
  r.points.insert(b.points.begin(), b.points.end());
  return r;
}

// Start from the intersection, grow with 8-neighborhood-adjacent union points
// whose source or target word is still unaligned (scanning union-only points
// in ascending (target, source) order until a pass adds nothing), then one
// final pass adding leftover union points covering an unaligned word.
inline AlignmentMatrix grow_diag_final(const AlignmentMatrix& fwd,
                                       const AlignmentMatrix& rev) {
  check_dims(fwd, rev);
  AlignmentMatrix result = intersect(fwd, rev);
  AlignmentMatrix uni = align_union(fwd, rev);

  std::vector<std::pair<int, int>> candidates;  // (target, source), scan order
  for (const auto& [i, j] : uni.points)
    if (!result.has(i, j)) candidates.push_back({j, i});
  std::sort(candidates.begin(), candidates.end());

  std::vector<char> src_aligned(size_t(std::max(uni.src_len, 1)), 0);
  std::vector<char> tgt_aligned(size_t(std::max(uni.tgt_len, 1)), 0);
  for (const auto& [i, j] : result.points) {
    src_aligned[i] = 1;
    tgt_aligned[j] = 1;
  }

  bool grew = true;
  while (grew) {
    grew = false;
    for (auto& [j, i] : candidates) {
      if (i < 0 || result.has(i, j)) continue;
      if (src_aligned[i] && tgt_aligned[j]) continue;
      bool adjacent = false;
      for (int di = -1; di <= 1 && !adjacent; ++di)
        for (int dj = -1; dj <= 1 && !adjacent; ++dj) {
          if (di == 0 && dj == 0) continue;
          if (result.has(i + di, j + dj)) adjacent = true;
        }
      if (!adjacent) continue;
      result.points.insert({i, j});
      src_aligned[i] = 1;
      tgt_aligned[j] = 1;
      grew = true;
    }
  }

  // FINAL: leftover union points with a still-unaligned source or target word.
  for (auto& [j, i] : candidates) {
    if (result.has(i, j)) continue;
    if (src_aligned[i] && tgt_aligned[j]) continue;
    result.points.insert({i, j});
    src_aligned[i] = 1;
    tgt_aligned[j] = 1;
  }
  return result;
}

// Text t-table: one "f<TAB>e<TAB>prob" line per entry, e = "NULL" for the
// null word, sorted for reproducible files.
inline void save_ttable(const TranslationTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write ", path);
  std::vector<std::pair<std::pair<std::string, std::string>, double>> rows;
  for (const auto& [key, prob] : table.t) {
    uint32_t e = uint32_t(key >> 32);
    uint32_t f = uint32_t(key & 0xFFFFFFFFu);
    rows.push_back({{table.src_tokens[f],
                     e == TranslationTable::kNull ? "NULL" : table.tgt_tokens[e]},
                    prob});
  }
  std::sort(rows.begin(), rows.end());
  char buf[32];
  for (const auto& [pair, prob] : rows) {
    std::snprintf(buf, sizeof(buf), "%.12g", prob);
    out << pair.first << '\t' << pair.second << '\t' << buf << '\n';
  }
}

inline TranslationTable load_ttable(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open ", path);
  TranslationTable table;
  auto intern = [](std::unordered_map<std::string, uint32_t>& index,
                   std::vector<std::string>& tokens, const std::string& tok) {
    auto it = index.find(tok);
    if (it != index.end()) return it->second;
    uint32_t id = uint32_t(tokens.size());
    index.emplace(tok, id);
    tokens.push_back(tok);
    return id;
  };
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tab1 = line.find('\t');
    auto tab2 = tab1 == std::string::npos ? std::string::npos : line.find('\t', tab1 + 1);
    if (tab2 == std::string::npos) fail(path, ":", lineno, ": expected 3 tab fields");
    std::string f = line.substr(0, tab1);
    std::string e = line.substr(tab1 + 1, tab2 - tab1 - 1);
    double prob = std::stod(line.substr(tab2 + 1));
    uint32_t fid = intern(table.src_index, table.src_tokens, f);
    uint32_t eid = e == "NULL" ? TranslationTable::kNull
                               : intern(table.tgt_index, table.tgt_tokens, e);
    table.t[TranslationTable::key(eid, fid)] = prob;
  }
  return table;
}

// "i-j" pairs, space separated, ascending.
inline std::string format_alignment(const AlignmentMatrix& a) {
  std::string out;
  for (const auto& [i, j] : a.points) {
    if (!out.empty()) out += ' ';
    out += msg(i, "-", j);
  }
  return out;
}

inline AlignmentMatrix parse_alignment(const std::string& line, int src_len, int tgt_len) {
  AlignmentMatrix a;
  a.src_len = src_len;
  a.tgt_len = tgt_len;
  for (const auto& tok : split_ws(line)) {
    auto dash = tok.find('-');
    if (dash == std::string::npos) fail("bad alignment token: ", tok);
    int i = std::stoi(tok.substr(0, dash));
    int j = std::stoi(tok.substr(dash + 1));
    if (i < 0 || i >= src_len || j < 0 || j >= tgt_len)
      fail("alignment point ", tok, " out of bounds for ", src_len, "x", tgt_len);
    a.points.insert({i, j});
  }
  return a;
}

}  // namespace mtlab::align
