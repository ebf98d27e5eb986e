// Phrase pair extraction under the alignment-consistency criterion, phrase
// table scoring (relative frequencies + lexical weights), and the
// msd-bidirectional lexicalized reordering model.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtlab/align.hpp"
#include "mtlab/common.hpp"
#include "mtlab/corpus.hpp"

namespace mtlab::align {

struct PhrasePair {
  int s_begin = 0, s_end = 0;  // inclusive source span
  int t_begin = 0, t_end = 0;  // inclusive target span
  std::vector<std::string> source;
  std::vector<std::string> target;
};

// All consistent phrase pairs up to max_len tokens per side: no alignment
// point may link a word inside the pair to one outside, the target span must
// contain at least one point, and unaligned boundary words extend pairs.
inline std::vector<PhrasePair> extract_phrases(const SentencePair& pair,
                                               const AlignmentMatrix& alignment,
                                               int max_len = 7) {
  int n = int(pair.source.size());
  int m = int(pair.target.size());
  if (alignment.src_len != n || alignment.tgt_len != m)
    fail("extract_phrases: alignment is ", alignment.src_len, "x",
         alignment.tgt_len, " but sentence is ", n, "x", m);

  std::vector<char> tgt_aligned(size_t(std::max(m, 1)), 0);
  for (const auto& [i, j] : alignment.points) tgt_aligned[j] = 1;

  std::vector<PhrasePair> out;
  for (int i1 = 0; i1 < n; ++i1) {
    for (int i2 = i1; i2 < std::min(n, i1 + max_len); ++i2) {
      // Target extent of points inside [i1,i2]; reject spans whose points
      // leak outside.
      int j_min = m, j_max = -1;
      for (const auto& [i, j] : alignment.points) {
        if (i >= i1 && i <= i2) {
          j_min = std::min(j_min, j);
          j_max = std::max(j_max, j);
        }
      }
      if (j_max < 0) continue;  // unanchored source span
      bool consistent = true;
      for (const auto& [i, j] : alignment.points) {
        if (j >= j_min && j <= j_max && (i < i1 || i > i2)) {
          consistent = false;
          break;
        }
      }
      if (!consistent || j_max - j_min + 1 > max_len) continue;
      // Extend over unaligned boundary target words.
      for (int j1 = j_min; j1 >= 0 && (j1 == j_min || !tgt_aligned[j1]); --j1) {
        for (int j2 = j_max; j2 < m && (j2 == j_max || !tgt_aligned[j2]); ++j2) {
          if (j2 - j1 + 1 > max_len) continue;
          PhrasePair pp;
          pp.s_begin = i1;
          pp.s_end = i2;
          pp.t_begin = j1;
          pp.t_end = j2;
          pp.source.assign(pair.source.begin() + i1, pair.source.begin() + i2 + 1);
          pp.target.assign(pair.target.begin() + j1, pair.target.begin() + j2 + 1);
          out.push_back(std::move(pp));
        }
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const PhrasePair& a, const PhrasePair& b) {
    return std::tie(a.s_begin, a.s_end, a.t_begin, a.t_end) <
           std::tie(b.s_begin, b.s_end, b.t_begin, b.t_end);
  });
  return out;
}

// Extraction output for one sentence, kept with its alignment so scoring and
// reordering can see spans and internal points.
struct SentenceExtraction {
  const SentencePair* pair = nullptr;
  AlignmentMatrix alignment;
  std::vector<PhrasePair> phrases;
};

struct PhraseScores {
  double phi_src_given_tgt = 0.0;  // phi(f|e)
  double lex_src_given_tgt = 0.0;  // lex(f|e)
  double phi_tgt_given_src = 0.0;  // phi(e|f)
  double lex_tgt_given_src = 0.0;  // lex(e|f)
};

struct PhraseTable {
  // Ordered keys keep every dump and iteration deterministic.
  std::map<std::string, std::map<std::string, PhraseScores>> entries;  // src -> tgt

  const PhraseScores* find(const std::string& src, const std::string& tgt) const {
    auto sit = entries.find(src);
    if (sit == entries.end()) return nullptr;
    auto tit = sit->second.find(tgt);
    return tit == sit->second.end() ? nullptr : &tit->second;
  }
};

namespace detail {

// Standard averaged lexical weight over the pair's internal alignment;
// unaligned source words use the null column.
inline double lexical_weight(const std::vector<std::string>& src,
                             const std::vector<std::string>& tgt,
                             const std::vector<std::pair<int, int>>& points,
                             const TranslationTable& table) {
  double w = 1.0;
  for (int i = 0; i < int(src.size()); ++i) {
    double sum = 0.0;
    int links = 0;
    for (const auto& [pi, pj] : points) {
      if (pi == i) {
        sum += table.prob(src[i], tgt[pj]);
        ++links;
      }
    }
    w *= links > 0 ? sum / links : table.prob(src[i], "");
  }
  return w;
}

}  // namespace detail

// Relative-frequency phi scores in both directions plus lexical weights from
// the forward and reverse translation tables. When a phrase pair is seen
// with several internal alignments the best lexical weight is kept.
inline PhraseTable score_phrases(const std::vector<SentenceExtraction>& extractions,
                                 const TranslationTable& fwd,
                                 const TranslationTable& rev) {
  struct Tally {
    uint64_t count = 0;
    double lex_fe = 0.0;
    double lex_ef = 0.0;
  };
  std::map<std::string, std::map<std::string, Tally>> tallies;
  std::map<std::string, uint64_t> src_totals;
  std::map<std::string, uint64_t> tgt_totals;
  size_t total_phrases = 0;

  for (const auto& ext : extractions) {
    for (const auto& pp : ext.phrases) {
      ++total_phrases;
      std::string src = join(pp.source);
      std::string tgt = join(pp.target);
      std::vector<std::pair<int, int>> internal;      // source-local -> target-local
      std::vector<std::pair<int, int>> internal_rev;  // target-local -> source-local
      for (const auto& [i, j] : ext.alignment.points) {
        if (i >= pp.s_begin && i <= pp.s_end && j >= pp.t_begin && j <= pp.t_end) {
          internal.push_back({i - pp.s_begin, j - pp.t_begin});
          internal_rev.push_back({j - pp.t_begin, i - pp.s_begin});
        }
      }
      double lex_fe = detail::lexical_weight(pp.source, pp.target, internal, fwd);
      double lex_ef = detail::lexical_weight(pp.target, pp.source, internal_rev, rev);
      auto& tally = tallies[src][tgt];
      ++tally.count;
      tally.lex_fe = std::max(tally.lex_fe, lex_fe);
      tally.lex_ef = std::max(tally.lex_ef, lex_ef);
      ++src_totals[src];
      ++tgt_totals[tgt];
    }
  }
  if (total_phrases == 0) fail("score_phrases: no extracted phrase pairs");

  PhraseTable table;
  for (const auto& [src, row] : tallies) {
    for (const auto& [tgt, tally] : row) {
      PhraseScores s;
      s.phi_tgt_given_src = double(tally.count) / double(src_totals[src]);
      s.phi_src_given_tgt = double(tally.count) / double(tgt_totals[tgt]);
      s.lex_src_given_tgt = tally.lex_fe;
      s.lex_tgt_given_src = tally.lex_ef;
      table.entries[src][tgt] = s;
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// Lexicalized reordering, msd-bidirectional: orientation of each extracted
// phrase with respect to the target-adjacent previous and next phrases.

enum class Orientation { kMonotone = 0, kSwap = 1, kDiscontinuous = 2 };

struct OrientationProbs {
  double prev[3] = {1.0 / 3, 1.0 / 3, 1.0 / 3};  // M, S, D w.r.t. previous phrase
  double next[3] = {1.0 / 3, 1.0 / 3, 1.0 / 3};  // M, S, D w.r.t. next phrase
};

struct ReorderingTable {
  std::map<std::string, std::map<std::string, OrientationProbs>> entries;

  const OrientationProbs* find(const std::string& src, const std::string& tgt) const {
    auto sit = entries.find(src);
    if (sit == entries.end()) return nullptr;
    auto tit = sit->second.find(tgt);
    return tit == sit->second.end() ? nullptr : &tit->second;
  }
};

namespace detail {

// Orientation of a phrase at source span [i1,i2] given an adjacent phrase's
// source span: monotone when the source sides follow each other in order,
// swap when they follow in reverse order, discontinuous otherwise.
inline Orientation classify_prev(int i1, int i2, int prev_s_begin, int prev_s_end) {
  if (prev_s_end + 1 == i1) return Orientation::kMonotone;
  if (i2 + 1 == prev_s_begin) return Orientation::kSwap;
  return Orientation::kDiscontinuous;
}

}  // namespace detail

// Counts each extracted occurrence's orientation against phrases whose target
// span is adjacent (sentence boundaries act as virtual boundary phrases),
// then normalizes with additive smoothing.
inline ReorderingTable train_reordering(const std::vector<SentenceExtraction>& extractions,
                                        double smoothing = 0.5) {
  struct Counts {
    double prev[3] = {0, 0, 0};
    double next[3] = {0, 0, 0};
  };
  std::map<std::string, std::map<std::string, Counts>> counts;

  for (const auto& ext : extractions) {
    int src_len = ext.alignment.src_len;
    int tgt_len = ext.alignment.tgt_len;
    for (const auto& pp : ext.phrases) {
      Orientation prev_o = Orientation::kDiscontinuous;
      if (pp.t_begin == 0) {
        prev_o = detail::classify_prev(pp.s_begin, pp.s_end, -1, -1);
      } else {
        bool monotone = false, swap = false;
        for (const auto& q : ext.phrases) {
          if (q.t_end != pp.t_begin - 1) continue;
          auto o = detail::classify_prev(pp.s_begin, pp.s_end, q.s_begin, q.s_end);
          monotone |= o == Orientation::kMonotone;
          swap |= o == Orientation::kSwap;
        }
        prev_o = monotone ? Orientation::kMonotone
                          : (swap ? Orientation::kSwap : Orientation::kDiscontinuous);
      }

      Orientation next_o = Orientation::kDiscontinuous;
      if (pp.t_end == tgt_len - 1) {
        // Virtual end phrase at (src_len, tgt_len).
        next_o = pp.s_end + 1 == src_len ? Orientation::kMonotone
                                         : Orientation::kDiscontinuous;
      } else {
        bool monotone = false, swap = false;
        for (const auto& q : ext.phrases) {
          if (q.t_begin != pp.t_end + 1) continue;
          if (pp.s_end + 1 == q.s_begin) monotone = true;
          if (q.s_end + 1 == pp.s_begin) swap = true;
        }
        next_o = monotone ? Orientation::kMonotone
                          : (swap ? Orientation::kSwap : Orientation::kDiscontinuous);
      }

      auto& c = counts[join(pp.source)][join(pp.target)];
      c.prev[int(prev_o)] += 1.0;
      c.next[int(next_o)] += 1.0;
    }
  }

  ReorderingTable table;
  for (const auto& [src, row] : counts) {
    for (const auto& [tgt, c] : row) {
      OrientationProbs p;
      double prev_total = c.prev[0] + c.prev[1] + c.prev[2] + 3 * smoothing;
      double next_total = c.next[0] + c.next[1] + c.next[2] + 3 * smoothing;
      for (int k = 0; k < 3; ++k) {
        p.prev[k] = (c.prev[k] + smoothing) / prev_total;
        p.next[k] = (c.next[k] + smoothing) / next_total;
      }
      table.entries[src][tgt] = p;
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// Text formats.
//   phrase table:     src ||| tgt ||| phi(f|e) lex(f|e) phi(e|f) lex(e|f)
//   reordering table: src ||| tgt ||| pM pS pD nM nS nD

namespace detail {

inline std::string fmt_prob(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  size_t pos = 0;
  while (true) {
    size_t sep = line.find(" ||| ", pos);
    if (sep == std::string::npos) {
      fields.push_back(line.substr(pos));
      break;
    }
    fields.push_back(line.substr(pos, sep - pos));
    pos = sep + 5;
  }
  return fields;
}

}  // namespace detail

inline void save_phrase_table(const PhraseTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write ", path);
  for (const auto& [src, row] : table.entries)
    for (const auto& [tgt, s] : row)
      out << src << " ||| " << tgt << " ||| " << detail::fmt_prob(s.phi_src_given_tgt)
          << ' ' << detail::fmt_prob(s.lex_src_given_tgt) << ' '
          << detail::fmt_prob(s.phi_tgt_given_src) << ' '
          << detail::fmt_prob(s.lex_tgt_given_src) << '\n';
}

inline PhraseTable load_phrase_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open ", path);
  PhraseTable table;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = detail::split_fields(line);
    if (fields.size() != 3) fail(path, ":", lineno, ": expected 3 ||| fields");
    auto nums = split_ws(fields[2]);
    if (nums.size() != 4) fail(path, ":", lineno, ": expected 4 scores");
    PhraseScores s;
    s.phi_src_given_tgt = std::stod(nums[0]);
    s.lex_src_given_tgt = std::stod(nums[1]);
    s.phi_tgt_given_src = std::stod(nums[2]);
    s.lex_tgt_given_src = std::stod(nums[3]);
    table.entries[fields[0]][fields[1]] = s;
  }
  return table;
}

inline void save_reordering_table(const ReorderingTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write ", path);
  for (const auto& [src, row] : table.entries)
    for (const auto& [tgt, p] : row) {
      out << src << " ||| " << tgt << " |||";
      for (int k = 0; k < 3; ++k) out << ' ' << detail::fmt_prob(p.prev[k]);
      for (int k = 0; k < 3; ++k) out << ' ' << detail::fmt_prob(p.next[k]);
      out << '\n';
    }
}

inline ReorderingTable load_reordering_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open ", path);
  ReorderingTable table;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = detail::split_fields(line);
    if (fields.size() != 3) fail(path, ":", lineno, ": expected 3 ||| fields");
    auto nums = split_ws(fields[2]);
    if (nums.size() != 6) fail(path, ":", lineno, ": expected 6 probabilities");
    OrientationProbs p;
    for (int k = 0; k < 3; ++k) p.prev[k] = std::stod(nums[k]);
    for (int k = 0; k < 3; ++k) p.next[k] = std::stod(nums[3 + k]);
    table.entries[fields[0]][fields[1]] = p;
  }
  return table;
}

}  // namespace mtlab::align
