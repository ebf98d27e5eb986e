// Corpus-level BLEU, NIST with information weights, exact-match METEOR, and
// shift-based TER, plus the BLEU interpretability banding.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtlab/common.hpp"

namespace mtlab::metrics {

using Tokens = std::vector<std::string>;

namespace detail {

inline std::string ngram_key(const Tokens& t, size_t start, size_t n) {
  std::string key;
  for (size_t i = 0; i < n; ++i) {
    if (i) key.push_back('\x1f');
    key += t[start + i];
  }
  return key;
}

inline std::unordered_map<std::string, uint64_t> ngram_counts(const Tokens& t, size_t n) {
  std::unordered_map<std::string, uint64_t> counts;
  if (t.size() >= n)
    for (size_t i = 0; i + n <= t.size(); ++i) ++counts[ngram_key(t, i, n)];
  return counts;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// BLEU

struct BleuComponents {
  size_t max_order = 4;
  // Clipped match / total hypothesis n-grams per order (index 0 = unigrams).
  std::vector<uint64_t> match;
  std::vector<uint64_t> total;
  std::vector<double> weights;       // renormalized over defined orders
  uint64_t candidate_length = 0;     // c
  uint64_t reference_length = 0;     // r
  double brevity_penalty = 1.0;
  double score = 0.0;                // percentage

  // p_n; empty when the hypothesis has no n-grams of this order.
  std::optional<double> precision(size_t n) const {
    if (n < 1 || n > max_order || total[n - 1] == 0) return std::nullopt;
    return double(match[n - 1]) / double(total[n - 1]);
  }
};

inline std::vector<std::pair<uint64_t, uint64_t>> clipped_ngram_counts(
    const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs, size_t max_order) {
  if (hyps.size() != refs.size())
    fail("metrics: ", hyps.size(), " hypotheses vs ", refs.size(), " references");
  std::vector<std::pair<uint64_t, uint64_t>> out(max_order, {0, 0});
  for (size_t s = 0; s < hyps.size(); ++s) {
    for (size_t n = 1; n <= max_order; ++n) {
      auto hc = detail::ngram_counts(hyps[s], n);
      if (hc.empty()) continue;
      auto rc = detail::ngram_counts(refs[s], n);
      for (const auto& [key, count] : hc) {
        auto it = rc.find(key);
        uint64_t ref_count = it == rc.end() ? 0 : it->second;
        out[n - 1].first += std::min(count, ref_count);
        out[n - 1].second += count;
      }
    }
  }
  return out;
}

inline std::vector<std::optional<double>> clipped_ngram_precisions(
    const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs, size_t max_order) {
  auto counts = clipped_ngram_counts(hyps, refs, max_order);
  std::vector<std::optional<double>> out(max_order);
  for (size_t n = 0; n < max_order; ++n)
    if (counts[n].second > 0) out[n] = double(counts[n].first) / double(counts[n].second);
  return out;
}

inline double brevity_penalty(uint64_t c, uint64_t r) {
  if (c == 0) fail("brevity_penalty: zero candidate length");
  return c > r ? 1.0 : std::exp(1.0 - double(r) / double(c));
}

inline BleuComponents bleu_components(const std::vector<Tokens>& hyps,
                                      const std::vector<Tokens>& refs,
                                      size_t max_order = 4,
                                      const std::vector<double>& weights = {}) {
  if (hyps.empty()) fail("bleu: empty hypothesis set");
  BleuComponents b;
  b.max_order = max_order;
  auto counts = clipped_ngram_counts(hyps, refs, max_order);
  for (auto [m, t] : counts) {
    b.match.push_back(m);
    b.total.push_back(t);
  }
  for (size_t s = 0; s < hyps.size(); ++s) {
    b.candidate_length += hyps[s].size();
    b.reference_length += refs[s].size();
  }
  if (b.candidate_length == 0) fail("bleu: all hypotheses empty");
  b.brevity_penalty = brevity_penalty(b.candidate_length, b.reference_length);

  std::vector<double> base = weights;
  if (base.empty()) base.assign(max_order, 1.0 / double(max_order));
  if (base.size() != max_order) fail("bleu: expected ", max_order, " weights");
  // Orders where the hypothesis has no n-grams are dropped and the remaining
  // weights renormalized; a zero precision at any kept order zeroes the score.
  double wsum = 0.0;
  for (size_t n = 0; n < max_order; ++n)
    if (b.total[n] > 0) wsum += base[n];
  if (wsum <= 0.0) fail("bleu: no scorable n-gram order");
  b.weights.assign(max_order, 0.0);
  double log_sum = 0.0;
  bool zero = false;
  for (size_t n = 0; n < max_order; ++n) {
    if (b.total[n] == 0) continue;
    b.weights[n] = base[n] / wsum;
    if (b.match[n] == 0)
      zero = true;
    else
      log_sum += b.weights[n] * std::log(double(b.match[n]) / double(b.total[n]));
  }
  b.score = zero ? 0.0 : 100.0 * b.brevity_penalty * std::exp(log_sum);
  return b;
}

inline double bleu(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs,
                   size_t max_order = 4, const std::vector<double>& weights = {}) {
  return bleu_components(hyps, refs, max_order, weights).score;
}

inline std::string interpret_bleu(double score) {
  if (score < 15.0) return "unusable";
  if (score < 30.0) return "post-editing required";
  if (score < 50.0) return "understandable";
  return "good, fluent";
}

// ---------------------------------------------------------------------------
// NIST

struct NistComponents {
  size_t max_order = 5;
  std::vector<double> info_sum;   // per order: sum of info over matched n-grams
  std::vector<uint64_t> total;    // per order: total hypothesis n-grams
  uint64_t hyp_length = 0;
  uint64_t ref_length = 0;
  double brevity = 1.0;
  double score = 0.0;             // raw, roughly 0..15
};

// Factor is 0.5 when the hypothesis is 2/3 of the reference length.
inline double nist_brevity(uint64_t hyp_len, uint64_t ref_len) {
  if (hyp_len >= ref_len) return 1.0;
  static const double beta =
      std::log(0.5) / (std::log(2.0 / 3.0) * std::log(2.0 / 3.0));
  double lr = std::log(double(hyp_len) / double(ref_len));
  return std::exp(beta * lr * lr);
}

inline NistComponents nist_components(const std::vector<Tokens>& hyps,
                                      const std::vector<Tokens>& refs,
                                      size_t max_order = 5) {
  if (hyps.size() != refs.size())
    fail("nist: ", hyps.size(), " hypotheses vs ", refs.size(), " references");
  NistComponents r;
  r.max_order = max_order;
  r.info_sum.assign(max_order, 0.0);
  r.total.assign(max_order, 0);

  // Information weights come from the reference corpus.
  std::vector<std::unordered_map<std::string, uint64_t>> ref_counts(max_order + 1);
  uint64_t ref_words = 0;
  for (const auto& ref : refs) {
    ref_words += ref.size();
    for (size_t n = 1; n <= max_order; ++n)
      for (size_t i = 0; i + n <= ref.size(); ++i)
        ++ref_counts[n][detail::ngram_key(ref, i, n)];
  }
  if (ref_words == 0) fail("nist: empty reference corpus");

  auto info = [&](const Tokens& t, size_t start, size_t n) {
    uint64_t full = ref_counts[n].at(detail::ngram_key(t, start, n));
    uint64_t prefix = n == 1 ? ref_words : ref_counts[n - 1].at(detail::ngram_key(t, start, n - 1));
    return std::log2(double(prefix) / double(full));
  };

  for (size_t s = 0; s < hyps.size(); ++s) {
    const Tokens& hyp = hyps[s];
    const Tokens& ref = refs[s];
    r.hyp_length += hyp.size();
    r.ref_length += ref.size();
    for (size_t n = 1; n <= max_order; ++n) {
      if (hyp.size() < n) continue;
      r.total[n - 1] += hyp.size() - n + 1;
      auto rc = detail::ngram_counts(ref, n);
      // Clip each hypothesis n-gram type to its reference count; every
      // clipped occurrence contributes the n-gram's information weight.
      std::unordered_map<std::string, uint64_t> used;
      for (size_t i = 0; i + n <= hyp.size(); ++i) {
        std::string key = detail::ngram_key(hyp, i, n);
        auto it = rc.find(key);
        if (it == rc.end()) continue;
        if (++used[key] > it->second) continue;
        r.info_sum[n - 1] += info(hyp, i, n);
      }
    }
  }
  r.brevity = nist_brevity(r.hyp_length, r.ref_length);
  double sum = 0.0;
  for (size_t n = 0; n < max_order; ++n)
    if (r.total[n] > 0) sum += r.info_sum[n] / double(r.total[n]);
  r.score = sum * r.brevity;
  return r;
}

inline double nist(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs,
                   size_t max_order = 5) {
  return nist_components(hyps, refs, max_order).score;
}

// ---------------------------------------------------------------------------
// METEOR (exact surface matches only)

struct MeteorComponents {
  uint64_t matches = 0;     // m
  uint64_t hyp_length = 0;
  uint64_t ref_length = 0;
  uint64_t chunks = 0;      // ch
  double precision = 0.0;
  double recall = 0.0;
  double fmean = 0.0;
  double penalty = 0.0;     // 0.5 * (ch/m)^3
  double score = 0.0;       // percentage
};

namespace detail {

struct MeteorMatch {
  uint64_t matches = 0;
  uint64_t chunks = 0;
};

struct ChunkSearch {
  const Tokens& hyp;
  const Tokens& ref;
  std::unordered_map<std::string, uint64_t> budget;    // matches still required per type
  std::unordered_map<std::string, uint64_t> occ_left;  // hyp occurrences at >= pos
  std::unordered_map<std::string, std::vector<size_t>> ref_pos;
  std::vector<char> ref_used;
  uint64_t best = std::numeric_limits<uint64_t>::max();
  uint64_t nodes = 0;
  static constexpr uint64_t kNodeCap = 2'000'000;
  bool capped = false;

  ChunkSearch(const Tokens& h, const Tokens& r) : hyp(h), ref(r), ref_used(r.size(), 0) {
    std::unordered_map<std::string, uint64_t> rc;
    for (const auto& t : h) ++occ_left[t];
    for (const auto& t : r) ++rc[t];
    for (const auto& [w, c] : occ_left) {
      auto it = rc.find(w);
      if (it != rc.end()) budget[w] = std::min(c, it->second);
    }
    for (size_t i = 0; i < r.size(); ++i) ref_pos[r[i]].push_back(i);
  }

  // Depth-first over hypothesis positions; prev_* track the last match.
  // Invariant: occ_left[w] >= budget[w], so reaching the end means every
  // type met its match quota (the matching is maximum).
  void run(size_t pos, uint64_t chunks, size_t prev_hyp, size_t prev_ref, bool has_prev) {
    if (capped || chunks >= best) return;
    if (++nodes > kNodeCap) {
      capped = true;
      return;
    }
    if (pos == hyp.size()) {
      best = chunks;
      return;
    }
    const std::string& w = hyp[pos];
    auto bit = budget.find(w);
    uint64_t b = bit == budget.end() ? 0 : bit->second;
    uint64_t& occ = occ_left[w];
    if (b > 0) {
      // Try the chunk-continuing reference position first for a tight bound.
      std::vector<size_t> order;
      if (has_prev && prev_hyp + 1 == pos && prev_ref + 1 < ref.size() &&
          !ref_used[prev_ref + 1] && ref[prev_ref + 1] == w)
        order.push_back(prev_ref + 1);
      for (size_t q : ref_pos[w])
        if (!ref_used[q] && !(order.size() == 1 && order[0] == q)) order.push_back(q);
      for (size_t q : order) {
        bool cont = has_prev && prev_hyp + 1 == pos && prev_ref + 1 == q;
        ref_used[q] = 1;
        --bit->second;
        --occ;
        run(pos + 1, chunks + (cont ? 0 : 1), pos, q, true);
        ++occ;
        ++bit->second;
        ref_used[q] = 0;
      }
    }
    if (occ - 1 >= b) {  // enough later occurrences remain to fill the quota
      --occ;
      run(pos + 1, chunks, prev_hyp, prev_ref, has_prev);
      ++occ;
    }
  }
};

inline MeteorMatch meteor_greedy(const Tokens& hyp, const Tokens& ref) {
  std::unordered_map<std::string, uint64_t> hc, rc, budget;
  for (const auto& t : hyp) ++hc[t];
  for (const auto& t : ref) ++rc[t];
  for (const auto& [w, c] : hc) {
    auto it = rc.find(w);
    if (it != rc.end()) budget[w] = std::min(c, it->second);
  }
  std::unordered_map<std::string, std::vector<size_t>> ref_pos;
  for (size_t i = 0; i < ref.size(); ++i) ref_pos[ref[i]].push_back(i);
  std::vector<char> used(ref.size(), 0);
  MeteorMatch out;
  bool has_prev = false;
  size_t prev_hyp = 0, prev_ref = 0;
  for (size_t p = 0; p < hyp.size(); ++p) {
    auto bit = budget.find(hyp[p]);
    if (bit == budget.end() || bit->second == 0) continue;
    size_t chosen = ref.size();
    if (has_prev && prev_hyp + 1 == p && prev_ref + 1 < ref.size() &&
        !used[prev_ref + 1] && ref[prev_ref + 1] == hyp[p]) {
      chosen = prev_ref + 1;
    } else {
      for (size_t q : ref_pos[hyp[p]])
        if (!used[q]) {
          chosen = q;
          break;
        }
    }
    if (chosen == ref.size()) continue;
    bool cont = has_prev && prev_hyp + 1 == p && prev_ref + 1 == chosen;
    out.chunks += cont ? 0 : 1;
    ++out.matches;
    used[chosen] = 1;
    --bit->second;
    prev_hyp = p;
    prev_ref = chosen;
    has_prev = true;
  }
  return out;
}

// Maximum-cardinality exact matching, minimizing chunks; exact search for
// small match counts, greedy beyond that.
inline MeteorMatch meteor_match(const Tokens& hyp, const Tokens& ref) {
  std::unordered_map<std::string, uint64_t> hc, rc;
  for (const auto& t : hyp) ++hc[t];
  for (const auto& t : ref) ++rc[t];
  uint64_t m = 0;
  for (const auto& [w, c] : hc) {
    auto it = rc.find(w);
    if (it != rc.end()) m += std::min(c, it->second);
  }
  if (m == 0) return {};
  if (m > 20) return meteor_greedy(hyp, ref);
  ChunkSearch search(hyp, ref);
  search.run(0, 0, 0, 0, false);
  if (search.capped) return meteor_greedy(hyp, ref);
  return {m, search.best};
}

}  // namespace detail

inline MeteorComponents meteor_from_counts(uint64_t m, uint64_t chunks,
                                           uint64_t hyp_len, uint64_t ref_len) {
  MeteorComponents c;
  c.matches = m;
  c.chunks = chunks;
  c.hyp_length = hyp_len;
  c.ref_length = ref_len;
  if (m == 0 || hyp_len == 0 || ref_len == 0) return c;
  c.precision = double(m) / double(hyp_len);
  c.recall = double(m) / double(ref_len);
  c.fmean = 10.0 * c.precision * c.recall / (c.recall + 9.0 * c.precision);
  double frag = double(chunks) / double(m);
  c.penalty = 0.5 * frag * frag * frag;
  c.score = 100.0 * c.fmean * (1.0 - c.penalty);
  return c;
}

inline MeteorComponents meteor_components(const Tokens& hyp, const Tokens& ref) {
  auto match = detail::meteor_match(hyp, ref);
  return meteor_from_counts(match.matches, match.chunks, hyp.size(), ref.size());
}

inline double meteor(const Tokens& hyp, const Tokens& ref) {
  return meteor_components(hyp, ref).score;
}

// Corpus METEOR aggregates match/chunk/length counts over segments before
// applying the score formula.
inline MeteorComponents meteor_corpus(const std::vector<Tokens>& hyps,
                                      const std::vector<Tokens>& refs) {
  if (hyps.size() != refs.size())
    fail("meteor: ", hyps.size(), " hypotheses vs ", refs.size(), " references");
  uint64_t m = 0, ch = 0, hl = 0, rl = 0;
  for (size_t s = 0; s < hyps.size(); ++s) {
    auto match = detail::meteor_match(hyps[s], refs[s]);
    m += match.matches;
    ch += match.chunks;
    hl += hyps[s].size();
    rl += refs[s].size();
  }
  return meteor_from_counts(m, ch, hl, rl);
}

// ---------------------------------------------------------------------------
// TER

struct TerComponents {
  uint64_t edits = 0;        // insertions + deletions + substitutions + shifts
  uint64_t shifts = 0;
  uint64_t ref_length = 0;
  double score = 0.0;        // percentage; can exceed 100 for long hypotheses
};

inline uint64_t levenshtein(const Tokens& a, const Tokens& b) {
  std::vector<uint64_t> prev(b.size() + 1), cur(b.size() + 1);
  for (size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= b.size(); ++j) {
      uint64_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

namespace detail {

constexpr size_t kMaxShiftSpan = 10;

struct ShiftCandidate {
  uint64_t new_dist = 0;
  size_t span_len = 0;
  size_t origin = 0;
  size_t dest = 0;
  Tokens result;
  bool valid = false;
};

// Best single block shift: the span must match the reference exactly at its
// destination; accepted only if it strictly reduces shifts + edit distance.
inline ShiftCandidate best_shift(const Tokens& hyp, const Tokens& ref, uint64_t dist) {
  std::unordered_map<std::string, std::vector<size_t>> ref_starts;
  for (size_t n = 1; n <= std::min(kMaxShiftSpan, ref.size()); ++n)
    for (size_t p = 0; p + n <= ref.size(); ++p)
      ref_starts[ngram_key(ref, p, n)].push_back(p);

  ShiftCandidate best;
  for (size_t i = 0; i < hyp.size(); ++i) {
    for (size_t len = 1; len <= std::min(kMaxShiftSpan, hyp.size() - i); ++len) {
      auto it = ref_starts.find(ngram_key(hyp, i, len));
      if (it == ref_starts.end()) continue;
      Tokens rest;
      rest.reserve(hyp.size() - len);
      rest.insert(rest.end(), hyp.begin(), hyp.begin() + i);
      rest.insert(rest.end(), hyp.begin() + i + len, hyp.end());
      for (size_t p : it->second) {
        size_t ins = std::min(p, rest.size());
        if (ins == i) continue;  // no movement
        Tokens cand;
        cand.reserve(hyp.size());
        cand.insert(cand.end(), rest.begin(), rest.begin() + ins);
        cand.insert(cand.end(), hyp.begin() + i, hyp.begin() + i + len);
        cand.insert(cand.end(), rest.begin() + ins, rest.end());
        uint64_t nd = levenshtein(cand, ref);
        if (nd + 2 > dist) continue;  // must strictly reduce total cost
        bool better = !best.valid || nd < best.new_dist ||
                      (nd == best.new_dist &&
                       (len > best.span_len ||
                        (len == best.span_len &&
                         (i < best.origin || (i == best.origin && p < best.dest)))));
        if (better) {
          best.valid = true;
          best.new_dist = nd;
          best.span_len = len;
          best.origin = i;
          best.dest = p;
          best.result = std::move(cand);
        }
      }
    }
  }
  return best;
}

}  // namespace detail

inline TerComponents ter_components(const Tokens& hyp, const Tokens& ref) {
  if (ref.empty()) fail("ter: empty reference");
  TerComponents r;
  r.ref_length = ref.size();
  Tokens cur = hyp;
  uint64_t dist = levenshtein(cur, ref);
  while (dist > 0) {
    auto shift = detail::best_shift(cur, ref, dist);
    if (!shift.valid) break;
    cur = std::move(shift.result);
    dist = shift.new_dist;
    ++r.shifts;
  }
  r.edits = r.shifts + dist;
  r.score = 100.0 * double(r.edits) / double(r.ref_length);
  return r;
}

inline double ter(const Tokens& hyp, const Tokens& ref) {
  return ter_components(hyp, ref).score;
}

inline TerComponents ter_corpus(const std::vector<Tokens>& hyps,
                                const std::vector<Tokens>& refs) {
  if (hyps.size() != refs.size())
    fail("ter: ", hyps.size(), " hypotheses vs ", refs.size(), " references");
  TerComponents total;
  for (size_t s = 0; s < hyps.size(); ++s) {
    auto c = ter_components(hyps[s], refs[s]);
    total.edits += c.edits;
    total.shifts += c.shifts;
    total.ref_length += c.ref_length;
  }
  if (total.ref_length == 0) fail("ter: empty reference corpus");
  total.score = 100.0 * double(total.edits) / double(total.ref_length);
  return total;
}

// ---------------------------------------------------------------------------
// Combined report

struct MetricReport {
  double bleu = 0.0;
  double nist_raw = 0.0;
  double nist_scaled = 0.0;  // raw / 15 * 100; the 0-100 presentation column
  double meteor = 0.0;
  double ter = 0.0;
  std::string bleu_band;
  BleuComponents bleu_parts;
  NistComponents nist_parts;
  MeteorComponents meteor_parts;
  TerComponents ter_parts;
};

inline MetricReport score_corpus(const std::vector<Tokens>& hyps,
                                 const std::vector<Tokens>& refs) {
  MetricReport r;
  r.bleu_parts = bleu_components(hyps, refs);
  r.nist_parts = nist_components(hyps, refs);
  r.meteor_parts = meteor_corpus(hyps, refs);
  r.ter_parts = ter_corpus(hyps, refs);
  r.bleu = r.bleu_parts.score;
  r.nist_raw = r.nist_parts.score;
  r.nist_scaled = r.nist_raw / 15.0 * 100.0;
  r.meteor = r.meteor_parts.score;
  r.ter = r.ter_parts.score;
  r.bleu_band = interpret_bleu(r.bleu);
  return r;
}

}  // namespace mtlab::metrics
