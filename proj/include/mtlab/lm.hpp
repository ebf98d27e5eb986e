// N-gram language model with single-discount interpolated Kneser-Ney
// smoothing. Raw counts drive every order above unigrams; the unigram level
// is a continuation-count distribution with an additive floor for the
// unknown marker. Queries are log10.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtlab/common.hpp"
#include "mtlab/corpus.hpp"

namespace mtlab::lm {

using corpus::Vocabulary;

namespace detail {

// Big-endian packing so lexicographic key order equals numeric id order.
inline void pack_id(std::string& key, uint32_t id) {
  key.push_back(char((id >> 24) & 0xFF));
  key.push_back(char((id >> 16) & 0xFF));
  key.push_back(char((id >> 8) & 0xFF));
  key.push_back(char(id & 0xFF));
}

inline std::string pack(const uint32_t* ids, size_t n) {
  std::string key;
  key.reserve(4 * n);
  for (size_t i = 0; i < n; ++i) pack_id(key, ids[i]);
  return key;
}

inline uint32_t unpack_id(const std::string& key, size_t idx) {
  auto b = [&](size_t k) { return uint32_t(uint8_t(key[4 * idx + k])); };
  return (b(0) << 24) | (b(1) << 16) | (b(2) << 8) | b(3);
}

struct ContextInfo {
  uint64_t total = 0;      // sum of successor counts
  uint32_t distinct = 0;   // number of distinct successors
};

}  // namespace detail

struct LmState {
  std::vector<uint32_t> context;  // most recent (order-1) token ids

  std::string key() const { return detail::pack(context.data(), context.size()); }
};

struct NGramModel {
  int order = 5;
  Vocabulary vocab;
  // counts[n] holds n-gram counts from sentences padded with one start and
  // one end marker; index 0 is unused.
  std::vector<std::unordered_map<std::string, uint64_t>> counts;
  std::vector<double> discount;  // discount[n] for n in 2..order
  std::vector<std::string> warnings;

  // Derived tables, rebuilt on load.
  std::vector<std::unordered_map<std::string, detail::ContextInfo>> contexts;  // by context length
  std::vector<uint64_t> continuation;  // unigram continuation counts by token id
  uint64_t continuation_total = 0;     // distinct bigram types with non-start left word
  std::vector<uint64_t> unigram;       // raw unigram counts by id (order-1 models)
  uint64_t unigram_total = 0;          // total unigrams excluding the start marker

  LmState initial_state() const {
    LmState s;
    if (order > 1) s.context.push_back(Vocabulary::kStartId);
    return s;
  }

  void advance(LmState& s, uint32_t word) const {
    s.context.push_back(word);
    if (s.context.size() > size_t(order - 1))
      s.context.erase(s.context.begin(),
                      s.context.end() - (order - 1));
  }

  // P(word | context); the start marker is a context symbol, never a
  // predicted event, so it gets probability 0 here.
  double prob(uint32_t word, const std::vector<uint32_t>& context) const {
    if (word >= vocab.size()) fail("lm: token id ", word, " out of range");
    if (word == Vocabulary::kStartId) return 0.0;
    double p = bottom_prob(word);
    size_t usable = std::min(context.size(), size_t(order - 1));
    for (size_t k = 1; k <= usable; ++k) {
      const uint32_t* ctx = context.data() + context.size() - k;
      auto it = contexts[k].find(detail::pack(ctx, k));
      if (it == contexts[k].end()) continue;  // unseen context: pure backoff
      const auto& info = it->second;
      std::string key = detail::pack(ctx, k);
      detail::pack_id(key, word);
      auto cit = counts[k + 1].find(key);
      double c = cit == counts[k + 1].end() ? 0.0 : double(cit->second);
      double d = discount[k + 1];
      p = std::max(c - d, 0.0) / double(info.total) +
          d * double(info.distinct) / double(info.total) * p;
    }
    return p;
  }

  double bottom_prob(uint32_t word) const {
    if (order == 1) {
      double c = word < unigram.size() ? double(unigram[word]) : 0.0;
      if (word == Vocabulary::kUnkId) c += 1.0;
      return c / double(unigram_total + 1);
    }
    double c = word < continuation.size() ? double(continuation[word]) : 0.0;
    if (word == Vocabulary::kUnkId) c += 1.0;
    return c / double(continuation_total + 1);
  }
};

// log10 P(word | state). Stays finite: the start marker and words with zero
// continuation mass (seen only sentence-initially) score as the unknown
// marker, which always carries probability.
inline double log_prob(const NGramModel& m, uint32_t word, const LmState& state) {
  uint32_t w = word == Vocabulary::kStartId ? Vocabulary::kUnkId : word;
  double p = m.prob(w, state.context);
  if (p <= 0.0) p = m.prob(Vocabulary::kUnkId, state.context);
  return std::log10(p);
}

inline double log_prob(const NGramModel& m, const std::string& word, const LmState& state) {
  return log_prob(m, m.vocab.lookup(word), state);
}

namespace detail {

inline void build_derived(NGramModel& m) {
  m.contexts.assign(m.order, {});
  for (int n = 2; n <= m.order; ++n) {
    auto& ctx_map = m.contexts[n - 1];
    for (const auto& [key, count] : m.counts[n]) {
      std::string prefix = key.substr(0, key.size() - 4);
      auto& info = ctx_map[prefix];
      info.total += count;
      info.distinct += 1;
    }
  }

  m.continuation.assign(m.vocab.size(), 0);
  m.continuation_total = 0;
  if (m.order >= 2) {
    for (const auto& [key, count] : m.counts[2]) {
      (void)count;
      uint32_t left = unpack_id(key, 0);
      if (left == Vocabulary::kStartId) continue;
      uint32_t right = unpack_id(key, 1);
      m.continuation[right] += 1;
      m.continuation_total += 1;
    }
  }

  m.unigram.assign(m.vocab.size(), 0);
  m.unigram_total = 0;
  for (const auto& [key, count] : m.counts[1]) {
    uint32_t id = unpack_id(key, 0);
    m.unigram[id] = count;
    if (id != Vocabulary::kStartId) m.unigram_total += count;
  }

  m.discount.assign(m.order + 1, 0.0);
  for (int n = 2; n <= m.order; ++n) {
    uint64_t n1 = 0, n2 = 0;
    for (const auto& [key, count] : m.counts[n]) {
      (void)key;
      if (count == 1) ++n1;
      if (count == 2) ++n2;
    }
    double d = 0.5;
    if (n1 > 0 && n2 > 0) {
      d = double(n1) / double(n1 + 2 * n2);
    } else {
      m.warnings.push_back(msg("order ", n,
                               ": degenerate count-of-counts, using discount 0.5"));
    }
    m.discount[n] = d;
  }
}

}  // namespace detail

inline NGramModel train_lm(const std::vector<std::vector<std::string>>& sentences,
                           const Vocabulary& vocab, int order = 5) {
  if (sentences.empty()) fail("train_lm: no sentences");
  if (order < 1) fail("train_lm: order must be >= 1");
  NGramModel m;
  m.order = order;
  m.vocab = vocab;
  m.counts.assign(order + 1, {});
  std::vector<uint32_t> padded;
  for (const auto& sent : sentences) {
    padded.clear();
    padded.push_back(Vocabulary::kStartId);
    for (const auto& tok : sent) padded.push_back(vocab.lookup(tok));
    padded.push_back(Vocabulary::kEndId);
    for (int n = 1; n <= order; ++n)
      for (size_t i = 0; i + n <= padded.size(); ++i)
        ++m.counts[n][detail::pack(padded.data() + i, n)];
  }
  detail::build_derived(m);
  return m;
}

// 10^(-mean log10 probability per token, end markers included).
inline double perplexity(const NGramModel& m,
                         const std::vector<std::vector<std::string>>& sentences) {
  if (sentences.empty()) fail("perplexity: empty evaluation set");
  double lp = 0.0;
  uint64_t tokens = 0;
  for (const auto& sent : sentences) {
    LmState state = m.initial_state();
    for (const auto& tok : sent) {
      uint32_t id = m.vocab.lookup(tok);
      lp += log_prob(m, id, state);
      m.advance(state, id);
      ++tokens;
    }
    lp += log_prob(m, Vocabulary::kEndId, state);
    ++tokens;
  }
  return std::pow(10.0, -lp / double(tokens));
}

// ---------------------------------------------------------------------------
// Serialization. Binary layout (little-endian integers):
//   magic "PLMT1" | u8 version=1 | u32 order
//   u32 vocab size | per token: u32 byte length, bytes, u64 count
//   per order n=1..order: u64 entry count | entries sorted by id sequence:
//     n x u32 token ids, u64 count
// Derived tables are rebuilt on load, so queries round-trip bit-exactly.

namespace detail {

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) fail("lm: truncated model file");
  return v;
}

}  // namespace detail

inline void save_lm(const NGramModel& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write ", path);
  out.write("PLMT1", 5);
  detail::put<uint8_t>(out, 1);
  detail::put<uint32_t>(out, uint32_t(m.order));
  detail::put<uint32_t>(out, m.vocab.size());
  for (uint32_t id = 0; id < m.vocab.size(); ++id) {
    const std::string& tok = m.vocab.id_to_token[id];
    detail::put<uint32_t>(out, uint32_t(tok.size()));
    out.write(tok.data(), std::streamsize(tok.size()));
    detail::put<uint64_t>(out, m.vocab.counts[id]);
  }
  for (int n = 1; n <= m.order; ++n) {
    std::vector<std::pair<std::string, uint64_t>> entries(m.counts[n].begin(),
                                                          m.counts[n].end());
    std::sort(entries.begin(), entries.end());
    detail::put<uint64_t>(out, entries.size());
    for (const auto& [key, count] : entries) {
      for (size_t i = 0; i < key.size() / 4; ++i)
        detail::put<uint32_t>(out, detail::unpack_id(key, i));
      detail::put<uint64_t>(out, count);
    }
  }
  if (!out) fail("write failed: ", path);
}

inline NGramModel load_lm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open ", path);
  char magic[5];
  in.read(magic, 5);
  if (!in || std::memcmp(magic, "PLMT1", 5) != 0)
    fail("lm: bad magic in ", path);
  if (detail::get<uint8_t>(in) != 1) fail("lm: unsupported version in ", path);
  NGramModel m;
  m.order = int(detail::get<uint32_t>(in));
  if (m.order < 1 || m.order > 16) fail("lm: implausible order in ", path);
  uint32_t vsize = detail::get<uint32_t>(in);
  m.vocab.id_to_token.clear();
  m.vocab.token_to_id.clear();
  m.vocab.counts.clear();
  for (uint32_t id = 0; id < vsize; ++id) {
    uint32_t len = detail::get<uint32_t>(in);
    std::string tok(len, '\0');
    in.read(tok.data(), len);
    if (!in) fail("lm: truncated model file");
    uint64_t count = detail::get<uint64_t>(in);
    m.vocab.id_to_token.push_back(tok);
    m.vocab.token_to_id.emplace(tok, id);
    m.vocab.counts.push_back(count);
  }
  m.counts.assign(m.order + 1, {});
  for (int n = 1; n <= m.order; ++n) {
    uint64_t entries = detail::get<uint64_t>(in);
    for (uint64_t e = 0; e < entries; ++e) {
      std::string key;
      for (int i = 0; i < n; ++i) detail::pack_id(key, detail::get<uint32_t>(in));
      m.counts[n][key] = detail::get<uint64_t>(in);
    }
  }
  detail::build_derived(m);
  m.warnings.clear();  // already reported at training time
  return m;
}

// Debug dump: one n-gram per line, "tokens<TAB>log10 conditional probability".
inline void dump_lm(const NGramModel& m, std::ostream& out) {
  for (int n = 1; n <= m.order; ++n) {
    std::vector<std::string> keys;
    keys.reserve(m.counts[n].size());
    for (const auto& [key, count] : m.counts[n]) {
      (void)count;
      keys.push_back(key);
    }
    std::sort(keys.begin(), keys.end());
    for (const auto& key : keys) {
      std::vector<uint32_t> ids;
      for (size_t i = 0; i < key.size() / 4; ++i) ids.push_back(detail::unpack_id(key, i));
      std::vector<uint32_t> ctx(ids.begin(), ids.end() - 1);
      LmState state{ctx};
      std::string line;
      for (size_t i = 0; i < ids.size(); ++i) {
        if (i) line += ' ';
        line += m.vocab.token(ids[i]);
      }
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.6f", log_prob(m, ids.back(), state));
      out << line << '\t' << buf << '\n';
    }
  }
}

}  // namespace mtlab::lm
