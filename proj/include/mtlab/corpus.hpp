// Parallel corpus ingestion: loading, tokenization, cleaning, vocabulary,
// train/test splitting, summary stats.
#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtlab/common.hpp"

namespace mtlab::corpus {

struct SentencePair {
  int id = 0;
  std::vector<std::string> source;
  std::vector<std::string> target;
  // Raw lines as loaded; kept until tokenize_corpus runs.
  std::string source_raw;
  std::string target_raw;
};

struct ParallelCorpus {
  std::vector<SentencePair> pairs;
  std::string source_lang = "src";
  std::string target_lang = "tgt";

  size_t size() const { return pairs.size(); }
};

struct Vocabulary {
  static constexpr uint32_t kUnkId = 0;
  static constexpr uint32_t kStartId = 1;
  static constexpr uint32_t kEndId = 2;
  static constexpr uint32_t kNumReserved = 3;

  std::vector<std::string> id_to_token{"<unk>", "<s>", "</s>"};
  std::unordered_map<std::string, uint32_t> token_to_id{
      {"<unk>", 0}, {"<s>", 1}, {"</s>", 2}};
  std::vector<uint64_t> counts{0, 0, 0};

  uint32_t size() const { return static_cast<uint32_t>(id_to_token.size()); }

  uint32_t lookup(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? kUnkId : it->second;
  }

  const std::string& token(uint32_t id) const {
    if (id >= id_to_token.size()) fail("vocabulary: id ", id, " out of range");
    return id_to_token[id];
  }

  uint32_t add(const std::string& token, uint64_t count) {
    uint32_t id = size();
    id_to_token.push_back(token);
    token_to_id.emplace(token, id);
    counts.push_back(count);
    return id;
  }

  std::vector<uint32_t> to_ids(const std::vector<std::string>& tokens) const {
    std::vector<uint32_t> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(lookup(t));
    return ids;
  }
};

struct SplitSpec {
  size_t test_size = 1000;
  size_t max_test_sentence_words = 50;
  uint64_t seed = 1;
};

// Structural UTF-8 validation; returns byte offset of first invalid byte, or
// npos if the buffer is valid.
inline size_t utf8_invalid_at(const std::string& s) {
  size_t i = 0;
  const size_t n = s.size();
  while (i < n) {
    unsigned char b = static_cast<unsigned char>(s[i]);
    size_t extra;
    uint32_t cp, min_cp;
    if (b < 0x80) {
      ++i;
      continue;
    } else if ((b & 0xE0) == 0xC0) {
      extra = 1; cp = b & 0x1F; min_cp = 0x80;
    } else if ((b & 0xF0) == 0xE0) {
      extra = 2; cp = b & 0x0F; min_cp = 0x800;
    } else if ((b & 0xF8) == 0xF0) {
      extra = 3; cp = b & 0x07; min_cp = 0x10000;
    } else {
      return i;
    }
    if (i + extra >= n) return i;
    for (size_t k = 1; k <= extra; ++k) {
      unsigned char c = static_cast<unsigned char>(s[i + k]);
      if ((c & 0xC0) != 0x80) return i;
      cp = (cp << 6) | (c & 0x3F);
    }
    if (cp < min_cp || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return i;
    i += extra + 1;
  }
  return std::string::npos;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open ", path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (utf8_invalid_at(line) != std::string::npos)
      fail(path, ": invalid UTF-8 at line ", lines.size() + 1);
    lines.push_back(line);
  }
  return lines;
}

inline ParallelCorpus load_parallel(const std::string& source_path,
                                    const std::string& target_path) {
  auto src = read_lines(source_path);
  auto tgt = read_lines(target_path);
  if (src.size() != tgt.size())
    fail("line count mismatch: ", source_path, " has ", src.size(), " lines, ",
         target_path, " has ", tgt.size());
  ParallelCorpus c;
  c.pairs.resize(src.size());
  for (size_t i = 0; i < src.size(); ++i) {
    c.pairs[i].id = static_cast<int>(i);
    c.pairs[i].source_raw = std::move(src[i]);
    c.pairs[i].target_raw = std::move(tgt[i]);
  }
  return c;
}

namespace detail {

inline bool is_ascii_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\v' || c == '\f';
}

inline bool is_word_char(unsigned char c) {
  // Non-ASCII bytes are treated as letters so multibyte characters stay intact.
  return c >= 0x80 || std::isalnum(c);
}

inline bool is_joiner(unsigned char c) { return c == '\'' || c == '-'; }

}  // namespace detail

// Lowercases (ASCII), isolates punctuation into separate tokens, keeps
// word-internal apostrophes and hyphens attached, collapses whitespace.
inline std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  const size_t n = line.size();
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (size_t i = 0; i < n; ++i) {
    unsigned char c = static_cast<unsigned char>(line[i]);
    if (detail::is_ascii_space(c)) {
      flush();
    } else if (detail::is_word_char(c)) {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : line[i]);
    } else if (detail::is_joiner(c) && !cur.empty() && i + 1 < n &&
               detail::is_word_char(static_cast<unsigned char>(line[i + 1]))) {
      cur.push_back(line[i]);  // word-internal ' or -
    } else {
      flush();
      out.push_back(std::string(1, line[i]));
    }
  }
  flush();
  return out;
}

inline void tokenize_corpus(ParallelCorpus& c) {
  for (auto& p : c.pairs) {
    p.source = tokenize(p.source_raw);
    p.target = tokenize(p.target_raw);
  }
}

struct CleanResult {
  ParallelCorpus corpus;
  size_t removed = 0;
};

inline CleanResult clean_corpus(const ParallelCorpus& c, size_t max_len = 80,
                                double max_ratio = 9.0) {
  CleanResult r;
  r.corpus.source_lang = c.source_lang;
  r.corpus.target_lang = c.target_lang;
  for (const auto& p : c.pairs) {
    size_t s = p.source.size(), t = p.target.size();
    bool drop = s == 0 || t == 0 || s > max_len || t > max_len;
    if (!drop) {
      double ratio = s >= t ? double(s) / double(t) : double(t) / double(s);
      drop = ratio > max_ratio;
    }
    if (drop) {
      ++r.removed;
      continue;
    }
    SentencePair kept = p;
    kept.id = static_cast<int>(r.corpus.pairs.size());
    r.corpus.pairs.push_back(std::move(kept));
  }
  return r;
}

enum class Side { kSource, kTarget };

inline Vocabulary build_vocab(const ParallelCorpus& c, Side side,
                              uint64_t min_count = 1) {
  if (c.pairs.empty()) fail("build_vocab: empty corpus");
  std::unordered_map<std::string, uint64_t> freq;
  for (const auto& p : c.pairs)
    for (const auto& tok : (side == Side::kSource ? p.source : p.target))
      ++freq[tok];
  std::vector<std::pair<std::string, uint64_t>> entries(freq.begin(), freq.end());
  // Ids by descending count, then lexicographic.
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v;
  for (const auto& [tok, count] : entries)
    if (count >= min_count) v.add(tok, count);
  return v;
}

struct SplitResult {
  ParallelCorpus train;
  ParallelCorpus test;
};

inline SplitResult split_corpus(const ParallelCorpus& c, const SplitSpec& spec) {
  if (c.pairs.size() <= spec.test_size)
    fail("split_corpus: corpus has ", c.pairs.size(),
         " pairs, need more than test_size=", spec.test_size);
  std::vector<size_t> eligible;
  for (size_t i = 0; i < c.pairs.size(); ++i) {
    const auto& p = c.pairs[i];
    if (p.source.size() <= spec.max_test_sentence_words &&
        p.target.size() <= spec.max_test_sentence_words)
      eligible.push_back(i);
  }
  if (eligible.size() < spec.test_size)
    fail("split_corpus: only ", eligible.size(),
         " pairs satisfy the length cap, need ", spec.test_size);
  Rng rng(spec.seed);
  rng.shuffle(eligible);
  eligible.resize(spec.test_size);
  std::vector<char> in_test(c.pairs.size(), 0);
  for (size_t i : eligible) in_test[i] = 1;

  SplitResult r;
  r.train.source_lang = r.test.source_lang = c.source_lang;
  r.train.target_lang = r.test.target_lang = c.target_lang;
  for (size_t i = 0; i < c.pairs.size(); ++i) {
    ParallelCorpus& dst = in_test[i] ? r.test : r.train;
    SentencePair p = c.pairs[i];
    p.id = static_cast<int>(dst.pairs.size());
    dst.pairs.push_back(std::move(p));
  }
  return r;
}

struct CorpusStats {
  size_t sentences = 0;
  size_t source_tokens = 0;
  size_t target_tokens = 0;
  size_t source_unique = 0;
  size_t target_unique = 0;
};

inline CorpusStats corpus_stats(const ParallelCorpus& c) {
  CorpusStats s;
  s.sentences = c.pairs.size();
  std::unordered_map<std::string, char> su, tu;
  for (const auto& p : c.pairs) {
    s.source_tokens += p.source.size();
    s.target_tokens += p.target.size();
    for (const auto& t : p.source) su.emplace(t, 0);
    for (const auto& t : p.target) tu.emplace(t, 0);
  }
  s.source_unique = su.size();
  s.target_unique = tu.size();
  return s;
}

inline void write_side(const ParallelCorpus& c, Side side, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write ", path);
  for (const auto& p : c.pairs)
    out << join(side == Side::kSource ? p.source : p.target) << '\n';
}

// Vocabulary sidecar: one "token<TAB>count" line per non-reserved id, in id
// order; reserved entries are implicit.
inline void save_vocab(const Vocabulary& v, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write ", path);
  for (uint32_t id = Vocabulary::kNumReserved; id < v.size(); ++id)
    out << v.id_to_token[id] << '\t' << v.counts[id] << '\n';
}

inline Vocabulary load_vocab(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open ", path);
  Vocabulary v;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) fail(path, ":", lineno, ": expected token<TAB>count");
    v.add(line.substr(0, tab), std::stoull(line.substr(tab + 1)));
  }
  return v;
}

}  // namespace mtlab::corpus
