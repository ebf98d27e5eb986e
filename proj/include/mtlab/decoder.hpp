// Phrase-based stack decoder: log-linear combination of phrase table, LM,
// word penalty, linear distortion, and msd-bidirectional lexicalized
// reordering, with per-stack histogram pruning, hypothesis recombination,
// and n-best extraction from the recombined search graph.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <queue>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtlab/common.hpp"
#include "mtlab/lm.hpp"
#include "mtlab/phrase.hpp"

namespace mtlab::decoder {

using align::Orientation;
using align::PhraseTable;
using align::ReorderingTable;

enum Feature : int {
  kPhiFe = 0,
  kLexFe,
  kPhiEf,
  kLexEf,
  kLm,
  kWordPenalty,
  kDistortion,
  kReoPrevM,
  kReoPrevS,
  kReoPrevD,
  kReoNextM,
  kReoNextS,
  kReoNextD,
  kOov,
  kNumFeatures
};

using FeatureVec = std::array<double, kNumFeatures>;

inline FeatureVec zero_features() {
  FeatureVec f;
  f.fill(0.0);
  return f;
}

struct Weights {
  FeatureVec lambda;

  Weights() {
    lambda.fill(1.0);
    lambda[kOov] = 10.0;  // fixed pass-through penalty weight
  }

  double dot(const FeatureVec& f) const {
    double s = 0.0;
    for (int k = 0; k < kNumFeatures; ++k) s += lambda[k] * f[k];
    return s;
  }
};

inline const std::array<const char*, kNumFeatures>& feature_names() {
  static const std::array<const char*, kNumFeatures> names = {
      "phi_fe",     "lex_fe",     "phi_ef",     "lex_ef",     "lm",
      "word_penalty", "distortion", "reo_prev_m", "reo_prev_s", "reo_prev_d",
      "reo_next_m", "reo_next_s", "reo_next_d", "oov"};
  return names;
}

struct DecoderConfig {
  Weights weights;
  int beam = 100;
  int distortion_limit = 6;  // -1 for unlimited
  int max_phrase_len = 7;
};

// One way to translate a source span. Probabilities are kept as log10.
struct TranslationOption {
  int begin = 0, end = 0;  // inclusive source span
  std::vector<std::string> target;
  double log_phrase[4] = {0, 0, 0, 0};  // phi_fe, lex_fe, phi_ef, lex_ef
  double log_reo_prev[3];
  double log_reo_next[3];
  bool oov = false;
};

namespace detail {

constexpr double kLogThird = -0.47712125471966244;  // log10(1/3)
constexpr double kMinLogProb = -12.0;               // floor for zero table scores

inline double safe_log10(double p) {
  return p > 0.0 ? std::max(std::log10(p), kMinLogProb) : kMinLogProb;
}

inline std::vector<TranslationOption> build_options(
    const std::vector<std::string>& source, const PhraseTable& table,
    const ReorderingTable& reordering, int max_phrase_len) {
  std::vector<TranslationOption> options;
  int n = int(source.size());
  for (int i = 0; i < n; ++i) {
    bool single_covered = false;
    for (int len = 1; len <= std::min(max_phrase_len, n - i); ++len) {
      std::vector<std::string> span(source.begin() + i, source.begin() + i + len);
      std::string key = join(span);
      auto sit = table.entries.find(key);
      if (sit == table.entries.end()) continue;
      if (len == 1) single_covered = true;
      for (const auto& [tgt, scores] : sit->second) {
        TranslationOption o;
        o.begin = i;
        o.end = i + len - 1;
        o.target = split_ws(tgt);
        o.log_phrase[0] = safe_log10(scores.phi_src_given_tgt);
        o.log_phrase[1] = safe_log10(scores.lex_src_given_tgt);
        o.log_phrase[2] = safe_log10(scores.phi_tgt_given_src);
        o.log_phrase[3] = safe_log10(scores.lex_tgt_given_src);
        const auto* r = reordering.find(key, tgt);
        for (int k = 0; k < 3; ++k) {
          o.log_reo_prev[k] = r ? safe_log10(r->prev[k]) : kLogThird;
          o.log_reo_next[k] = r ? safe_log10(r->next[k]) : kLogThird;
        }
        options.push_back(std::move(o));
      }
    }
    if (!single_covered) {
      // Unknown word: pass through verbatim with the fixed penalty feature.
      TranslationOption o;
      o.begin = i;
      o.end = i;
      o.target = {source[i]};
      for (int k = 0; k < 3; ++k) {
        o.log_reo_prev[k] = kLogThird;
        o.log_reo_next[k] = kLogThird;
      }
      o.oov = true;
      options.push_back(std::move(o));
    }
  }
  return options;
}

struct Coverage {
  uint64_t lo = 0, hi = 0;

  bool any_overlap(int begin, int end) const {
    for (int i = begin; i <= end; ++i)
      if (test(i)) return true;
    return false;
  }
  bool test(int i) const {
    return i < 64 ? (lo >> i) & 1 : (hi >> (i - 64)) & 1;
  }
  void set(int i) {
    if (i < 64)
      lo |= uint64_t(1) << i;
    else
      hi |= uint64_t(1) << (i - 64);
  }
  int count() const { return __builtin_popcountll(lo) + __builtin_popcountll(hi); }
};

}  // namespace detail

// LM score of a phrase with no outside context; used for future costs.
inline double context_free_lm_score(const lm::NGramModel& model,
                                    const std::vector<std::string>& target) {
  lm::LmState state;  // empty context
  double s = 0.0;
  for (const auto& tok : target) {
    uint32_t id = model.vocab.lookup(tok);
    s += lm::log_prob(model, id, state);
    model.advance(state, id);
  }
  return s;
}

// Best achievable weighted score per contiguous source span, combining
// translation options (phrase + context-free LM + word penalty + oov) over
// all split points.
inline std::vector<std::vector<double>> future_cost_table(
    const std::vector<std::string>& source,
    const std::vector<TranslationOption>& options, const lm::NGramModel& model,
    const DecoderConfig& config) {
  int n = int(source.size());
  const double kImpossible = -1e18;
  std::vector<std::vector<double>> best(n, std::vector<double>(n, kImpossible));
  const auto& w = config.weights;
  for (const auto& o : options) {
    double s = w.lambda[kPhiFe] * o.log_phrase[0] + w.lambda[kLexFe] * o.log_phrase[1] +
               w.lambda[kPhiEf] * o.log_phrase[2] + w.lambda[kLexEf] * o.log_phrase[3] +
               w.lambda[kLm] * context_free_lm_score(model, o.target) +
               w.lambda[kWordPenalty] * -double(o.target.size()) +
               w.lambda[kOov] * (o.oov ? -1.0 : 0.0);
    best[o.begin][o.end] = std::max(best[o.begin][o.end], s);
  }
  for (int len = 2; len <= n; ++len)
    for (int i = 0; i + len <= n; ++i) {
      int j = i + len - 1;
      for (int k = i; k < j; ++k)
        best[i][j] = std::max(best[i][j], best[i][k] + best[k + 1][j]);
    }
  return best;
}

struct DerivationStep {
  int s_begin = 0, s_end = 0;
  std::vector<std::string> target;
  Orientation orientation = Orientation::kMonotone;  // w.r.t. previous phrase
  FeatureVec features = zero_features();
};

struct DecodeResult {
  std::vector<std::string> target;
  double score = 0.0;
  FeatureVec features = zero_features();
  std::vector<DerivationStep> derivation;
};

namespace detail {

struct Edge {
  int pred = -1;        // -1 marks the initial hypothesis's pseudo-edge
  int option = -1;
  double delta_score = 0.0;
  FeatureVec delta = zero_features();
};

struct Hyp {
  Coverage cov;
  lm::LmState state;
  int last_begin = -1, last_end = -1;
  int last_option = -1;
  double score = 0.0;
  double future = 0.0;
  std::vector<Edge> edges;
  bool alive = true;
};

inline Orientation classify(int begin, int end, int prev_begin, int prev_end) {
  if (prev_end + 1 == begin) return Orientation::kMonotone;
  if (end + 1 == prev_begin) return Orientation::kSwap;
  return Orientation::kDiscontinuous;
}

struct SearchGraph {
  std::vector<Hyp> hyps;
  std::vector<TranslationOption> options;
  std::vector<Edge> goal_edges;  // pred = complete hypothesis, completion delta
  int source_len = 0;
};

inline SearchGraph run_search(const std::vector<std::string>& source,
                              const PhraseTable& table, const ReorderingTable& reordering,
                              const lm::NGramModel& model, const DecoderConfig& config) {
  if (source.empty()) fail("decode: empty source");
  int n = int(source.size());
  if (n > 128) fail("decode: source longer than 128 tokens");
  if (config.beam < 1) fail("decode: beam must be >= 1");

  SearchGraph g;
  g.source_len = n;
  g.options = detail::build_options(source, table, reordering, config.max_phrase_len);
  auto future = future_cost_table(source, g.options, model, config);
  const auto& w = config.weights;

  auto future_estimate = [&](const Coverage& cov) {
    double f = 0.0;
    int i = 0;
    while (i < n) {
      if (cov.test(i)) {
        ++i;
        continue;
      }
      int j = i;
      while (j + 1 < n && !cov.test(j + 1)) ++j;
      f += future[i][j];
      i = j + 1;
    }
    return f;
  };

  Hyp initial;
  initial.state = model.initial_state();
  initial.future = future_estimate(Coverage{});
  initial.edges.push_back(Edge{});
  g.hyps.push_back(std::move(initial));

  std::vector<std::vector<int>> stacks(n + 1);
  stacks[0].push_back(0);
  std::vector<std::unordered_map<std::string, int>> recomb(n + 1);

  auto recomb_key = [](const Hyp& h) {
    std::string key = h.state.key();
    auto add = [&key](uint64_t v) {
      for (int b = 0; b < 8; ++b) key.push_back(char((v >> (8 * b)) & 0xFF));
    };
    add(h.cov.lo);
    add(h.cov.hi);
    add(uint64_t(uint32_t(h.last_begin)));
    add((uint64_t(uint32_t(h.last_end)) << 32) | uint32_t(h.last_option + 1));
    return key;
  };

  for (int covered = 0; covered < n; ++covered) {
    auto& stack = stacks[covered];
    if (int(stack.size()) > config.beam) {
      std::sort(stack.begin(), stack.end(), [&](int a, int b) {
        double sa = g.hyps[a].score + g.hyps[a].future;
        double sb = g.hyps[b].score + g.hyps[b].future;
        if (sa != sb) return sa > sb;
        return a < b;
      });
      for (size_t k = config.beam; k < stack.size(); ++k) g.hyps[stack[k]].alive = false;
      stack.resize(config.beam);
    }
    for (int hi : stack) {
      // Index into g.hyps stays valid: we only append.
      for (size_t oi = 0; oi < g.options.size(); ++oi) {
        const auto& o = g.options[oi];
        const Hyp& h = g.hyps[hi];
        if (h.cov.any_overlap(o.begin, o.end)) continue;
        int jump = std::abs(o.begin - (h.last_end + 1));
        if (config.distortion_limit >= 0 && jump > config.distortion_limit) continue;

        Edge e;
        e.pred = hi;
        e.option = int(oi);
        for (int k = 0; k < 4; ++k) e.delta[kPhiFe + k] = o.log_phrase[k];
        lm::LmState state = h.state;
        double lm_score = 0.0;
        for (const auto& tok : o.target) {
          uint32_t id = model.vocab.lookup(tok);
          lm_score += lm::log_prob(model, id, state);
          model.advance(state, id);
        }
        e.delta[kLm] = lm_score;
        e.delta[kWordPenalty] = -double(o.target.size());
        e.delta[kDistortion] = -double(jump);
        Orientation orient = classify(o.begin, o.end, h.last_begin, h.last_end);
        e.delta[kReoPrevM + int(orient)] += o.log_reo_prev[int(orient)];
        if (h.last_option >= 0)
          e.delta[kReoNextM + int(orient)] +=
              g.options[h.last_option].log_reo_next[int(orient)];
        if (o.oov) e.delta[kOov] = -1.0;
        e.delta_score = w.dot(e.delta);

        Hyp next;
        next.cov = h.cov;
        for (int i = o.begin; i <= o.end; ++i) next.cov.set(i);
        next.state = std::move(state);
        next.last_begin = o.begin;
        next.last_end = o.end;
        next.last_option = int(oi);
        next.score = h.score + e.delta_score;
        next.edges.push_back(e);

        int dest = next.cov.count();
        std::string key = recomb_key(next);
        auto [it, inserted] = recomb[dest].try_emplace(key, int(g.hyps.size()));
        if (inserted) {
          next.future = future_estimate(next.cov);
          stacks[dest].push_back(int(g.hyps.size()));
          g.hyps.push_back(std::move(next));
        } else {
          Hyp& winner = g.hyps[it->second];
          winner.edges.push_back(e);
          if (next.score > winner.score) winner.score = next.score;
        }
      }
    }
  }

  for (int hi : stacks[n]) {
    const Hyp& h = g.hyps[hi];
    if (!h.alive) continue;
    Edge e;
    e.pred = hi;
    e.delta[kLm] = lm::log_prob(model, corpus::Vocabulary::kEndId, h.state);
    Orientation orient =
        h.last_end == n - 1 ? Orientation::kMonotone : Orientation::kDiscontinuous;
    if (h.last_option >= 0)
      e.delta[kReoNextM + int(orient)] += g.options[h.last_option].log_reo_next[int(orient)];
    e.delta_score = w.dot(e.delta);
    g.goal_edges.push_back(e);
  }

  if (g.goal_edges.empty()) {
    // Name an uncovered span of the most advanced hypothesis.
    int best_hyp = 0;
    for (size_t i = 1; i < g.hyps.size(); ++i) {
      const Hyp& h = g.hyps[i];
      const Hyp& b = g.hyps[best_hyp];
      if (h.cov.count() > b.cov.count() ||
          (h.cov.count() == b.cov.count() && h.score > b.score))
        best_hyp = int(i);
    }
    int a = -1, b = -1;
    for (int i = 0; i < n; ++i)
      if (!g.hyps[best_hyp].cov.test(i)) {
        if (a < 0) a = i;
        b = i;
      }
    fail("decode: no complete hypothesis; uncovered source span [", a, ",", b,
         "] (distortion limit ", config.distortion_limit, ")");
  }
  return g;
}

// Lazy k-best over the recombined graph. Rank-r derivations of a node are
// produced on demand from (edge, predecessor rank) candidates.
struct KBest {
  const SearchGraph& g;

  struct Cand {
    double score;
    int edge = 0;
    int pred_rank = 0;
  };
  struct Node {
    std::vector<Cand> found;
    std::vector<Cand> frontier;  // kept sorted worst-first for pop_back
    bool initialized = false;
  };
  std::vector<Node> nodes;       // per hypothesis
  Node goal;

  explicit KBest(const SearchGraph& graph) : g(graph), nodes(graph.hyps.size()) {}

  static bool cand_less(const Cand& a, const Cand& b) {
    if (a.score != b.score) return a.score < b.score;
    if (a.edge != b.edge) return a.edge > b.edge;
    return a.pred_rank > b.pred_rank;
  }

  void push(Node& node, Cand c) {
    auto it = std::upper_bound(node.frontier.begin(), node.frontier.end(), c, cand_less);
    node.frontier.insert(it, c);
  }

  const Cand* deriv(int hyp, int rank) {
    return deriv_impl(nodes[size_t(hyp)], g.hyps[size_t(hyp)].edges, rank, hyp >= 0);
  }

  const Cand* goal_deriv(int rank) {
    return deriv_impl(goal, g.goal_edges, rank, true);
  }

  const Cand* deriv_impl(Node& node, const std::vector<Edge>& edges, int rank, bool) {
    if (!node.initialized) {
      node.initialized = true;
      for (size_t e = 0; e < edges.size(); ++e) {
        const Edge& edge = edges[e];
        if (edge.pred < 0) {
          push(node, Cand{0.0, int(e), 0});  // initial hypothesis
        } else {
          const Cand* p = deriv(edge.pred, 0);
          if (p) push(node, Cand{p->score + edge.delta_score, int(e), 0});
        }
      }
    }
    while (int(node.found.size()) <= rank && !node.frontier.empty()) {
      Cand best = node.frontier.back();
      node.frontier.pop_back();
      node.found.push_back(best);
      const Edge& edge = edges[size_t(best.edge)];
      if (edge.pred >= 0) {
        const Cand* p = deriv(edge.pred, best.pred_rank + 1);
        if (p)
          push(node, Cand{p->score + edge.delta_score, best.edge, best.pred_rank + 1});
      }
    }
    return int(node.found.size()) > rank ? &node.found[size_t(rank)] : nullptr;
  }

  // Expand a goal derivation into ordered steps.
  void walk(int hyp, int rank, std::vector<std::pair<const Edge*, int>>& chain) {
    const Cand* c = deriv(hyp, rank);
    const Edge& edge = g.hyps[size_t(hyp)].edges[size_t(c->edge)];
    if (edge.pred >= 0) {
      walk(edge.pred, c->pred_rank, chain);
      chain.push_back({&edge, hyp});
    }
  }
};

inline DecodeResult assemble(const SearchGraph& g, KBest& kb, int goal_rank) {
  const KBest::Cand* top = kb.goal_deriv(goal_rank);
  const Edge& goal_edge = g.goal_edges[size_t(top->edge)];
  std::vector<std::pair<const Edge*, int>> chain;
  kb.walk(goal_edge.pred, top->pred_rank, chain);

  DecodeResult r;
  r.score = top->score;
  int prev_begin = -1, prev_end = -1;
  for (auto [edge, hyp] : chain) {
    (void)hyp;
    const TranslationOption& o = g.options[size_t(edge->option)];
    DerivationStep step;
    step.s_begin = o.begin;
    step.s_end = o.end;
    step.target = o.target;
    step.orientation = classify(o.begin, o.end, prev_begin, prev_end);
    step.features = edge->delta;
    for (int k = 0; k < kNumFeatures; ++k) r.features[k] += edge->delta[k];
    for (const auto& tok : o.target) r.target.push_back(tok);
    r.derivation.push_back(std::move(step));
    prev_begin = o.begin;
    prev_end = o.end;
  }
  for (int k = 0; k < kNumFeatures; ++k) r.features[k] += goal_edge.delta[k];
  return r;
}

}  // namespace detail

inline DecodeResult decode(const std::vector<std::string>& source,
                           const PhraseTable& table, const ReorderingTable& reordering,
                           const lm::NGramModel& model, const DecoderConfig& config) {
  auto graph = detail::run_search(source, table, reordering, model, config);
  detail::KBest kb(graph);
  DecodeResult best = detail::assemble(graph, kb, 0);
  // Deterministic tie-break among equal-score goal derivations: lexicographic
  // target, then the assembly order. Plateau scan is capped.
  for (int rank = 1; rank <= 1000; ++rank) {
    const auto* cand = kb.goal_deriv(rank);
    if (!cand || cand->score < best.score - 1e-12) break;
    DecodeResult alt = detail::assemble(graph, kb, rank);
    if (join(alt.target) < join(best.target)) best = std::move(alt);
  }
  return best;
}

inline std::vector<std::pair<std::vector<std::string>, double>> nbest(
    const std::vector<std::string>& source, const PhraseTable& table,
    const ReorderingTable& reordering, const lm::NGramModel& model,
    const DecoderConfig& config, int n) {
  if (n < 1) fail("nbest: n must be >= 1");
  auto graph = detail::run_search(source, table, reordering, model, config);
  detail::KBest kb(graph);

  std::vector<std::pair<std::vector<std::string>, double>> out;
  std::unordered_map<std::string, char> seen;
  std::vector<std::pair<std::string, int>> tied;  // outputs at the current score
  double tied_score = 0.0;
  auto flush_tied = [&]() {
    std::sort(tied.begin(), tied.end());
    for (auto& [key, rank] : tied) {
      if (int(out.size()) >= n) break;
      if (seen.count(key)) continue;
      seen.emplace(key, 1);
      out.push_back({detail::assemble(graph, kb, rank).target, tied_score});
    }
    tied.clear();
  };

  for (int rank = 0;; ++rank) {
    const auto* cand = kb.goal_deriv(rank);
    if (!cand) break;
    if (!tied.empty() && (cand->score < tied_score - 1e-12 || tied.size() > 5000)) {
      flush_tied();
      if (int(out.size()) >= n) break;
    }
    if (tied.empty()) tied_score = cand->score;
    DecodeResult r = detail::assemble(graph, kb, rank);
    std::string key = join(r.target);
    if (!seen.count(key)) tied.push_back({key, rank});
  }
  flush_tied();
  return out;
}

}  // namespace mtlab::decoder
