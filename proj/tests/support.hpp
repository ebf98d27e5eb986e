// Shared test-side oracles and fixtures: independent of the library code
// paths they check. Used by the unit suites and the acceptance binary.
#pragma once

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "mtlab/decoder.hpp"
#include "mtlab/neural.hpp"

namespace mtlab::testsupport {

inline lm::NGramModel tiny_lm(const std::vector<std::string>& lines, int order = 2) {
  corpus::ParallelCorpus c;
  for (size_t i = 0; i < lines.size(); ++i) {
    corpus::SentencePair p;
    p.id = int(i);
    p.source = split_ws(lines[i]);
    p.target = p.source;
    c.pairs.push_back(std::move(p));
  }
  auto vocab = corpus::build_vocab(c, corpus::Side::kSource);
  std::vector<std::vector<std::string>> sentences;
  for (const auto& l : lines) sentences.push_back(split_ws(l));
  return lm::train_lm(sentences, vocab, order);
}

// ---------------------------------------------------------------------------
// Exhaustive decoding oracle: enumerates every segmentation, ordering, and
// phrase choice, scoring directly from the tables (log10 features).

struct OracleOption {
  int begin, end;
  std::vector<std::string> target;
  double log_phrase[4];
  double reo_prev[3], reo_next[3];
  bool oov;
};

struct DecodeOracle {
  std::vector<std::string> source;  // by value: callers may pass temporaries
  const lm::NGramModel& model;
  const decoder::Weights& weights;
  std::vector<OracleOption> options;
  std::map<std::string, double> best_by_output;
  double best = -1e300;

  DecodeOracle(const std::vector<std::string>& src, const align::PhraseTable& table,
               const align::ReorderingTable& reorder, const lm::NGramModel& lm_model,
               const decoder::Weights& w, int max_phrase_len)
      : source(src), model(lm_model), weights(w) {
    int n = int(src.size());
    const double third = std::log10(1.0 / 3.0);
    for (int i = 0; i < n; ++i) {
      bool single = false;
      for (int len = 1; len <= std::min(max_phrase_len, n - i); ++len) {
        std::vector<std::string> span(src.begin() + i, src.begin() + i + len);
        auto sit = table.entries.find(join(span));
        if (sit == table.entries.end()) continue;
        if (len == 1) single = true;
        for (const auto& [tgt, s] : sit->second) {
          OracleOption o;
          o.begin = i;
          o.end = i + len - 1;
          o.target = split_ws(tgt);
          o.log_phrase[0] = std::log10(s.phi_src_given_tgt);
          o.log_phrase[1] = std::log10(s.lex_src_given_tgt);
          o.log_phrase[2] = std::log10(s.phi_tgt_given_src);
          o.log_phrase[3] = std::log10(s.lex_tgt_given_src);
          const auto* r = reorder.find(join(span), tgt);
          for (int k = 0; k < 3; ++k) {
            o.reo_prev[k] = r ? std::log10(r->prev[k]) : third;
            o.reo_next[k] = r ? std::log10(r->next[k]) : third;
          }
          o.oov = false;
          options.push_back(std::move(o));
        }
      }
      if (!single) {
        OracleOption o;
        o.begin = i;
        o.end = i;
        o.target = {src[i]};
        for (int k = 0; k < 4; ++k) o.log_phrase[k] = 0.0;
        for (int k = 0; k < 3; ++k) {
          o.reo_prev[k] = third;
          o.reo_next[k] = third;
        }
        o.oov = true;
        options.push_back(std::move(o));
      }
    }
  }

  static int orient(int begin, int end, int prev_begin, int prev_end) {
    if (prev_end + 1 == begin) return 0;  // M
    if (end + 1 == prev_begin) return 1;  // S
    return 2;                             // D
  }

  void search(uint32_t coverage, const lm::LmState& state, int prev_begin, int prev_end,
              const OracleOption* prev_opt, double score, const std::string& output) {
    int n = int(source.size());
    if (coverage == (uint32_t(1) << n) - 1) {
      double total = score + weights.lambda[decoder::kLm] *
                                 lm::log_prob(model, corpus::Vocabulary::kEndId, state);
      int o_end = prev_end == n - 1 ? 0 : 2;
      if (prev_opt)
        total += weights.lambda[decoder::kReoNextM + o_end] * prev_opt->reo_next[o_end];
      best = std::max(best, total);
      auto it = best_by_output.find(output);
      if (it == best_by_output.end())
        best_by_output.emplace(output, total);
      else
        it->second = std::max(it->second, total);
      return;
    }
    for (const auto& o : options) {
      bool overlap = false;
      for (int i = o.begin; i <= o.end; ++i)
        if (coverage & (uint32_t(1) << i)) overlap = true;
      if (overlap) continue;
      double delta = 0.0;
      for (int k = 0; k < 4; ++k)
        delta += weights.lambda[decoder::kPhiFe + k] * o.log_phrase[k];
      lm::LmState st = state;
      double lm_score = 0.0;
      for (const auto& tok : o.target) {
        uint32_t id = model.vocab.lookup(tok);
        lm_score += lm::log_prob(model, id, st);
        model.advance(st, id);
      }
      delta += weights.lambda[decoder::kLm] * lm_score;
      delta += weights.lambda[decoder::kWordPenalty] * -double(o.target.size());
      delta += weights.lambda[decoder::kDistortion] * -std::abs(o.begin - (prev_end + 1));
      int orientation = orient(o.begin, o.end, prev_begin, prev_end);
      delta += weights.lambda[decoder::kReoPrevM + orientation] * o.reo_prev[orientation];
      if (prev_opt)
        delta += weights.lambda[decoder::kReoNextM + orientation] *
                 prev_opt->reo_next[orientation];
      if (o.oov) delta += weights.lambda[decoder::kOov] * -1.0;
      uint32_t cov = coverage;
      for (int i = o.begin; i <= o.end; ++i) cov |= uint32_t(1) << i;
      std::string out = output.empty() ? join(o.target)
                                       : (o.target.empty() ? output
                                                           : output + " " + join(o.target));
      search(cov, st, o.begin, o.end, &o, score + delta, out);
    }
  }

  void run() {
    lm::LmState state = model.initial_state();
    search(0, state, -1, -1, nullptr, 0.0, "");
  }
};

struct DecodeInstance {
  std::vector<std::string> source;
  align::PhraseTable table;
  align::ReorderingTable reorder;
  decoder::Weights weights;
};

inline DecodeInstance random_decode_instance(Rng& rng, int max_source_len) {
  DecodeInstance inst;
  int n = 1 + int(rng.below(uint32_t(max_source_len)));
  for (int i = 0; i < n; ++i) inst.source.push_back(msg("s", rng.below(4)));
  std::vector<std::string> tgt_pool = {"u", "v", "w"};
  for (int i = 0; i < n; ++i) {
    for (int len = 1; len <= std::min(2, n - i); ++len) {
      std::vector<std::string> span(inst.source.begin() + i,
                                    inst.source.begin() + i + len);
      std::string key = join(span);
      if (rng.uniform01() < 0.35) continue;  // leave some spans uncovered
      int n_options = 1 + int(rng.below(3));
      for (int k = 0; k < n_options; ++k) {
        int tlen = 1 + int(rng.below(2));
        std::vector<std::string> target;
        for (int t = 0; t < tlen; ++t) target.push_back(tgt_pool[rng.below(3)]);
        align::PhraseScores s;
        s.phi_src_given_tgt = 0.05 + 0.95 * rng.uniform01();
        s.lex_src_given_tgt = 0.05 + 0.95 * rng.uniform01();
        s.phi_tgt_given_src = 0.05 + 0.95 * rng.uniform01();
        s.lex_tgt_given_src = 0.05 + 0.95 * rng.uniform01();
        inst.table.entries[key][join(target)] = s;
        align::OrientationProbs probs;
        double pm = 0.1 + rng.uniform01(), ps = 0.1 + rng.uniform01(),
               pd = 0.1 + rng.uniform01();
        double tot = pm + ps + pd;
        probs.prev[0] = pm / tot;
        probs.prev[1] = ps / tot;
        probs.prev[2] = pd / tot;
        double nm = 0.1 + rng.uniform01(), ns = 0.1 + rng.uniform01(),
               nd = 0.1 + rng.uniform01();
        tot = nm + ns + nd;
        probs.next[0] = nm / tot;
        probs.next[1] = ns / tot;
        probs.next[2] = nd / tot;
        inst.reorder.entries[key][join(target)] = probs;
      }
    }
  }
  for (int k = 0; k < decoder::kNumFeatures; ++k)
    inst.weights.lambda[k] = 0.2 + 1.8 * rng.uniform01();
  return inst;
}

// ---------------------------------------------------------------------------
// Gradient check: central finite differences vs the analytic gradient.
// Relative error with an absolute floor so near-zero entries compare
// absolutely.

inline double max_grad_rel_error(neural::Seq2SeqParams& params,
                                 const std::vector<uint32_t>& src,
                                 const std::vector<uint32_t>& tgt,
                                 neural::Variant variant, double eps = 1e-5) {
  auto bw = neural::backward(params, src, tgt, variant);
  auto g_tensors = bw.grads.tensors();
  auto p_tensors = params.tensors();
  double worst = 0.0;
  for (size_t t = 0; t < p_tensors.size(); ++t) {
    auto& pv = *p_tensors[t].second;
    const auto& gv = *g_tensors[t].second;
    for (size_t k = 0; k < pv.size(); ++k) {
      double saved = pv[k];
      pv[k] = saved + eps;
      double up = neural::forward_loss(params, src, tgt, variant).loss;
      pv[k] = saved - eps;
      double down = neural::forward_loss(params, src, tgt, variant).loss;
      pv[k] = saved;
      double numeric = (up - down) / (2.0 * eps);
      double denom = std::max(std::abs(gv[k]) + std::abs(numeric), 1e-5);
      worst = std::max(worst, std::abs(gv[k] - numeric) / denom);
    }
  }
  return worst;
}

// Brute-force phrase extraction over every span combination.
inline std::set<std::tuple<int, int, int, int>> oracle_extract(
    const corpus::SentencePair& pair, const align::AlignmentMatrix& a, int max_len) {
  std::set<std::tuple<int, int, int, int>> out;
  int n = int(pair.source.size()), m = int(pair.target.size());
  for (int i1 = 0; i1 < n; ++i1)
    for (int i2 = i1; i2 < std::min(n, i1 + max_len); ++i2)
      for (int j1 = 0; j1 < m; ++j1)
        for (int j2 = j1; j2 < std::min(m, j1 + max_len); ++j2) {
          bool any_point = false;
          bool consistent = true;
          for (const auto& [i, j] : a.points) {
            bool in_src = i >= i1 && i <= i2;
            bool in_tgt = j >= j1 && j <= j2;
            if (in_src != in_tgt) consistent = false;
            if (in_src && in_tgt) any_point = true;
          }
          if (consistent && any_point) out.insert({i1, i2, j1, j2});
        }
  return out;
}

}  // namespace mtlab::testsupport
