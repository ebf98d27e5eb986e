// Experiment harness: prepares data, trains SMT and both neural systems per
// direction, translates the held-out set, scores with all four metrics, and
// renders the comparison table. All stages are seeded and single-threaded so
// reruns reproduce every artifact byte for byte.
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtlab/align.hpp"
#include "mtlab/common.hpp"
#include "mtlab/corpus.hpp"
#include "mtlab/decoder.hpp"
#include "mtlab/lm.hpp"
#include "mtlab/metrics.hpp"
#include "mtlab/neural.hpp"
#include "mtlab/phrase.hpp"

namespace mtlab::bench {

using json = nlohmann::json;
using metrics::MetricReport;

// ---------------------------------------------------------------------------
// Config

struct NeuralSystemConfig {
  neural::TrainConfig train;
  int beam = 0;  // 0 = greedy
  int max_out_len = 60;
};

struct SmtConfig {
  int lm_order = 5;
  int em_iterations = 10;
  int max_phrase_len = 7;
  decoder::DecoderConfig decoder;
};

struct ExperimentConfig {
  std::string source_path;
  std::string target_path;
  std::string source_lang = "src";
  std::string target_lang = "tgt";
  bool forward = true;   // source_lang -> target_lang
  bool reverse = false;  // target_lang -> source_lang
  std::vector<std::string> systems = {"smt", "endec", "search"};
  std::string out_dir = "out";
  uint64_t seed = 1;
  size_t clean_max_len = 80;
  double clean_max_ratio = 9.0;
  corpus::SplitSpec split;
  uint64_t vocab_min_count = 1;
  SmtConfig smt;
  NeuralSystemConfig endec;
  NeuralSystemConfig search;
};

inline decoder::Weights parse_weights(const json& j) {
  decoder::Weights w;
  const auto& names = decoder::feature_names();
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (int k = 0; k < decoder::kNumFeatures; ++k)
      if (it.key() == names[k]) {
        w.lambda[k] = it.value().get<double>();
        known = true;
      }
    if (!known) fail("unknown decoder weight: ", it.key());
  }
  return w;
}

inline NeuralSystemConfig parse_neural_config(const json& j, neural::Variant variant,
                                              uint64_t seed) {
  NeuralSystemConfig c;
  c.train.variant = variant;
  c.train.seed = seed;
  if (j.contains("hidden")) c.train.hidden = j["hidden"].get<int>();
  if (j.contains("embed")) c.train.embed = j["embed"].get<int>();
  if (j.contains("max_updates")) c.train.max_updates = j["max_updates"].get<int>();
  if (j.contains("batch_size")) c.train.batch_size = j["batch_size"].get<int>();
  if (j.contains("learning_rate")) c.train.learning_rate = j["learning_rate"].get<double>();
  if (j.contains("clip_norm")) c.train.clip_norm = j["clip_norm"].get<double>();
  if (j.contains("max_sentence_len"))
    c.train.max_sentence_len = j["max_sentence_len"].get<size_t>();
  if (j.contains("seed")) c.train.seed = j["seed"].get<uint64_t>();
  if (j.contains("beam")) c.beam = j["beam"].get<int>();
  if (j.contains("max_out_len")) c.max_out_len = j["max_out_len"].get<int>();
  return c;
}

inline ExperimentConfig parse_config(const json& j) {
  ExperimentConfig c;
  if (!j.contains("source_path") || !j.contains("target_path"))
    fail("config: source_path and target_path are required");
  c.source_path = j["source_path"].get<std::string>();
  c.target_path = j["target_path"].get<std::string>();
  if (j.contains("source_lang")) c.source_lang = j["source_lang"].get<std::string>();
  if (j.contains("target_lang")) c.target_lang = j["target_lang"].get<std::string>();
  if (j.contains("directions")) {
    c.forward = false;
    c.reverse = false;
    for (const auto& d : j["directions"]) {
      std::string name = d.get<std::string>();
      if (name == "forward")
        c.forward = true;
      else if (name == "reverse")
        c.reverse = true;
      else
        fail("config: direction must be \"forward\" or \"reverse\", got ", name);
    }
  }
  if (!c.forward && !c.reverse) fail("config: no direction enabled");
  if (j.contains("systems")) {
    c.systems.clear();
    for (const auto& s : j["systems"]) {
      std::string name = s.get<std::string>();
      if (name != "smt" && name != "endec" && name != "search")
        fail("config: unknown system ", name);
      c.systems.push_back(name);
    }
  }
  if (c.systems.empty()) fail("config: no system enabled");
  if (j.contains("out_dir")) c.out_dir = j["out_dir"].get<std::string>();
  if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
  if (j.contains("clean")) {
    const auto& cl = j["clean"];
    if (cl.contains("max_len")) c.clean_max_len = cl["max_len"].get<size_t>();
    if (cl.contains("max_ratio")) c.clean_max_ratio = cl["max_ratio"].get<double>();
  }
  c.split.seed = c.seed;
  if (j.contains("split")) {
    const auto& sp = j["split"];
    if (sp.contains("test_size")) c.split.test_size = sp["test_size"].get<size_t>();
    if (sp.contains("max_test_sentence_words"))
      c.split.max_test_sentence_words = sp["max_test_sentence_words"].get<size_t>();
    if (sp.contains("seed")) c.split.seed = sp["seed"].get<uint64_t>();
  }
  if (j.contains("vocab_min_count"))
    c.vocab_min_count = j["vocab_min_count"].get<uint64_t>();
  if (j.contains("smt")) {
    const auto& sm = j["smt"];
    if (sm.contains("lm_order")) c.smt.lm_order = sm["lm_order"].get<int>();
    if (sm.contains("em_iterations")) c.smt.em_iterations = sm["em_iterations"].get<int>();
    if (sm.contains("max_phrase_len")) c.smt.max_phrase_len = sm["max_phrase_len"].get<int>();
    if (sm.contains("decoder")) {
      const auto& dc = sm["decoder"];
      if (dc.contains("beam")) c.smt.decoder.beam = dc["beam"].get<int>();
      if (dc.contains("distortion_limit"))
        c.smt.decoder.distortion_limit = dc["distortion_limit"].get<int>();
      if (dc.contains("weights")) c.smt.decoder.weights = parse_weights(dc["weights"]);
    }
  }
  c.smt.decoder.max_phrase_len = c.smt.max_phrase_len;
  c.endec = parse_neural_config(j.contains("neural") && j["neural"].contains("endec")
                                    ? j["neural"]["endec"]
                                    : json::object(),
                                neural::Variant::kEndec, c.seed + 101);
  c.search = parse_neural_config(j.contains("neural") && j["neural"].contains("search")
                                     ? j["neural"]["search"]
                                     : json::object(),
                                 neural::Variant::kSearch, c.seed + 202);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open config ", path);
  json j;
  in >> j;
  return parse_config(j);
}

// ---------------------------------------------------------------------------
// Score table and reports

struct ScoreTable {
  // direction label ("pl-en") -> system ("smt") -> report
  std::map<std::string, std::map<std::string, MetricReport>> cells;
};

inline json report_to_json(const MetricReport& r) {
  json j;
  j["bleu"] = r.bleu;
  j["nist_raw"] = r.nist_raw;
  j["nist_scaled"] = r.nist_scaled;
  j["meteor"] = r.meteor;
  j["ter"] = r.ter;
  j["bleu_band"] = r.bleu_band;
  json bp;
  bp["match"] = r.bleu_parts.match;
  bp["total"] = r.bleu_parts.total;
  bp["weights"] = r.bleu_parts.weights;
  bp["candidate_length"] = r.bleu_parts.candidate_length;
  bp["reference_length"] = r.bleu_parts.reference_length;
  bp["brevity_penalty"] = r.bleu_parts.brevity_penalty;
  j["components"]["bleu"] = bp;
  json np;
  np["info_sum"] = r.nist_parts.info_sum;
  np["total"] = r.nist_parts.total;
  np["hyp_length"] = r.nist_parts.hyp_length;
  np["ref_length"] = r.nist_parts.ref_length;
  np["brevity"] = r.nist_parts.brevity;
  j["components"]["nist"] = np;
  json mp;
  mp["matches"] = r.meteor_parts.matches;
  mp["chunks"] = r.meteor_parts.chunks;
  mp["hyp_length"] = r.meteor_parts.hyp_length;
  mp["ref_length"] = r.meteor_parts.ref_length;
  mp["precision"] = r.meteor_parts.precision;
  mp["recall"] = r.meteor_parts.recall;
  mp["fmean"] = r.meteor_parts.fmean;
  mp["penalty"] = r.meteor_parts.penalty;
  j["components"]["meteor"] = mp;
  json tp;
  tp["edits"] = r.ter_parts.edits;
  tp["shifts"] = r.ter_parts.shifts;
  tp["ref_length"] = r.ter_parts.ref_length;
  j["components"]["ter"] = tp;
  return j;
}

inline MetricReport report_from_json(const json& j) {
  MetricReport r;
  r.bleu = j.at("bleu").get<double>();
  r.nist_raw = j.at("nist_raw").get<double>();
  r.nist_scaled = j.at("nist_scaled").get<double>();
  r.meteor = j.at("meteor").get<double>();
  r.ter = j.at("ter").get<double>();
  r.bleu_band = j.at("bleu_band").get<std::string>();
  if (j.contains("components")) {
    const auto& c = j["components"];
    if (c.contains("bleu")) {
      const auto& bp = c["bleu"];
      r.bleu_parts.match = bp.at("match").get<std::vector<uint64_t>>();
      r.bleu_parts.total = bp.at("total").get<std::vector<uint64_t>>();
      r.bleu_parts.weights = bp.at("weights").get<std::vector<double>>();
      r.bleu_parts.candidate_length = bp.at("candidate_length").get<uint64_t>();
      r.bleu_parts.reference_length = bp.at("reference_length").get<uint64_t>();
      r.bleu_parts.brevity_penalty = bp.at("brevity_penalty").get<double>();
      r.bleu_parts.score = r.bleu;
      r.bleu_parts.max_order = r.bleu_parts.match.size();
    }
    if (c.contains("nist")) {
      const auto& np = c["nist"];
      r.nist_parts.info_sum = np.at("info_sum").get<std::vector<double>>();
      r.nist_parts.total = np.at("total").get<std::vector<uint64_t>>();
      r.nist_parts.hyp_length = np.at("hyp_length").get<uint64_t>();
      r.nist_parts.ref_length = np.at("ref_length").get<uint64_t>();
      r.nist_parts.brevity = np.at("brevity").get<double>();
      r.nist_parts.score = r.nist_raw;
      r.nist_parts.max_order = r.nist_parts.total.size();
    }
    if (c.contains("meteor")) {
      const auto& mp = c["meteor"];
      r.meteor_parts = metrics::meteor_from_counts(
          mp.at("matches").get<uint64_t>(), mp.at("chunks").get<uint64_t>(),
          mp.at("hyp_length").get<uint64_t>(), mp.at("ref_length").get<uint64_t>());
    }
    if (c.contains("ter")) {
      const auto& tp = c["ter"];
      r.ter_parts.edits = tp.at("edits").get<uint64_t>();
      r.ter_parts.shifts = tp.at("shifts").get<uint64_t>();
      r.ter_parts.ref_length = tp.at("ref_length").get<uint64_t>();
      r.ter_parts.score = r.ter;
    }
  }
  return r;
}

// Build a report from bare table values (e.g. published numbers); the NIST
// value is taken as the scaled 0-100 column.
inline MetricReport report_from_values(double bleu, double nist_scaled, double meteor,
                                       double ter) {
  MetricReport r;
  r.bleu = bleu;
  r.nist_scaled = nist_scaled;
  r.nist_raw = nist_scaled * 15.0 / 100.0;
  r.meteor = meteor;
  r.ter = ter;
  r.bleu_band = metrics::interpret_bleu(bleu);
  return r;
}

inline json table_to_json(const ScoreTable& table) {
  json j;
  for (const auto& [dir, row] : table.cells)
    for (const auto& [sys, report] : row) j[dir][sys] = report_to_json(report);
  return j;
}

inline ScoreTable table_from_json(const json& j) {
  ScoreTable t;
  for (auto dit = j.begin(); dit != j.end(); ++dit)
    for (auto sit = dit.value().begin(); sit != dit.value().end(); ++sit)
      t.cells[dit.key()][sit.key()] = report_from_json(sit.value());
  return t;
}

namespace detail {

inline std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline std::string pad(const std::string& s, size_t width) {
  std::string out = s;
  while (out.size() < width) out.push_back(' ');
  return out;
}

}  // namespace detail

// Text mode: one block per direction, systems as rows, the four metrics as
// columns (NIST scaled with raw in parentheses), plus the BLEU band.
inline std::string render_report(const ScoreTable& table, const std::string& format) {
  if (format == "json") return table_to_json(table).dump(2) + "\n";
  if (format != "text") fail("render_report: format must be text or json");
  static const std::vector<std::pair<std::string, std::string>> kSystems = {
      {"smt", "SMT"}, {"endec", "ENDEC"}, {"search", "SEARCH"}};
  std::string out;
  for (const auto& [dir, row] : table.cells) {
    out += "Direction " + dir + "\n";
    out += detail::pad("System", 8) + detail::pad("BLEU", 8) +
           detail::pad("NIST", 16) + detail::pad("METEOR", 8) +
           detail::pad("TER", 8) + "BLEU band\n";
    for (const auto& [key, label] : kSystems) {
      auto it = row.find(key);
      if (it == row.end()) continue;
      const MetricReport& r = it->second;
      out += detail::pad(label, 8) + detail::pad(detail::fixed2(r.bleu), 8) +
             detail::pad(detail::fixed2(r.nist_scaled) + " (" +
                             detail::fixed2(r.nist_raw) + ")",
                         16) +
             detail::pad(detail::fixed2(r.meteor), 8) +
             detail::pad(detail::fixed2(r.ter), 8) + r.bleu_band + "\n";
    }
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scoring files

inline std::vector<std::vector<std::string>> read_tokenized(const std::string& path) {
  std::vector<std::vector<std::string>> out;
  for (const auto& line : corpus::read_lines(path)) out.push_back(split_ws(line));
  return out;
}

inline MetricReport score_outputs(const std::string& hyp_path, const std::string& ref_path) {
  auto hyps = read_tokenized(hyp_path);
  auto refs = read_tokenized(ref_path);
  if (hyps.size() != refs.size())
    fail("score_outputs: ", hyp_path, " has ", hyps.size(), " lines, ", ref_path,
         " has ", refs.size());
  return metrics::score_corpus(hyps, refs);
}

// ---------------------------------------------------------------------------
// Pipeline

namespace detail {

struct DirectionData {
  std::string label;     // e.g. "pl-en"
  std::string tgt_lang;  // reference side for scoring
  // source/target of this direction, train and test
  std::vector<std::vector<std::string>> train_src, train_tgt, test_src, test_tgt;
};

inline corpus::ParallelCorpus make_corpus(const std::vector<std::vector<std::string>>& src,
                                          const std::vector<std::vector<std::string>>& tgt) {
  corpus::ParallelCorpus c;
  for (size_t i = 0; i < src.size(); ++i) {
    corpus::SentencePair p;
    p.id = int(i);
    p.source = src[i];
    p.target = tgt[i];
    c.pairs.push_back(std::move(p));
  }
  return c;
}

inline void write_lines(const std::string& path,
                        const std::vector<std::vector<std::string>>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write ", path);
  for (const auto& tokens : lines) out << join(tokens) << '\n';
}

template <typename Fn>
auto stage(const std::string& name, Fn&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    throw Error(msg("stage ", name, ": ", e.what()));
  }
}

}  // namespace detail

struct PipelineResult {
  ScoreTable table;
  std::string report_text;
};

inline PipelineResult run_pipeline(const ExperimentConfig& config) {
  namespace fs = std::filesystem;
  fs::create_directories(config.out_dir);
  auto out_path = [&](const std::string& name) {
    return (fs::path(config.out_dir) / name).string();
  };

  // prepare: load, tokenize, clean, split
  corpus::ParallelCorpus cleaned;
  size_t removed = 0;
  detail::stage("prepare", [&] {
    auto raw = corpus::load_parallel(config.source_path, config.target_path);
    raw.source_lang = config.source_lang;
    raw.target_lang = config.target_lang;
    corpus::tokenize_corpus(raw);
    auto clean = corpus::clean_corpus(raw, config.clean_max_len, config.clean_max_ratio);
    cleaned = std::move(clean.corpus);
    removed = clean.removed;
    return 0;
  });
  corpus::SplitResult split;
  detail::stage("split", [&] {
    split = corpus::split_corpus(cleaned, config.split);
    corpus::write_side(split.train, corpus::Side::kSource, out_path("train." + config.source_lang));
    corpus::write_side(split.train, corpus::Side::kTarget, out_path("train." + config.target_lang));
    corpus::write_side(split.test, corpus::Side::kSource, out_path("test." + config.source_lang));
    corpus::write_side(split.test, corpus::Side::kTarget, out_path("test." + config.target_lang));
    auto stats = corpus::corpus_stats(cleaned);
    json js;
    js["sentences"] = stats.sentences;
    js["source_tokens"] = stats.source_tokens;
    js["target_tokens"] = stats.target_tokens;
    js["source_unique"] = stats.source_unique;
    js["target_unique"] = stats.target_unique;
    js["removed_by_cleaning"] = removed;
    js["train_pairs"] = split.train.pairs.size();
    js["test_pairs"] = split.test.pairs.size();
    std::ofstream st(out_path("corpus.stats.json"), std::ios::binary);
    st << js.dump(2) << "\n";
    return 0;
  });

  std::vector<detail::DirectionData> directions;
  auto side_tokens = [](const corpus::ParallelCorpus& c, corpus::Side side) {
    std::vector<std::vector<std::string>> out;
    out.reserve(c.pairs.size());
    for (const auto& p : c.pairs)
      out.push_back(side == corpus::Side::kSource ? p.source : p.target);
    return out;
  };
  auto train_src = side_tokens(split.train, corpus::Side::kSource);
  auto train_tgt = side_tokens(split.train, corpus::Side::kTarget);
  auto test_src = side_tokens(split.test, corpus::Side::kSource);
  auto test_tgt = side_tokens(split.test, corpus::Side::kTarget);
  if (config.forward)
    directions.push_back({config.source_lang + "-" + config.target_lang,
                          config.target_lang, train_src, train_tgt, test_src, test_tgt});
  if (config.reverse)
    directions.push_back({config.target_lang + "-" + config.source_lang,
                          config.source_lang, train_tgt, train_src, test_tgt, test_src});

  ScoreTable table;
  bool want_smt = false, want_endec = false, want_search = false;
  for (const auto& s : config.systems) {
    want_smt |= s == "smt";
    want_endec |= s == "endec";
    want_search |= s == "search";
  }

  for (const auto& dir : directions) {
    corpus::ParallelCorpus train_corpus = detail::make_corpus(dir.train_src, dir.train_tgt);

    if (want_smt) {
      lm::NGramModel model;
      detail::stage("train-lm " + dir.label, [&] {
        auto vocab = corpus::build_vocab(train_corpus, corpus::Side::kTarget,
                                         config.vocab_min_count);
        model = lm::train_lm(dir.train_tgt, vocab, config.smt.lm_order);
        lm::save_lm(model, out_path("lm." + dir.label + ".plm"));
        return 0;
      });
      align::PhraseTable phrase_table;
      align::ReorderingTable reordering;
      detail::stage("align " + dir.label, [&] {
        auto fwd_table = align::train_ibm1(train_corpus, config.smt.em_iterations);
        corpus::ParallelCorpus swapped = detail::make_corpus(dir.train_tgt, dir.train_src);
        auto rev_table = align::train_ibm1(swapped, config.smt.em_iterations);

        std::ofstream align_out(out_path("align." + dir.label + ".txt"), std::ios::binary);
        std::vector<align::SentenceExtraction> extractions;
        for (const auto& p : train_corpus.pairs) {
          auto fwd = align::viterbi_align(fwd_table, p, align::Direction::kForward);
          auto rev = align::viterbi_align(rev_table, p, align::Direction::kReverse);
          auto sym = align::grow_diag_final(fwd, rev);
          align_out << align::format_alignment(sym) << '\n';
          align::SentenceExtraction ext;
          ext.alignment = sym;
          ext.phrases = align::extract_phrases(p, sym, config.smt.max_phrase_len);
          extractions.push_back(std::move(ext));
        }
        phrase_table = align::score_phrases(extractions, fwd_table, rev_table);
        reordering = align::train_reordering(extractions);
        align::save_phrase_table(phrase_table, out_path("phrase-table." + dir.label + ".txt"));
        align::save_reordering_table(reordering,
                                     out_path("reordering-table." + dir.label + ".txt"));
        return 0;
      });
      detail::stage("decode " + dir.label, [&] {
        std::vector<std::vector<std::string>> hyps;
        for (const auto& src : dir.test_src)
          hyps.push_back(src.empty()
                             ? std::vector<std::string>{}
                             : decoder::decode(src, phrase_table, reordering, model,
                                               config.smt.decoder)
                                   .target);
        detail::write_lines(out_path("hyp.smt." + dir.label + ".txt"), hyps);
        return 0;
      });
    }

    auto run_neural = [&](const char* name, const NeuralSystemConfig& nc) {
      detail::stage(msg("train-neural ", name, " ", dir.label), [&] {
        auto src_vocab = corpus::build_vocab(train_corpus, corpus::Side::kSource,
                                             config.vocab_min_count);
        auto tgt_vocab = corpus::build_vocab(train_corpus, corpus::Side::kTarget,
                                             config.vocab_min_count);
        std::vector<std::pair<std::vector<uint32_t>, std::vector<uint32_t>>> pairs;
        for (const auto& p : train_corpus.pairs)
          pairs.push_back({src_vocab.to_ids(p.source), tgt_vocab.to_ids(p.target)});
        auto result = neural::train(pairs, int(src_vocab.size()), int(tgt_vocab.size()),
                                    nc.train);
        neural::save_params(result.params, nc.train.variant,
                            out_path(msg(name, ".", dir.label, ".pnm")));
        std::ofstream log(out_path(msg("log.", name, ".", dir.label, ".jsonl")),
                          std::ios::binary);
        for (size_t u = 0; u < result.losses.size(); ++u) {
          json line;
          line["update"] = u;
          line["loss"] = result.losses[u];
          line["norm"] = result.grad_norms[u];
          log << line.dump() << '\n';
        }
        std::vector<std::vector<std::string>> hyps;
        for (const auto& src : dir.test_src) {
          auto ids = src_vocab.to_ids(src);
          neural::TranslationResult tr;
          if (ids.empty())
            tr = neural::TranslationResult{};
          else if (nc.beam > 1)
            tr = neural::translate_beam(result.params, ids, nc.train.variant, nc.beam,
                                        nc.max_out_len);
          else
            tr = neural::translate_greedy(result.params, ids, nc.train.variant,
                                          nc.max_out_len);
          std::vector<std::string> tokens;
          for (uint32_t id : tr.target) tokens.push_back(tgt_vocab.token(id));
          hyps.push_back(std::move(tokens));
        }
        detail::write_lines(out_path(msg("hyp.", name, ".", dir.label, ".txt")), hyps);
        return 0;
      });
    };
    if (want_endec) run_neural("endec", config.endec);
    if (want_search) run_neural("search", config.search);

    detail::stage("score " + dir.label, [&] {
      for (const auto& sys : config.systems) {
        auto report = score_outputs(out_path(msg("hyp.", sys, ".", dir.label, ".txt")),
                                    out_path("test." + dir.tgt_lang));
        table.cells[dir.label][sys] = report;
      }
      return 0;
    });
  }

  PipelineResult result;
  result.table = table;
  result.report_text = render_report(table, "text");
  detail::stage("report", [&] {
    std::ofstream sj(out_path("scores.json"), std::ios::binary);
    sj << table_to_json(table).dump(2) << "\n";
    std::ofstream rt(out_path("report.txt"), std::ios::binary);
    rt << result.report_text;
    return 0;
  });
  return result;
}

}  // namespace mtlab::bench
