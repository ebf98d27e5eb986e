// mtlab command line: corpus preparation, model training, decoding,
// translation, scoring, and the full benchmark pipeline.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mtlab/bench.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mtlab;

namespace {

std::vector<std::vector<std::string>> read_tokenized(const std::string& path) {
  std::vector<std::vector<std::string>> out;
  for (const auto& line : corpus::read_lines(path)) out.push_back(split_ws(line));
  return out;
}

corpus::ParallelCorpus tokenized_corpus(const std::string& src_path,
                                        const std::string& tgt_path) {
  auto src = read_tokenized(src_path);
  auto tgt = read_tokenized(tgt_path);
  if (src.size() != tgt.size())
    fail("line count mismatch: ", src_path, " has ", src.size(), " lines, ",
         tgt_path, " has ", tgt.size());
  corpus::ParallelCorpus c;
  for (size_t i = 0; i < src.size(); ++i) {
    corpus::SentencePair p;
    p.id = int(i);
    p.source = std::move(src[i]);
    p.target = std::move(tgt[i]);
    c.pairs.push_back(std::move(p));
  }
  return c;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write ", path);
  for (const auto& line : lines) out << line << '\n';
}

int run_prepare(const std::string& src, const std::string& tgt, const std::string& out_dir,
                const std::string& src_lang, const std::string& tgt_lang, size_t max_len,
                double max_ratio, size_t test_size, size_t max_test_words, uint64_t seed) {
  fs::create_directories(out_dir);
  auto raw = corpus::load_parallel(src, tgt);
  corpus::tokenize_corpus(raw);
  auto cleaned = corpus::clean_corpus(raw, max_len, max_ratio);
  auto stats = corpus::corpus_stats(cleaned.corpus);
  json js;
  js["sentences"] = stats.sentences;
  js["source_tokens"] = stats.source_tokens;
  js["target_tokens"] = stats.target_tokens;
  js["source_unique"] = stats.source_unique;
  js["target_unique"] = stats.target_unique;
  js["removed_by_cleaning"] = cleaned.removed;

  auto path = [&](const std::string& name) { return (fs::path(out_dir) / name).string(); };
  if (test_size > 0) {
    corpus::SplitSpec spec{test_size, max_test_words, seed};
    auto split = corpus::split_corpus(cleaned.corpus, spec);
    corpus::write_side(split.train, corpus::Side::kSource, path("train." + src_lang));
    corpus::write_side(split.train, corpus::Side::kTarget, path("train." + tgt_lang));
    corpus::write_side(split.test, corpus::Side::kSource, path("test." + src_lang));
    corpus::write_side(split.test, corpus::Side::kTarget, path("test." + tgt_lang));
    js["train_pairs"] = split.train.pairs.size();
    js["test_pairs"] = split.test.pairs.size();
  } else {
    corpus::write_side(cleaned.corpus, corpus::Side::kSource, path("clean." + src_lang));
    corpus::write_side(cleaned.corpus, corpus::Side::kTarget, path("clean." + tgt_lang));
  }
  std::ofstream st(path("corpus.stats.json"), std::ios::binary);
  st << js.dump(2) << "\n";
  std::cout << "kept " << stats.sentences << " pairs, removed " << cleaned.removed
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mtlab: phrase-based and neural machine translation laboratory"};
  app.require_subcommand(1);

  // ---- prepare
  auto* prep = app.add_subcommand("prepare", "tokenize, clean and split a parallel corpus");
  std::string p_src, p_tgt, p_out = "out", p_src_lang = "src", p_tgt_lang = "tgt";
  size_t p_max_len = 80, p_test_size = 0, p_max_test_words = 50;
  double p_max_ratio = 9.0;
  uint64_t p_seed = 1;
  prep->add_option("--source", p_src)->required();
  prep->add_option("--target", p_tgt)->required();
  prep->add_option("--out", p_out);
  prep->add_option("--source-lang", p_src_lang);
  prep->add_option("--target-lang", p_tgt_lang);
  prep->add_option("--max-len", p_max_len);
  prep->add_option("--max-ratio", p_max_ratio);
  prep->add_option("--test-size", p_test_size);
  prep->add_option("--max-test-words", p_max_test_words);
  prep->add_option("--seed", p_seed);

  // ---- train-lm
  auto* tlm = app.add_subcommand("train-lm", "train a Kneser-Ney n-gram language model");
  std::string l_input, l_out, l_dump;
  int l_order = 5;
  uint64_t l_min_count = 1;
  tlm->add_option("--input", l_input, "tokenized text, one sentence per line")->required();
  tlm->add_option("--out", l_out, "binary model path")->required();
  tlm->add_option("--order", l_order);
  tlm->add_option("--min-count", l_min_count);
  tlm->add_option("--dump", l_dump, "also write a text dump here");

  // ---- align
  auto* aln = app.add_subcommand("align", "IBM-1 word alignment + grow-diag-final");
  std::string a_src, a_tgt, a_out = "out";
  int a_iters = 10;
  aln->add_option("--source", a_src)->required();
  aln->add_option("--target", a_tgt)->required();
  aln->add_option("--out", a_out);
  aln->add_option("--iterations", a_iters);

  // ---- extract
  auto* ext = app.add_subcommand("extract", "extract and score phrase/reordering tables");
  std::string e_src, e_tgt, e_align, e_fwd, e_rev, e_out = "out";
  int e_max_len = 7;
  ext->add_option("--source", e_src)->required();
  ext->add_option("--target", e_tgt)->required();
  ext->add_option("--alignment", e_align)->required();
  ext->add_option("--fwd-ttable", e_fwd)->required();
  ext->add_option("--rev-ttable", e_rev)->required();
  ext->add_option("--out", e_out);
  ext->add_option("--max-phrase-len", e_max_len);

  // ---- train-neural
  auto* tnn = app.add_subcommand("train-neural", "train an encoder-decoder translator");
  std::string n_src, n_tgt, n_out, n_log, n_variant = "search";
  int n_hidden = 32, n_embed = 32, n_updates = 3000, n_batch = 1;
  double n_lr = 0.2, n_clip = 5.0;
  uint64_t n_seed = 1, n_min_count = 1;
  size_t n_max_len = 50;
  tnn->add_option("--source", n_src)->required();
  tnn->add_option("--target", n_tgt)->required();
  tnn->add_option("--out", n_out, "checkpoint path (.pnm)")->required();
  tnn->add_option("--variant", n_variant)->check(CLI::IsMember({"endec", "search"}));
  tnn->add_option("--log", n_log, "JSON-lines training log");
  tnn->add_option("--hidden", n_hidden);
  tnn->add_option("--embed", n_embed);
  tnn->add_option("--max-updates", n_updates);
  tnn->add_option("--batch-size", n_batch);
  tnn->add_option("--learning-rate", n_lr);
  tnn->add_option("--clip-norm", n_clip);
  tnn->add_option("--seed", n_seed);
  tnn->add_option("--min-count", n_min_count);
  tnn->add_option("--max-sentence-len", n_max_len);

  // ---- decode
  auto* dec = app.add_subcommand("decode", "phrase-based beam decoding");
  std::string d_table, d_reorder, d_lm, d_weights, d_input, d_output;
  int d_nbest = 0, d_beam = 100, d_dlimit = 6;
  bool d_trace = false;
  dec->add_option("--phrase-table", d_table)->required();
  dec->add_option("--reordering", d_reorder)->required();
  dec->add_option("--lm", d_lm)->required();
  dec->add_option("--weights", d_weights, "JSON file with feature weights");
  dec->add_option("--input", d_input)->required();
  dec->add_option("--output", d_output)->required();
  dec->add_option("--nbest", d_nbest);
  dec->add_option("--beam", d_beam);
  dec->add_option("--distortion-limit", d_dlimit, "-1 for unlimited");
  dec->add_flag("--trace", d_trace, "write per-sentence derivations to <output>.trace.jsonl");

  // ---- translate
  auto* tra = app.add_subcommand("translate", "neural translation with a trained checkpoint");
  std::string t_model, t_input, t_output;
  int t_beam = 0, t_max_out = 60;
  tra->add_option("--model", t_model, ".pnm checkpoint (expects .src.vocab/.tgt.vocab sidecars)")
      ->required();
  tra->add_option("--input", t_input)->required();
  tra->add_option("--output", t_output)->required();
  tra->add_option("--beam", t_beam, "0 = greedy");
  tra->add_option("--max-out-len", t_max_out);

  // ---- score
  auto* sco = app.add_subcommand("score", "BLEU/NIST/METEOR/TER against a reference");
  std::string s_hyp, s_ref, s_json;
  bool s_plain = false;
  sco->add_option("--hyp", s_hyp)->required();
  sco->add_option("--ref", s_ref)->required();
  sco->add_option("--json", s_json, "write the full report JSON here");
  sco->add_flag("--plain", s_plain, "print bare scores, one per line");

  // ---- report
  auto* rep = app.add_subcommand("report", "render a score table");
  std::string r_scores, r_format = "text", r_out;
  rep->add_option("--scores", r_scores, "scores.json from run/score")->required();
  rep->add_option("--format", r_format)->check(CLI::IsMember({"text", "json"}));
  rep->add_option("--out", r_out, "write here instead of stdout");

  // ---- run
  auto* run = app.add_subcommand("run", "full pipeline from a config file");
  std::string run_config, run_out;
  uint64_t run_seed = 0;
  bool run_seed_set = false;
  run->add_option("--config", run_config)->required();
  run->add_option("--out", run_out, "override the config output directory");
  run->add_option("--seed", run_seed)->each([&](const std::string&) { run_seed_set = true; });

  CLI11_PARSE(app, argc, argv);

  try {
    if (*prep)
      return run_prepare(p_src, p_tgt, p_out, p_src_lang, p_tgt_lang, p_max_len,
                         p_max_ratio, p_test_size, p_max_test_words, p_seed);

    if (*tlm) {
      auto sentences = read_tokenized(l_input);
      corpus::ParallelCorpus c;
      for (size_t i = 0; i < sentences.size(); ++i) {
        corpus::SentencePair p;
        p.id = int(i);
        p.source = sentences[i];
        p.target = sentences[i];
        c.pairs.push_back(std::move(p));
      }
      auto vocab = corpus::build_vocab(c, corpus::Side::kSource, l_min_count);
      auto model = lm::train_lm(sentences, vocab, l_order);
      for (const auto& w : model.warnings) std::cerr << "warning: " << w << "\n";
      lm::save_lm(model, l_out);
      if (!l_dump.empty()) {
        std::ofstream dump(l_dump, std::ios::binary);
        lm::dump_lm(model, dump);
      }
      std::cout << "trained order-" << l_order << " model on " << sentences.size()
                << " sentences\n";
      return 0;
    }

    if (*aln) {
      fs::create_directories(a_out);
      auto corpus_fwd = tokenized_corpus(a_src, a_tgt);
      auto corpus_rev = tokenized_corpus(a_tgt, a_src);
      auto fwd_table = align::train_ibm1(corpus_fwd, a_iters);
      auto rev_table = align::train_ibm1(corpus_rev, a_iters);
      auto path = [&](const std::string& n) { return (fs::path(a_out) / n).string(); };
      align::save_ttable(fwd_table, path("fwd.ttable.txt"));
      align::save_ttable(rev_table, path("rev.ttable.txt"));
      std::ofstream gdf(path("align.txt"), std::ios::binary);
      for (const auto& p : corpus_fwd.pairs) {
        auto fwd = align::viterbi_align(fwd_table, p, align::Direction::kForward);
        auto rev = align::viterbi_align(rev_table, p, align::Direction::kReverse);
        gdf << align::format_alignment(align::grow_diag_final(fwd, rev)) << '\n';
      }
      std::cout << "aligned " << corpus_fwd.pairs.size() << " pairs ("
                << fwd_table.log_likelihood.size() << " EM iterations)\n";
      return 0;
    }

    if (*ext) {
      fs::create_directories(e_out);
      auto parallel = tokenized_corpus(e_src, e_tgt);
      auto alignments = corpus::read_lines(e_align);
      if (alignments.size() != parallel.pairs.size())
        fail("alignment file has ", alignments.size(), " lines, corpus has ",
             parallel.pairs.size());
      auto fwd_table = align::load_ttable(e_fwd);
      auto rev_table = align::load_ttable(e_rev);
      std::vector<align::SentenceExtraction> extractions;
      for (size_t i = 0; i < parallel.pairs.size(); ++i) {
        const auto& p = parallel.pairs[i];
        align::SentenceExtraction se;
        se.alignment = align::parse_alignment(alignments[i], int(p.source.size()),
                                              int(p.target.size()));
        se.phrases = align::extract_phrases(p, se.alignment, e_max_len);
        extractions.push_back(std::move(se));
      }
      auto table = align::score_phrases(extractions, fwd_table, rev_table);
      auto reorder = align::train_reordering(extractions);
      auto path = [&](const std::string& n) { return (fs::path(e_out) / n).string(); };
      align::save_phrase_table(table, path("phrase-table.txt"));
      align::save_reordering_table(reorder, path("reordering-table.txt"));
      std::cout << "phrase table entries: " << [&] {
        size_t n = 0;
        for (const auto& [s, row] : table.entries) n += row.size();
        return n;
      }() << "\n";
      return 0;
    }

    if (*tnn) {
      auto parallel = tokenized_corpus(n_src, n_tgt);
      auto src_vocab = corpus::build_vocab(parallel, corpus::Side::kSource, n_min_count);
      auto tgt_vocab = corpus::build_vocab(parallel, corpus::Side::kTarget, n_min_count);
      std::vector<std::pair<std::vector<uint32_t>, std::vector<uint32_t>>> pairs;
      for (const auto& p : parallel.pairs)
        pairs.push_back({src_vocab.to_ids(p.source), tgt_vocab.to_ids(p.target)});
      neural::TrainConfig cfg;
      cfg.variant = n_variant == "endec" ? neural::Variant::kEndec : neural::Variant::kSearch;
      cfg.hidden = n_hidden;
      cfg.embed = n_embed;
      cfg.max_updates = n_updates;
      cfg.batch_size = n_batch;
      cfg.learning_rate = n_lr;
      cfg.clip_norm = n_clip;
      cfg.seed = n_seed;
      cfg.max_sentence_len = n_max_len;
      auto result = neural::train(pairs, int(src_vocab.size()), int(tgt_vocab.size()), cfg);
      neural::save_params(result.params, cfg.variant, n_out);
      corpus::save_vocab(src_vocab, n_out + ".src.vocab");
      corpus::save_vocab(tgt_vocab, n_out + ".tgt.vocab");
      if (!n_log.empty()) {
        std::ofstream log(n_log, std::ios::binary);
        for (size_t u = 0; u < result.losses.size(); ++u) {
          json line;
          line["update"] = u;
          line["loss"] = result.losses[u];
          line["norm"] = result.grad_norms[u];
          log << line.dump() << '\n';
        }
      }
      std::cout << "final loss " << result.losses.back() << " after "
                << result.losses.size() << " updates\n";
      return 0;
    }

    if (*dec) {
      auto table = align::load_phrase_table(d_table);
      auto reorder = align::load_reordering_table(d_reorder);
      auto model = lm::load_lm(d_lm);
      decoder::DecoderConfig cfg;
      cfg.beam = d_beam;
      cfg.distortion_limit = d_dlimit;
      if (!d_weights.empty()) {
        std::ifstream in(d_weights);
        if (!in) fail("cannot open weights file ", d_weights);
        json j;
        in >> j;
        cfg.weights = bench::parse_weights(j);
      }
      auto inputs = read_tokenized(d_input);
      std::vector<std::string> outputs;
      std::ofstream trace;
      if (d_trace) trace.open(d_output + ".trace.jsonl", std::ios::binary);
      std::ofstream nbest_out;
      if (d_nbest > 0) nbest_out.open(d_output, std::ios::binary);
      for (size_t i = 0; i < inputs.size(); ++i) {
        if (inputs[i].empty()) {
          if (d_nbest > 0)
            nbest_out << i << " ||| " << " ||| 0\n";
          else
            outputs.push_back("");
          continue;
        }
        if (d_nbest > 0) {
          for (const auto& [target, score] :
               decoder::nbest(inputs[i], table, reorder, model, cfg, d_nbest)) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.6f", score);
            nbest_out << i << " ||| " << join(target) << " ||| " << buf << '\n';
          }
        } else {
          auto result = decoder::decode(inputs[i], table, reorder, model, cfg);
          outputs.push_back(join(result.target));
          if (d_trace) {
            json j;
            j["sentence"] = i;
            j["score"] = result.score;
            json feats;
            for (int k = 0; k < decoder::kNumFeatures; ++k)
              feats[decoder::feature_names()[k]] = result.features[k];
            j["features"] = feats;
            json steps = json::array();
            for (const auto& step : result.derivation) {
              json s;
              s["span"] = {step.s_begin, step.s_end};
              s["target"] = join(step.target);
              s["orientation"] = step.orientation == align::Orientation::kMonotone ? "M"
                                 : step.orientation == align::Orientation::kSwap  ? "S"
                                                                                  : "D";
              steps.push_back(s);
            }
            j["derivation"] = steps;
            trace << j.dump() << '\n';
          }
        }
      }
      if (d_nbest == 0) write_lines(d_output, outputs);
      return 0;
    }

    if (*tra) {
      auto loaded = neural::load_params(t_model);
      auto src_vocab = corpus::load_vocab(t_model + ".src.vocab");
      auto tgt_vocab = corpus::load_vocab(t_model + ".tgt.vocab");
      if (int(src_vocab.size()) != loaded.params.dims.src_vocab ||
          int(tgt_vocab.size()) != loaded.params.dims.tgt_vocab)
        fail("vocabulary sidecars do not match checkpoint dimensions");
      auto inputs = read_tokenized(t_input);
      std::vector<std::string> outputs;
      for (const auto& tokens : inputs) {
        if (tokens.empty()) {
          outputs.push_back("");
          continue;
        }
        auto ids = src_vocab.to_ids(tokens);
        auto tr = t_beam > 1
                      ? neural::translate_beam(loaded.params, ids, loaded.variant,
                                               t_beam, t_max_out)
                      : neural::translate_greedy(loaded.params, ids, loaded.variant,
                                                 t_max_out);
        std::vector<std::string> out_tokens;
        for (uint32_t id : tr.target) out_tokens.push_back(tgt_vocab.token(id));
        outputs.push_back(join(out_tokens));
      }
      write_lines(t_output, outputs);
      return 0;
    }

    if (*sco) {
      auto report = bench::score_outputs(s_hyp, s_ref);
      if (!s_json.empty()) {
        std::ofstream out(s_json, std::ios::binary);
        out << bench::report_to_json(report).dump(2) << "\n";
      }
      if (s_plain) {
        char buf[32];
        for (double v : {report.bleu, report.nist_raw, report.nist_scaled,
                         report.meteor, report.ter}) {
          std::snprintf(buf, sizeof(buf), "%.6f", v);
          std::cout << buf << "\n";
        }
      } else {
        std::cout << bench::report_to_json(report).dump(2) << "\n";
      }
      return 0;
    }

    if (*rep) {
      std::ifstream in(r_scores);
      if (!in) fail("cannot open ", r_scores);
      json j;
      in >> j;
      auto text = bench::render_report(bench::table_from_json(j), r_format);
      if (r_out.empty()) {
        std::cout << text;
      } else {
        std::ofstream out(r_out, std::ios::binary);
        out << text;
      }
      return 0;
    }

    if (*run) {
      auto config = bench::load_config(run_config);
      if (run_seed_set) {
        config.seed = run_seed;
        config.split.seed = run_seed;
        config.endec.train.seed = run_seed + 101;
        config.search.train.seed = run_seed + 202;
      }
      if (!run_out.empty()) config.out_dir = run_out;
      auto result = bench::run_pipeline(config);
      std::cout << result.report_text;
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
