// SPDX-License-Identifier: Apache-2.0
//
// Command line front end: build-data, train, decode, baseline, evaluate.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <CLI11.hpp>

#include "qsum/dataset.hpp"
#include "qsum/evaluation.hpp"
#include "qsum/inference.hpp"
#include "qsum/training.hpp"

namespace fs = std::filesystem;
using namespace qsum;

namespace {

struct BuildDataArgs {
  std::string input;
  std::string out_dir;
  std::uint64_t seed = 42;
  double val_frac = 0.05;
  double test_frac = 0.05;
  bool auto_entities = false;
};

int cmd_build_data(const BuildDataArgs& a) {
  auto articles = read_articles_jsonl(a.input);
  if (a.auto_entities) {
    for (auto& art : articles) {
      if (art.entities.empty()) annotate_entities_capitalized(art);
    }
  }

  std::map<Split, std::vector<TrainingTriple>> corpora;
  for (const auto& art : articles) {
    const Split s = assign_split(art.article_id, a.seed, a.val_frac, a.test_frac);
    auto triples = build_triples(art);
    auto& dst = corpora[s];
    dst.insert(dst.end(), std::make_move_iterator(triples.begin()),
               std::make_move_iterator(triples.end()));
  }

  fs::create_directories(a.out_dir);
  std::vector<std::pair<std::string, CorpusStats>> stat_rows;
  const std::pair<Split, const char*> splits[] = {
      {Split::train, "train"}, {Split::val, "val"}, {Split::test, "test"}};
  for (const auto& [split, name] : splits) {
    auto& corpus = corpora[split];
    assign_ids(corpus, a.seed);
    write_triples_jsonl(a.out_dir + "/" + name + ".jsonl", corpus);
    stat_rows.push_back({name, corpus_stats(corpus)});
  }

  const std::string stats = format_stats(stat_rows);
  std::ofstream sf(a.out_dir + "/stats.txt");
  sf << stats;
  std::cout << stats;
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string train_path;
  std::string val_path;
  std::string checkpoint;
  std::string resume;
  std::string loss_log = "train_loss.log";
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t epochs = 0;
  bool epochs_set = false;
};

int cmd_train(const TrainArgs& a) {
  TrainConfig cfg = parse_config_file(a.config);
  if (a.seed_set) cfg.seed = a.seed;
  if (a.epochs_set) cfg.epochs = a.epochs;

  const auto train_set = read_triples_jsonl(a.train_path);
  std::vector<TrainingTriple> val_set;
  if (!a.val_path.empty()) val_set = read_triples_jsonl(a.val_path);

  TrainState st;
  if (!a.resume.empty()) {
    LoadedCheckpoint lc = load_checkpoint(a.resume);
    if (lc.seed != cfg.seed || lc.batch_size != cfg.batch_size) {
      throw std::invalid_argument(
          "resume: checkpoint was trained with seed " +
          std::to_string(lc.seed) + " and batch_size " +
          std::to_string(lc.batch_size) +
          "; the current configuration disagrees");
    }
    cfg.hp = lc.state.params.hp;
    cfg.adam = lc.state.opt.config();
    st = std::move(lc.state);
  } else {
    // The configured vocab_size caps the vocabulary; small corpora produce
    // fewer distinct tokens and the model shrinks to fit.
    std::vector<std::vector<std::string>> streams;
    for (const auto& t : train_set) {
      streams.push_back(t.doc_tokens);
      streams.push_back(t.query_tokens);
      streams.push_back(t.summary_tokens);
    }
    Vocabulary vocab = build_vocab(streams, cfg.hp.vocab_size);
    cfg.hp.vocab_size = vocab.size();
    cfg.hp.gen_vocab_size = std::min(cfg.hp.gen_vocab_size, vocab.size());
    st = init_train_state(cfg, vocab);
  }

  std::ofstream log(a.loss_log);
  if (!log) throw std::runtime_error("cannot open loss log " + a.loss_log);
  train_epochs(st, cfg, train_set, val_set.empty() ? nullptr : &val_set,
               cfg.epochs, log, std::cerr);
  save_checkpoint(a.checkpoint, st, cfg.batch_size, cfg.seed);
  std::cerr << "saved checkpoint to " << a.checkpoint << " after "
            << st.epochs_done << " epochs\n";
  return 0;
}

struct DecodeArgs {
  std::string checkpoint;
  std::string input;
  std::string output;
  std::size_t beam_width = 5;
  std::size_t max_len = 32;
  std::string attention_dir;
};

int cmd_decode(const DecodeArgs& a) {
  LoadedCheckpoint lc = load_checkpoint(a.checkpoint);
  const auto triples = read_triples_jsonl(a.input);
  if (!a.attention_dir.empty()) fs::create_directories(a.attention_dir);
  const DecodeStats stats =
      decode_corpus(lc.state.params, lc.state.vocab, triples,
                    BeamConfig{a.beam_width, a.max_len}, a.output,
                    a.attention_dir);
  std::cerr << "decoded " << stats.pairs << " pairs; output length mean "
            << stats.mean_len << " min " << stats.min_len << " max "
            << stats.max_len << "\n";
  return 0;
}

struct BaselineArgs {
  std::string input;
  std::string output;
};

int cmd_baseline(const BaselineArgs& a) {
  const auto triples = read_triples_jsonl(a.input);
  std::ofstream out(a.output);
  if (!out) throw std::runtime_error("cannot open " + a.output);
  std::set<std::string> seen;
  for (const auto& t : triples) {
    if (!seen.insert(t.query_id).second) continue;
    const Tokens sent = first_query_sentence(t.doc_tokens, t.query_tokens);
    out << t.query_id << "\t";
    for (std::size_t i = 0; i < sent.size(); ++i) {
      if (i) out << " ";
      out << sent[i];
    }
    out << "\n";
  }
  return 0;
}

struct EvaluateArgs {
  std::string references;
  std::vector<std::string> runs;  // label=path
  bool offset = false;
  bool stem = false;
  std::uint64_t bootstrap_seed = 12345;
  std::size_t resamples = 1000;
  std::string output;
  std::string per_query_prefix;
};

ReferenceSet reference_set_from_triples(
    const std::vector<TrainingTriple>& triples) {
  ReferenceSet rs;
  for (const auto& t : triples) {
    Tokens ref = t.summary_tokens;
    if (!ref.empty() && ref.back() == "<EOS>") ref.pop_back();
    rs.refs[t.query_id].push_back(std::move(ref));
  }
  return rs;
}

int cmd_evaluate(const EvaluateArgs& a) {
  ReferenceSet refs = reference_set_from_triples(read_triples_jsonl(a.references));
  if (a.offset) refs = offset_queries(refs);

  std::vector<std::pair<std::string, EvalResult>> rows;
  for (const auto& spec : a.runs) {
    const std::size_t eq = spec.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 >= spec.size()) {
      throw std::invalid_argument("--run expects label=path, got '" + spec +
                                  "'");
    }
    const std::string label = spec.substr(0, eq);
    const std::string path = spec.substr(eq + 1);
    rows.push_back({label, evaluate_run(read_decoded(path), refs, a.stem,
                                        a.bootstrap_seed, a.resamples)});
  }

  if (!a.per_query_prefix.empty()) {
    for (const auto& [label, res] : rows) {
      std::ofstream tsv(a.per_query_prefix + label + ".tsv");
      if (!tsv) {
        throw std::runtime_error("cannot open per-query dump for " + label);
      }
      tsv << "query_id";
      for (const char* m : {"rouge_1", "rouge_2", "rouge_l", "rouge_su4"}) {
        tsv << "\t" << m << "_r\t" << m << "_p\t" << m << "_f";
      }
      tsv << "\n";
      char buf[32];
      for (std::size_t i = 0; i < res.query_ids.size(); ++i) {
        tsv << res.query_ids[i];
        for (const char* m : {"rouge_1", "rouge_2", "rouge_l", "rouge_su4"}) {
          const RougeScore& s = res.per_query.at(m)[i];
          for (double v : {s.recall, s.precision, s.f1}) {
            std::snprintf(buf, sizeof(buf), "%.6f", v);
            tsv << "\t" << buf;
          }
        }
        tsv << "\n";
      }
    }
  }

  const std::string report = format_report(rows);
  if (a.output.empty()) {
    std::cout << report;
  } else {
    std::ofstream out(a.output);
    if (!out) throw std::runtime_error("cannot open " + a.output);
    out << report;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"query-conditioned abstractive summarizer"};
  app.require_subcommand(1);

  BuildDataArgs bd;
  auto* build = app.add_subcommand(
      "build-data", "expand annotated articles into training triples");
  build->add_option("--input", bd.input, "articles JSONL")->required();
  build->add_option("--out-dir", bd.out_dir, "output directory")->required();
  build->add_option("--seed", bd.seed, "split/id assignment seed");
  build->add_option("--val-frac", bd.val_frac, "validation fraction");
  build->add_option("--test-frac", bd.test_frac, "test fraction");
  build->add_flag("--auto-entities", bd.auto_entities,
                  "annotate capitalized runs when an article has no entities");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", tr.config, "key=value run configuration")
      ->required();
  train->add_option("--train", tr.train_path, "training triples JSONL")
      ->required();
  train->add_option("--val", tr.val_path, "validation triples JSONL");
  train->add_option("--checkpoint", tr.checkpoint, "checkpoint output path")
      ->required();
  train->add_option("--resume", tr.resume, "checkpoint to continue from");
  train->add_option("--loss-log", tr.loss_log, "per-batch loss log path");
  auto* seed_opt =
      train->add_option("--seed", tr.seed, "override the configured seed");
  auto* epochs_opt =
      train->add_option("--epochs", tr.epochs, "override the configured epochs");

  DecodeArgs de;
  auto* decode = app.add_subcommand("decode", "beam-search a triples file");
  decode->add_option("--checkpoint", de.checkpoint, "trained checkpoint")
      ->required();
  decode->add_option("--input", de.input, "triples JSONL")->required();
  decode->add_option("--output", de.output, "decoded output path")->required();
  decode->add_option("--beam-width", de.beam_width, "beam width");
  decode->add_option("--max-len", de.max_len, "maximum output tokens");
  decode->add_option("--attention-dir", de.attention_dir,
                     "directory for per-pair attention matrices");

  BaselineArgs ba;
  auto* baseline = app.add_subcommand(
      "baseline", "first sentence containing the query, per pair");
  baseline->add_option("--input", ba.input, "triples JSONL")->required();
  baseline->add_option("--output", ba.output, "decoded output path")
      ->required();

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "score decoded runs");
  evaluate->add_option("--references", ev.references, "triples JSONL")
      ->required();
  evaluate->add_option("--run", ev.runs, "label=decoded-path (repeatable)")
      ->required();
  evaluate->add_flag("--offset-queries", ev.offset,
                     "re-pair each query with the next query's references");
  evaluate->add_flag("--stem", ev.stem, "Porter-stem before scoring");
  evaluate->add_option("--bootstrap-seed", ev.bootstrap_seed,
                       "bootstrap resampling seed");
  evaluate->add_option("--resamples", ev.resamples,
                       "bootstrap resamples (0 disables intervals)");
  evaluate->add_option("--output", ev.output, "report path (default stdout)");
  evaluate->add_option("--per-query", ev.per_query_prefix,
                       "prefix for per-query TSV dumps");

  CLI11_PARSE(app, argc, argv);
  tr.seed_set = seed_opt->count() > 0;
  tr.epochs_set = epochs_opt->count() > 0;

  try {
    if (build->parsed()) return cmd_build_data(bd);
    if (train->parsed()) return cmd_train(tr);
    if (decode->parsed()) return cmd_decode(de);
    if (baseline->parsed()) return cmd_baseline(ba);
    if (evaluate->parsed()) return cmd_evaluate(ev);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
