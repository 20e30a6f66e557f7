// SPDX-License-Identifier: Apache-2.0
//
// Corpus construction: raw annotated articles in, (document, query, summary)
// training triples with pointer supervision out.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qsum/textprep.hpp"

namespace qsum {

// One entity occurrence. highlight_index selects the host highlight;
// nullopt means the span lives in the article body. start/end are byte
// offsets into the host text, [start, end).
struct EntityMention {
  std::string text;
  std::optional<std::size_t> highlight_index;
  std::size_t start = 0;
  std::size_t end = 0;
};

struct RawArticle {
  std::string article_id;
  std::string body;
  std::vector<std::string> highlights;
  std::vector<EntityMention> entities;
};

// One (document, query, reference summary) training example. Documents are
// stored untruncated; truncation happens when examples are loaded for
// training. summary_tokens always ends with "<EOS>", and the supervision
// arrays run over every summary position including that final one.
struct TrainingTriple {
  std::string article_id;
  std::string doc_id;      // "3"
  std::string query_id;    // "3.2"
  std::string ref_id;      // "B.3.2"

  std::vector<std::string> doc_tokens;
  std::vector<std::string> raw_doc_tokens;  // aligned 1:1 with doc_tokens
  std::vector<std::string> query_tokens;
  std::vector<std::string> summary_tokens;

  // x_ptr[t] == 1 exactly when position t is inside an entity run whose full
  // token sequence occurs in the document; pointed_index[t] is then the
  // position of that token in the document's first such occurrence, else -1.
  std::vector<int> x_ptr;
  std::vector<long> pointed_index;
};

// Expands one article into triples: one per (highlight, entity occurrence in
// that highlight). All occurrences annotated in a highlight contribute
// pointer supervision to every triple built from it. Mentions whose query
// text tokenizes to nothing are skipped.
std::vector<TrainingTriple> build_triples(const RawArticle& article);

// Fallback annotator for corpora without entity annotations: maximal runs of
// capitalized tokens inside each highlight become entity mentions. Purely a
// heuristic; hand annotations should be preferred when available.
void annotate_entities_capitalized(RawArticle& article);

enum class Split { train, val, test };

// Hash-based independent draw per article: stable under corpus reordering
// and under adding or removing other articles.
Split assign_split(const std::string& article_id, std::uint64_t seed,
                   double val_frac, double test_frac);

// Numbers documents 1..D, queries d.1..d.m, references A.d.q, B.d.q, ...
// The assignment order is a seeded shuffle at each level. Afterwards the
// corpus is sorted by (document, query, reference) id.
void assign_ids(std::vector<TrainingTriple>& corpus, std::uint64_t seed);

// Truncates the stored document view to max_doc_len tokens. Pointer
// supervision whose target falls beyond the cut is masked (x_ptr -> 0,
// pointed_index -> -1) so every remaining target stays addressable.
void truncate_doc(TrainingTriple& t, std::size_t max_doc_len);

struct CorpusStats {
  std::size_t documents = 0;
  std::size_t pairs = 0;        // distinct (document, query)
  std::size_t triples = 0;
  double avg_words_per_doc = 0.0;
  double avg_words_per_query = 0.0;
  double avg_words_per_summary = 0.0;  // excluding the closing <EOS>
  std::size_t duplicate_refs = 0;      // identical summary under one pair
};

CorpusStats corpus_stats(const std::vector<TrainingTriple>& corpus);

// Plain-text stats table; one row per named split.
std::string format_stats(
    const std::vector<std::pair<std::string, CorpusStats>>& rows);

std::vector<RawArticle> read_articles_jsonl(const std::string& path);
void write_triples_jsonl(const std::string& path,
                         const std::vector<TrainingTriple>& corpus);
std::vector<TrainingTriple> read_triples_jsonl(const std::string& path);

}  // namespace qsum
