// SPDX-License-Identifier: Apache-2.0
//
// ROUGE scoring (N-gram, LCS, skip-bigram-with-unigram), the first-query-
// sentence extractive baseline, the offset-query control protocol, and run
// evaluation with bootstrap confidence intervals.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace qsum {

using Tokens = std::vector<std::string>;

struct RougeScore {
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
};

// Clipped n-gram overlap. Empty candidate or reference scores zero.
RougeScore rouge_n(const Tokens& cand, const Tokens& ref, std::size_t n);

// Longest common subsequence.
RougeScore rouge_l(const Tokens& cand, const Tokens& ref);

// Ordered pairs (i, j) with i < j and j - i <= 4, counted after prepending a
// begin-of-sequence marker; the marker's pairs contribute the unigram part.
RougeScore rouge_su4(const Tokens& cand, const Tokens& ref);

// Best match over references: the reference with the highest F1 wins and its
// recall/precision are reported; ties keep the earliest reference.
template <class Metric>
RougeScore best_match(const Tokens& cand, const std::vector<Tokens>& refs,
                      Metric metric) {
  RougeScore best;
  bool first = true;
  for (const auto& r : refs) {
    const RougeScore s = metric(cand, r);
    if (first || s.f1 > best.f1) {
      best = s;
      first = false;
    }
  }
  return best;
}

// Porter (1980) stemming of every token; used only behind an explicit flag.
std::string porter_stem(const std::string& word);
Tokens stem_tokens(const Tokens& toks);

// Sentences end after ".", "!" or "?" tokens. Returns the first sentence
// containing the query tokens contiguously, else the document's first
// sentence. The document must be non-empty.
Tokens first_query_sentence(const Tokens& doc_tokens, const Tokens& query);

// query_id -> references (each a token sequence, <EOS> stripped).
struct ReferenceSet {
  std::map<std::string, std::vector<Tokens>> refs;
};

// Within each document, query d.j is re-paired with the references of query
// d.(j+1), the last query wrapping around to d.1. Reference sets keep their
// contents; only the pairing moves.
ReferenceSet offset_queries(const ReferenceSet& in);

struct MetricSummary {
  double mean_recall = 0.0;
  double mean_precision = 0.0;
  double mean_f1 = 0.0;
  double ci_lo = 0.0;  // bootstrap 95% interval on mean F1
  double ci_hi = 0.0;
};

struct EvalResult {
  std::vector<std::string> query_ids;            // evaluation order
  std::map<std::string, std::vector<RougeScore>> per_query;  // metric -> rows
  std::map<std::string, MetricSummary> summary;  // rouge_1/2/l/su4
  double mean_output_len = 0.0;
};

// Scores every decoded pair against its reference set with all four metrics.
// Decoded ids missing from the reference set raise an error listing them.
// The bootstrap resamples pairs with replacement; percentile bounds use the
// nearest-rank convention on the sorted resample means.
EvalResult evaluate_run(
    const std::vector<std::pair<std::string, Tokens>>& decoded,
    const ReferenceSet& refs, bool stem, std::uint64_t bootstrap_seed,
    std::size_t resamples = 1000);

// "query_id<TAB>token token ..." lines.
std::vector<std::pair<std::string, Tokens>> read_decoded(
    const std::string& path);

// Plain-text comparison table, one row per labeled run: mean F1 (x100) and
// its bootstrap interval for each metric, plus mean output length.
std::string format_report(
    const std::vector<std::pair<std::string, EvalResult>>& rows);

}  // namespace qsum
