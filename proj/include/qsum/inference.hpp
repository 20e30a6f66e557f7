// SPDX-License-Identifier: Apache-2.0
//
// Decoding. The pointer mechanism has no probability of its own, so beam
// hypotheses are always scored with generator log-probabilities: when the
// pointer fires, the emitted token is the attended document token but the
// step still spawns beam-width children carrying the top generator
// log-probabilities. Width 1 therefore reproduces greedy decoding exactly.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qsum/dataset.hpp"
#include "qsum/model.hpp"
#include "qsum/textprep.hpp"

namespace qsum {

struct BeamConfig {
  std::size_t width = 5;
  std::size_t max_len = 32;
};

// Per emitted token: whether the pointer produced it and from where.
struct StepTrace {
  bool pointer_fired = false;
  std::size_t attended = 0;
};

struct Hypothesis {
  std::vector<int> token_ids;        // no <GO>, no <EOS>
  std::vector<std::string> tokens;   // vocabulary surface forms
  std::vector<StepTrace> trace;
  std::vector<std::vector<double>> attention;  // one row per emitted token
  double logprob = 0.0;
  bool finished = false;             // emitted <EOS> before the length cap
};

// Highest-probability-first loop: at each step the pointer copies the
// attended document token when it fires, otherwise the generator argmax is
// emitted; stops at <EOS> or after max_len tokens.
Hypothesis greedy_decode(const ModelParams& p, const std::vector<int>& doc_ids,
                         const std::vector<int>& query_ids,
                         std::size_t max_len);

// Beam search as described above. Hypotheses never exceed max_len tokens;
// the best finished hypothesis wins, falling back to the best unfinished one
// when nothing terminated. Equal log-probabilities break toward the earlier
// created hypothesis.
Hypothesis beam_search(const ModelParams& p, const std::vector<int>& doc_ids,
                       const std::vector<int>& query_ids, BeamConfig cfg);

// Replaces <UNK> tokens that the pointer copied from the document with the
// original surface token at the attended position. Tokens the generator
// produced, and pointer copies of in-vocabulary tokens, pass through.
std::vector<std::string> postprocess_unk(
    const Hypothesis& h, const std::vector<std::string>& raw_doc_tokens);

struct DecodeStats {
  std::size_t pairs = 0;
  double mean_len = 0.0;
  std::size_t min_len = 0;
  std::size_t max_len = 0;
};

// Decodes each (document, query) pair once, in file order, and writes
// "query_id<TAB>token token ..." lines. attention_dir, when non-empty, gets
// one att_<query_id>.tsv per pair.
DecodeStats decode_corpus(const ModelParams& p, const Vocabulary& vocab,
                          const std::vector<TrainingTriple>& triples,
                          BeamConfig cfg, const std::string& out_path,
                          const std::string& attention_dir = "");

}  // namespace qsum
