// SPDX-License-Identifier: Apache-2.0

#include "qsum/inference.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <set>
#include <stdexcept>

namespace qsum {

namespace {

// Indices of the k largest entries, value descending, lowest index first
// among equals.
std::vector<std::size_t> top_k_indices(const std::vector<double>& v,
                                       std::size_t k) {
  std::vector<std::size_t> idx(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k),
                    idx.end(), [&](std::size_t a, std::size_t b) {
                      if (v[a] != v[b]) return v[a] > v[b];
                      return a < b;
                    });
  idx.resize(k);
  return idx;
}

struct BeamHyp {
  Hypothesis pub;
  ag::ArrayPtr s;
  int last_id = Vocabulary::kGo;
  std::uint64_t birth = 0;
};

bool better(const BeamHyp& a, const BeamHyp& b) {
  if (a.pub.logprob != b.pub.logprob) return a.pub.logprob > b.pub.logprob;
  return a.birth < b.birth;
}

}  // namespace

Hypothesis greedy_decode(const ModelParams& p, const std::vector<int>& doc_ids,
                         const std::vector<int>& query_ids,
                         std::size_t max_len) {
  ag::Tape tape;
  EncodedDocument doc = encode_document(tape, p, doc_ids);
  ag::ArrayPtr q = encode_query(tape, p, query_ids);

  Hypothesis h;
  ag::ArrayPtr s = doc.s0;
  int last = Vocabulary::kGo;
  for (std::size_t t = 0; t < max_len; ++t) {
    DecoderStep d = decoder_step(tape, p, doc, s, last, q);
    h.logprob += d.log_p_gen->values[static_cast<std::size_t>(d.y_gen)];
    int tok;
    if (d.pointer_fired) {
      tok = doc_ids[d.attended];
    } else {
      tok = d.y_gen;
    }
    if (!d.pointer_fired && tok == Vocabulary::kEos) {
      h.finished = true;
      break;
    }
    h.token_ids.push_back(tok);
    h.trace.push_back({d.pointer_fired, d.attended});
    h.attention.push_back(d.att.alpha->values);
    s = d.s;
    last = tok;
  }
  return h;
}

Hypothesis beam_search(const ModelParams& p, const std::vector<int>& doc_ids,
                       const std::vector<int>& query_ids, BeamConfig cfg) {
  if (cfg.width == 0) {
    throw std::invalid_argument("beam_search: width must be positive");
  }
  ag::Tape tape;
  EncodedDocument doc = encode_document(tape, p, doc_ids);
  ag::ArrayPtr q = encode_query(tape, p, query_ids);

  std::uint64_t births = 0;
  std::vector<BeamHyp> alive(1);
  alive[0].s = doc.s0;
  alive[0].birth = births++;

  std::vector<BeamHyp> done_eos;   // emitted <EOS>
  std::vector<BeamHyp> done_len;   // hit the length cap

  for (std::size_t step = 0; step < cfg.max_len && !alive.empty(); ++step) {
    std::vector<BeamHyp> children;
    children.reserve(alive.size() * cfg.width);
    for (const BeamHyp& h : alive) {
      DecoderStep d = decoder_step(tape, p, doc, h.s, h.last_id, q);
      const auto top = top_k_indices(d.log_p_gen->values, cfg.width);
      for (std::size_t j : top) {
        BeamHyp c = h;
        c.birth = births++;
        c.s = d.s;
        c.pub.logprob += d.log_p_gen->values[j];
        const int tok = d.pointer_fired ? doc_ids[d.attended]
                                        : static_cast<int>(j);
        if (!d.pointer_fired && tok == Vocabulary::kEos) {
          c.pub.finished = true;
          done_eos.push_back(std::move(c));
          continue;
        }
        c.pub.token_ids.push_back(tok);
        c.pub.trace.push_back({d.pointer_fired, d.attended});
        c.pub.attention.push_back(d.att.alpha->values);
        c.last_id = tok;
        children.push_back(std::move(c));
      }
    }
    std::sort(children.begin(), children.end(), better);
    alive.clear();
    for (auto& c : children) {
      if (c.pub.token_ids.size() >= cfg.max_len) {
        done_len.push_back(std::move(c));
      } else if (alive.size() < cfg.width) {
        alive.push_back(std::move(c));
      }
    }
  }

  const std::vector<BeamHyp>* pool = &done_eos;
  std::vector<BeamHyp> fallback;
  if (done_eos.empty()) {
    fallback = std::move(done_len);
    for (auto& h : alive) fallback.push_back(std::move(h));
    pool = &fallback;
  }
  if (pool->empty()) {
    throw std::logic_error("beam_search: no hypothesis produced");
  }
  const BeamHyp* best = &(*pool)[0];
  for (const auto& h : *pool) {
    if (better(h, *best)) best = &h;
  }
  return best->pub;
}

std::vector<std::string> postprocess_unk(
    const Hypothesis& h, const std::vector<std::string>& raw_doc_tokens) {
  if (h.tokens.size() != h.token_ids.size() ||
      h.trace.size() != h.token_ids.size()) {
    throw std::invalid_argument(
        "postprocess_unk: hypothesis fields disagree in length");
  }
  std::vector<std::string> out = h.tokens;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (h.trace[i].pointer_fired && h.token_ids[i] == Vocabulary::kUnk) {
      if (h.trace[i].attended >= raw_doc_tokens.size()) {
        throw std::out_of_range(
            "postprocess_unk: attended position outside the document");
      }
      out[i] = raw_doc_tokens[h.trace[i].attended];
    }
  }
  return out;
}

DecodeStats decode_corpus(const ModelParams& p, const Vocabulary& vocab,
                          const std::vector<TrainingTriple>& triples,
                          BeamConfig cfg, const std::string& out_path,
                          const std::string& attention_dir) {
  std::ofstream out(out_path);
  if (!out) {
    throw std::runtime_error("decode_corpus: cannot open " + out_path);
  }

  DecodeStats stats;
  stats.min_len = std::numeric_limits<std::size_t>::max();
  double total_len = 0.0;
  std::set<std::string> seen;
  for (const auto& t : triples) {
    if (!seen.insert(t.query_id).second) continue;

    TrainingTriple view = t;
    truncate_doc(view, p.hp.max_doc_len);
    std::vector<int> doc_ids, query_ids;
    for (const auto& tok : view.doc_tokens) doc_ids.push_back(vocab.lookup(tok));
    for (const auto& tok : view.query_tokens)
      query_ids.push_back(vocab.lookup(tok));

    Hypothesis h = beam_search(p, doc_ids, query_ids, cfg);
    h.tokens.reserve(h.token_ids.size());
    for (int id : h.token_ids) h.tokens.push_back(vocab.token(id));
    const auto toks = postprocess_unk(h, view.raw_doc_tokens);

    out << view.query_id << "\t";
    for (std::size_t i = 0; i < toks.size(); ++i) {
      if (i) out << " ";
      out << toks[i];
    }
    out << "\n";

    ++stats.pairs;
    total_len += static_cast<double>(toks.size());
    stats.min_len = std::min(stats.min_len, toks.size());
    stats.max_len = std::max(stats.max_len, toks.size());

    if (!attention_dir.empty()) {
      write_attention_matrix(attention_dir + "/att_" + view.query_id + ".tsv",
                             view.doc_tokens, toks, h.attention);
    }
  }
  if (stats.pairs == 0) {
    stats.min_len = 0;
  } else {
    stats.mean_len = total_len / static_cast<double>(stats.pairs);
  }
  return stats;
}

}  // namespace qsum
