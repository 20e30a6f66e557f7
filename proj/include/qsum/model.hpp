// SPDX-License-Identifier: Apache-2.0
//
// The summarizer network: embedding table shared by both encoders and the
// decoder, a bidirectional GRU over the document, a unidirectional GRU over
// the query, and a GRU decoder with additive attention, a two-layer
// generator over the reduced output vocabulary, and a sigmoid pointer switch
// that copies the attended document token when it fires.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qsum/numgrad.hpp"
#include "qsum/rng.hpp"

namespace qsum {

struct HyperParams {
  std::size_t d_emb = 100;
  std::size_t d_doc = 512;   // per direction; combined encoder state is 2*d_doc
  std::size_t d_que = 256;
  std::size_t d_dec = 512;
  std::size_t d_att = 256;
  std::size_t d_gen = 256;
  std::size_t vocab_size = 150000;
  std::size_t gen_vocab_size = 20000;  // ids [0, gen_vocab_size) of the vocab
  std::size_t max_doc_len = 800;
};

struct GruParams {
  ag::ArrayPtr W_r, W_z, W_h;  // {d_out, d_in + d_out}
  ag::ArrayPtr b_r, b_z, b_h;  // {d_out}
};

struct ModelParams {
  HyperParams hp;
  ag::ArrayPtr embeddings;  // {vocab_size, d_emb}
  GruParams doc_fwd, doc_bwd, query, decoder;
  ag::ArrayPtr W_s0;        // {d_dec, 2*d_doc}: bridge from encoder final state
  ag::ArrayPtr W_att, b_att;           // {d_att, 2*d_doc+d_dec+d_emb+d_que}, {d_att}
  ag::ArrayPtr v_att;                  // {1, d_att}
  ag::ArrayPtr W_gen1, b_gen1;         // {d_gen, d_dec+2*d_doc}, {d_gen}
  ag::ArrayPtr W_gen2, b_gen2;         // {gen_vocab_size, d_gen}, {gen_vocab_size}
  ag::ArrayPtr v_ptr;                  // {1, d_dec+d_emb+2*d_doc}
  ag::ArrayPtr b_ptr;                  // {1}

  // Every trainable array with a stable name, in a fixed order shared by the
  // optimizer, the checkpoint format, and gradient checking.
  std::vector<ag::ParamRef> all() const;
  void zero_grads() const;
};

// Weight matrices draw uniform(-0.08, 0.08); bias vectors start at zero.
// The embedding table is built separately (see init_embeddings) and handed in.
ModelParams init_params(const HyperParams& hp, ag::ArrayPtr embeddings,
                        RngStream& rng);

// r = sigma(W_r [x, h] + b_r);  z = sigma(W_z [x, h] + b_z)
// hbar = tanh(W_h [x, r*h] + b_h);  h' = z*h + (1-z)*hbar
ag::ArrayPtr gru_step(ag::Tape& t, const GruParams& g, const ag::ArrayPtr& x,
                      const ag::ArrayPtr& h_prev);

struct EncodedDocument {
  std::vector<ag::ArrayPtr> h;  // per position, {2*d_doc}
  ag::ArrayPtr H;               // {N, 2*d_doc}, rows are h[i]
  ag::ArrayPtr h_final;         // h[N-1]
  ag::ArrayPtr s0;              // W_s0 * h_final, the initial decoder state
};

// Runs both directions from zero initial states and concatenates the
// position-aligned states. doc_ids must be non-empty.
EncodedDocument encode_document(ag::Tape& t, const ModelParams& p,
                                const std::vector<int>& doc_ids);

// Final state of a left-to-right GRU from a zero initial state.
ag::ArrayPtr encode_query(ag::Tape& t, const ModelParams& p,
                          const std::vector<int>& query_ids);

struct Attention {
  ag::ArrayPtr e;        // {N} raw scores
  ag::ArrayPtr alpha;    // {N} softmax(e)
  ag::ArrayPtr context;  // {2*d_doc} alpha-weighted sum of encoder states
};

// e_i = v_att . tanh(W_att [h_i, s_prev, x, q] + b_att)
Attention attend(ag::Tape& t, const ModelParams& p, const EncodedDocument& doc,
                 const ag::ArrayPtr& s_prev, const ag::ArrayPtr& x,
                 const ag::ArrayPtr& q);

struct DecoderStep {
  ag::ArrayPtr s;           // decoder state after this step
  Attention att;
  ag::ArrayPtr gen_logits;  // {gen_vocab_size}
  ag::ArrayPtr log_p_gen;   // log_softmax(gen_logits)
  ag::ArrayPtr ptr_preact;  // {1}, pointer switch before the sigmoid
  double p_ptr = 0.0;       // sigmoid(ptr_preact)
  std::size_t attended = 0; // argmax of alpha, lowest index on ties
  int y_gen = 0;            // argmax of gen_logits, lowest id on ties
  bool pointer_fired = false;  // strictly p_ptr > 0.5
};

// One decode step conditioned on the previous output token id.
// s_t = GRU([context, q, E(y_prev)], s_prev) with attention under s_prev.
DecoderStep decoder_step(ag::Tape& t, const ModelParams& p,
                         const EncodedDocument& doc, const ag::ArrayPtr& s_prev,
                         int y_prev_id, const ag::ArrayPtr& q);

// Runs the decoder over the gold summary: step t sees the gold token t-1
// (<GO> first) as its previous output. summary_ids must end with <EOS>.
std::vector<DecoderStep> forward_teacher_forced(
    ag::Tape& t, const ModelParams& p, const std::vector<int>& doc_ids,
    const std::vector<int>& query_ids, const std::vector<int>& summary_ids);

// Tab-separated attention dump: header row of document tokens, then one row
// per output token with its attention weights.
void write_attention_matrix(const std::string& path,
                            const std::vector<std::string>& doc_tokens,
                            const std::vector<std::string>& output_tokens,
                            const std::vector<std::vector<double>>& alphas);

std::size_t argmax_lowest(const std::vector<double>& v);

}  // namespace qsum
