// SPDX-License-Identifier: Apache-2.0

#include "qsum/model.hpp"

#include <fstream>
#include <stdexcept>

#include "qsum/textprep.hpp"

namespace qsum {

namespace {

ag::ArrayPtr uniform_matrix(ag::Shape shape, RngStream& rng) {
  std::vector<double> v(ag::numel(shape));
  for (double& x : v) x = rng.uniform(-0.08, 0.08);
  return ag::make_array(std::move(shape), std::move(v));
}

GruParams init_gru(std::size_t d_in, std::size_t d_out, RngStream& rng) {
  GruParams g;
  g.W_r = uniform_matrix({d_out, d_in + d_out}, rng);
  g.W_z = uniform_matrix({d_out, d_in + d_out}, rng);
  g.W_h = uniform_matrix({d_out, d_in + d_out}, rng);
  g.b_r = ag::zeros({d_out});
  g.b_z = ag::zeros({d_out});
  g.b_h = ag::zeros({d_out});
  return g;
}

void push_gru(std::vector<ag::ParamRef>& out, const std::string& prefix,
              const GruParams& g) {
  out.push_back({prefix + ".W_r", g.W_r});
  out.push_back({prefix + ".W_z", g.W_z});
  out.push_back({prefix + ".W_h", g.W_h});
  out.push_back({prefix + ".b_r", g.b_r});
  out.push_back({prefix + ".b_z", g.b_z});
  out.push_back({prefix + ".b_h", g.b_h});
}

void check_id(int id, std::size_t vocab_size, const char* where) {
  if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
    throw std::out_of_range(std::string(where) + ": token id " +
                            std::to_string(id) + " outside vocabulary of " +
                            std::to_string(vocab_size));
  }
}

}  // namespace

std::vector<ag::ParamRef> ModelParams::all() const {
  std::vector<ag::ParamRef> out;
  out.push_back({"embeddings", embeddings});
  push_gru(out, "doc_fwd", doc_fwd);
  push_gru(out, "doc_bwd", doc_bwd);
  push_gru(out, "query", query);
  push_gru(out, "decoder", decoder);
  out.push_back({"W_s0", W_s0});
  out.push_back({"W_att", W_att});
  out.push_back({"b_att", b_att});
  out.push_back({"v_att", v_att});
  out.push_back({"W_gen1", W_gen1});
  out.push_back({"b_gen1", b_gen1});
  out.push_back({"W_gen2", W_gen2});
  out.push_back({"b_gen2", b_gen2});
  out.push_back({"v_ptr", v_ptr});
  out.push_back({"b_ptr", b_ptr});
  return out;
}

void ModelParams::zero_grads() const {
  for (const auto& p : all()) p.array->zero_grad();
}

ModelParams init_params(const HyperParams& hp, ag::ArrayPtr embeddings,
                        RngStream& rng) {
  if (!embeddings || embeddings->shape !=
                         ag::Shape{hp.vocab_size, hp.d_emb}) {
    throw ag::ShapeError("init_params: embedding table must be {" +
                         std::to_string(hp.vocab_size) + "," +
                         std::to_string(hp.d_emb) + "}");
  }
  if (hp.gen_vocab_size > hp.vocab_size || hp.gen_vocab_size < 3) {
    throw std::invalid_argument(
        "init_params: generator vocabulary must cover the specials and fit "
        "inside the full vocabulary");
  }
  ModelParams p;
  p.hp = hp;
  p.embeddings = std::move(embeddings);
  const std::size_t enc = 2 * hp.d_doc;
  p.doc_fwd = init_gru(hp.d_emb, hp.d_doc, rng);
  p.doc_bwd = init_gru(hp.d_emb, hp.d_doc, rng);
  p.query = init_gru(hp.d_emb, hp.d_que, rng);
  p.decoder = init_gru(enc + hp.d_que + hp.d_emb, hp.d_dec, rng);
  p.W_s0 = uniform_matrix({hp.d_dec, enc}, rng);
  p.W_att = uniform_matrix({hp.d_att, enc + hp.d_dec + hp.d_emb + hp.d_que}, rng);
  p.b_att = ag::zeros({hp.d_att});
  p.v_att = uniform_matrix({1, hp.d_att}, rng);
  p.W_gen1 = uniform_matrix({hp.d_gen, hp.d_dec + enc}, rng);
  p.b_gen1 = ag::zeros({hp.d_gen});
  p.W_gen2 = uniform_matrix({hp.gen_vocab_size, hp.d_gen}, rng);
  p.b_gen2 = ag::zeros({hp.gen_vocab_size});
  p.v_ptr = uniform_matrix({1, hp.d_dec + hp.d_emb + enc}, rng);
  p.b_ptr = ag::zeros({1});
  return p;
}

ag::ArrayPtr gru_step(ag::Tape& t, const GruParams& g, const ag::ArrayPtr& x,
                      const ag::ArrayPtr& h_prev) {
  auto xh = t.concat({x, h_prev});
  auto r = t.sigmoid(t.add(t.matmul(g.W_r, xh), g.b_r));
  auto z = t.sigmoid(t.add(t.matmul(g.W_z, xh), g.b_z));
  auto xrh = t.concat({x, t.mul(r, h_prev)});
  auto hbar = t.tanh(t.add(t.matmul(g.W_h, xrh), g.b_h));
  return t.add(t.mul(z, h_prev), t.mul(t.oneminus(z), hbar));
}

EncodedDocument encode_document(ag::Tape& t, const ModelParams& p,
                                const std::vector<int>& doc_ids) {
  if (doc_ids.empty()) {
    throw std::invalid_argument("encode_document: empty document");
  }
  const std::size_t n = doc_ids.size();
  for (int id : doc_ids) check_id(id, p.hp.vocab_size, "encode_document");

  std::vector<ag::ArrayPtr> emb(n);
  for (std::size_t i = 0; i < n; ++i)
    emb[i] = t.row(p.embeddings, static_cast<std::size_t>(doc_ids[i]));

  std::vector<ag::ArrayPtr> fwd(n), bwd(n);
  ag::ArrayPtr h = ag::zeros({p.hp.d_doc});
  for (std::size_t i = 0; i < n; ++i) {
    h = gru_step(t, p.doc_fwd, emb[i], h);
    fwd[i] = h;
  }
  h = ag::zeros({p.hp.d_doc});
  for (std::size_t i = n; i-- > 0;) {
    h = gru_step(t, p.doc_bwd, emb[i], h);
    bwd[i] = h;
  }

  EncodedDocument out;
  out.h.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.h[i] = t.concat({fwd[i], bwd[i]});
  out.H = t.stack_rows(out.h);
  out.h_final = out.h[n - 1];
  out.s0 = t.matmul(p.W_s0, out.h_final);
  return out;
}

ag::ArrayPtr encode_query(ag::Tape& t, const ModelParams& p,
                          const std::vector<int>& query_ids) {
  if (query_ids.empty()) {
    throw std::invalid_argument("encode_query: empty query");
  }
  ag::ArrayPtr h = ag::zeros({p.hp.d_que});
  for (int id : query_ids) {
    check_id(id, p.hp.vocab_size, "encode_query");
    h = gru_step(t, p.query, t.row(p.embeddings, static_cast<std::size_t>(id)),
                 h);
  }
  return h;
}

Attention attend(ag::Tape& t, const ModelParams& p, const EncodedDocument& doc,
                 const ag::ArrayPtr& s_prev, const ag::ArrayPtr& x,
                 const ag::ArrayPtr& q) {
  std::vector<ag::ArrayPtr> scores;
  scores.reserve(doc.h.size());
  for (const auto& hi : doc.h) {
    auto feat = t.concat({hi, s_prev, x, q});
    auto hidden = t.tanh(t.add(t.matmul(p.W_att, feat), p.b_att));
    scores.push_back(t.matmul(p.v_att, hidden));
  }
  Attention a;
  a.e = t.concat(scores);
  a.alpha = t.softmax(a.e);
  a.context = t.matmul(t.transpose(doc.H), a.alpha);
  return a;
}

std::size_t argmax_lowest(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

DecoderStep decoder_step(ag::Tape& t, const ModelParams& p,
                         const EncodedDocument& doc, const ag::ArrayPtr& s_prev,
                         int y_prev_id, const ag::ArrayPtr& q) {
  check_id(y_prev_id, p.hp.vocab_size, "decoder_step");
  DecoderStep step;
  auto x = t.row(p.embeddings, static_cast<std::size_t>(y_prev_id));
  step.att = attend(t, p, doc, s_prev, x, q);
  step.s = gru_step(t, p.decoder, t.concat({step.att.context, q, x}), s_prev);

  auto gen_hidden = t.add(t.matmul(p.W_gen1, t.concat({step.s, step.att.context})),
                          p.b_gen1);
  step.gen_logits = t.add(t.matmul(p.W_gen2, gen_hidden), p.b_gen2);
  step.log_p_gen = t.log_softmax(step.gen_logits);

  step.ptr_preact =
      t.add(t.matmul(p.v_ptr, t.concat({step.s, x, step.att.context})), p.b_ptr);
  const double a = step.ptr_preact->values[0];
  step.p_ptr = a >= 0.0 ? 1.0 / (1.0 + std::exp(-a))
                        : std::exp(a) / (1.0 + std::exp(a));

  step.attended = argmax_lowest(step.att.alpha->values);
  step.y_gen = static_cast<int>(argmax_lowest(step.gen_logits->values));
  step.pointer_fired = step.p_ptr > 0.5;
  return step;
}

std::vector<DecoderStep> forward_teacher_forced(
    ag::Tape& t, const ModelParams& p, const std::vector<int>& doc_ids,
    const std::vector<int>& query_ids, const std::vector<int>& summary_ids) {
  if (summary_ids.empty() || summary_ids.back() != Vocabulary::kEos) {
    throw std::invalid_argument(
        "forward_teacher_forced: summary must end with <EOS>");
  }
  EncodedDocument doc = encode_document(t, p, doc_ids);
  ag::ArrayPtr q = encode_query(t, p, query_ids);

  std::vector<DecoderStep> steps;
  steps.reserve(summary_ids.size());
  ag::ArrayPtr s = doc.s0;
  int y_prev = Vocabulary::kGo;
  for (int target : summary_ids) {
    steps.push_back(decoder_step(t, p, doc, s, y_prev, q));
    s = steps.back().s;
    y_prev = target;
  }
  return steps;
}

void write_attention_matrix(const std::string& path,
                            const std::vector<std::string>& doc_tokens,
                            const std::vector<std::string>& output_tokens,
                            const std::vector<std::vector<double>>& alphas) {
  if (output_tokens.size() != alphas.size()) {
    throw std::invalid_argument(
        "write_attention_matrix: one weight row per output token required");
  }
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("write_attention_matrix: cannot open " + path);
  }
  for (const auto& tok : doc_tokens) out << "\t" << tok;
  out << "\n";
  char buf[32];
  for (std::size_t r = 0; r < alphas.size(); ++r) {
    if (alphas[r].size() != doc_tokens.size()) {
      throw std::invalid_argument(
          "write_attention_matrix: weight row length mismatch at row " +
          std::to_string(r));
    }
    out << output_tokens[r];
    for (double v : alphas[r]) {
      std::snprintf(buf, sizeof(buf), "%.6f", v);
      out << "\t" << buf;
    }
    out << "\n";
  }
}

}  // namespace qsum
