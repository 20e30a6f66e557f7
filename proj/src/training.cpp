// SPDX-License-Identifier: Apache-2.0

#include "qsum/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace qsum {

namespace {

constexpr char kMagic[8] = {'Q', 'S', 'C', 'K', 'P', 'T', '0', '1'};

std::uint64_t composition_seed(std::uint64_t seed) {
  return splitmix64(seed ^ 0x636f6d70ull);  // "comp"
}

std::uint64_t order_seed(std::uint64_t seed) {
  return splitmix64(seed ^ 0x6f72646full);  // "ordo"
}

}  // namespace

EncodedTriple encode_triple(const TrainingTriple& t, const Vocabulary& vocab,
                            std::size_t max_doc_len) {
  TrainingTriple view = t;
  truncate_doc(view, max_doc_len);

  EncodedTriple e;
  e.query_id = view.query_id;
  e.doc_ids.reserve(view.doc_tokens.size());
  for (const auto& tok : view.doc_tokens) e.doc_ids.push_back(vocab.lookup(tok));
  e.query_ids.reserve(view.query_tokens.size());
  for (const auto& tok : view.query_tokens)
    e.query_ids.push_back(vocab.lookup(tok));
  e.summary_ids.reserve(view.summary_tokens.size());
  for (const auto& tok : view.summary_tokens)
    e.summary_ids.push_back(vocab.lookup(tok));
  e.x_ptr = view.x_ptr;
  e.pointed_index = view.pointed_index;
  return e;
}

LossBreakdown compute_loss(ag::Tape& tape, const std::vector<DecoderStep>& steps,
                           const EncodedTriple& ex, const HyperParams& hp) {
  const std::size_t n = ex.summary_ids.size();
  if (steps.size() != n || ex.x_ptr.size() != n || ex.pointed_index.size() != n) {
    throw std::invalid_argument(
        "compute_loss: steps and supervision must cover every summary position");
  }
  if (n == 0) throw std::invalid_argument("compute_loss: empty summary");

  ag::ArrayPtr l_gen = ag::make_scalar(0.0);
  ag::ArrayPtr l_att = ag::make_scalar(0.0);
  ag::ArrayPtr l_ptr = ag::make_scalar(0.0);

  for (std::size_t t = 0; t < n; ++t) {
    const DecoderStep& st = steps[t];
    if (ex.x_ptr[t] == 1) {
      const long target = ex.pointed_index[t];
      if (target < 0 ||
          target >= static_cast<long>(st.att.alpha->size())) {
        throw std::invalid_argument(
            "compute_loss: pointer target " + std::to_string(target) +
            " outside the attended document at position " + std::to_string(t));
      }
      auto log_alpha = tape.log_softmax(st.att.e);
      l_att = tape.add(
          l_att,
          tape.neg(tape.pick(log_alpha, static_cast<std::size_t>(target))));
      l_ptr = tape.add(l_ptr, tape.neg(tape.log_sigmoid(st.ptr_preact)));
    } else {
      int target = ex.summary_ids[t];
      if (static_cast<std::size_t>(target) >= hp.gen_vocab_size) {
        target = Vocabulary::kUnk;
      }
      l_gen = tape.add(
          l_gen,
          tape.neg(tape.pick(st.log_p_gen, static_cast<std::size_t>(target))));
      l_ptr = tape.add(
          l_ptr, tape.neg(tape.log_sigmoid(tape.neg(st.ptr_preact))));
    }
  }

  LossBreakdown out;
  out.total = tape.div_by(tape.add(tape.add(l_gen, l_att), l_ptr),
                          static_cast<double>(n));
  out.L = out.total->values[0];
  out.L_gen = l_gen->values[0];
  out.L_att = l_att->values[0];
  out.L_ptr = l_ptr->values[0];
  out.n_steps = n;
  return out;
}

AdamOptimizer::AdamOptimizer(const std::vector<ag::ParamRef>& params,
                             AdamConfig cfg)
    : cfg_(cfg) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& p : params) {
    m_.emplace_back(p.array->size(), 0.0);
    v_.emplace_back(p.array->size(), 0.0);
  }
}

void AdamOptimizer::restore(std::vector<std::vector<double>> m,
                            std::vector<std::vector<double>> v,
                            std::uint64_t t) {
  m_ = std::move(m);
  v_ = std::move(v);
  t_ = t;
}

void AdamOptimizer::step(const std::vector<ag::ParamRef>& params) {
  if (params.size() != m_.size()) {
    throw std::invalid_argument("adam_step: parameter list changed size");
  }
  for (const auto& p : params) {
    for (std::size_t i = 0; i < p.array->size(); ++i) {
      if (!std::isfinite(p.array->grad[i])) {
        throw ag::NumericError("adam_step: non-finite gradient in " + p.name +
                               " at index " + std::to_string(i));
      }
    }
  }

  double scale = 1.0;
  if (cfg_.grad_clip > 0.0) {
    double sq = 0.0;
    for (const auto& p : params)
      for (double g : p.array->grad) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > cfg_.grad_clip) scale = cfg_.grad_clip / norm;
  }

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& arr = *params[pi].array;
    auto& m = m_[pi];
    auto& v = v_[pi];
    if (m.size() != arr.size()) {
      throw std::invalid_argument("adam_step: parameter " + params[pi].name +
                                  " changed size");
    }
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const double g = arr.grad[i] * scale;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      arr.values[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

namespace {

void set_key(TrainConfig& cfg, const std::string& key, const std::string& val,
             std::size_t lineno) {
  auto as_u64 = [&]() -> std::uint64_t {
    try {
      std::size_t pos = 0;
      const std::uint64_t v = std::stoull(val, &pos);
      if (pos != val.size()) throw std::invalid_argument(val);
      return v;
    } catch (const std::exception&) {
      throw ParseError("config line " + std::to_string(lineno) +
                       ": expected integer for " + key + ", got '" + val + "'");
    }
  };
  auto as_f64 = [&]() -> double {
    try {
      std::size_t pos = 0;
      const double v = std::stod(val, &pos);
      if (pos != val.size()) throw std::invalid_argument(val);
      return v;
    } catch (const std::exception&) {
      throw ParseError("config line " + std::to_string(lineno) +
                       ": expected number for " + key + ", got '" + val + "'");
    }
  };

  if (key == "d_emb") cfg.hp.d_emb = as_u64();
  else if (key == "d_doc") cfg.hp.d_doc = as_u64();
  else if (key == "d_que") cfg.hp.d_que = as_u64();
  else if (key == "d_dec") cfg.hp.d_dec = as_u64();
  else if (key == "d_att") cfg.hp.d_att = as_u64();
  else if (key == "d_gen") cfg.hp.d_gen = as_u64();
  else if (key == "vocab_size") cfg.hp.vocab_size = as_u64();
  else if (key == "gen_vocab_size") cfg.hp.gen_vocab_size = as_u64();
  else if (key == "max_doc_len") cfg.hp.max_doc_len = as_u64();
  else if (key == "batch_size") cfg.batch_size = as_u64();
  else if (key == "seed") cfg.seed = as_u64();
  else if (key == "epochs") cfg.epochs = as_u64();
  else if (key == "learning_rate") cfg.adam.lr = as_f64();
  else if (key == "adam_beta1") cfg.adam.beta1 = as_f64();
  else if (key == "adam_beta2") cfg.adam.beta2 = as_f64();
  else if (key == "adam_epsilon") cfg.adam.eps = as_f64();
  else if (key == "grad_clip") cfg.adam.grad_clip = as_f64();
  else if (key == "embeddings_path") cfg.embeddings_path = val;
  else {
    throw ParseError("config line " + std::to_string(lineno) +
                     ": unknown key '" + key + "'");
  }
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

TrainConfig parse_config_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ParseError("config line " + std::to_string(lineno) +
                       ": expected key=value, got '" + stripped + "'");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string val = trim(stripped.substr(eq + 1));
    if (key.empty()) {
      throw ParseError("config line " + std::to_string(lineno) + ": empty key");
    }
    set_key(cfg, key, val, lineno);
  }
  if (cfg.batch_size == 0) throw ParseError("config: batch_size must be positive");
  return cfg;
}

TrainConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

TrainState init_train_state(const TrainConfig& cfg, const Vocabulary& vocab) {
  if (vocab.size() != cfg.hp.vocab_size) {
    throw std::invalid_argument(
        "init_train_state: vocabulary has " + std::to_string(vocab.size()) +
        " entries but the configuration says " +
        std::to_string(cfg.hp.vocab_size));
  }
  RngStream init_rng(cfg.seed);
  auto embeddings =
      init_embeddings(vocab, cfg.hp.d_emb, cfg.embeddings_path, init_rng);
  TrainState st;
  st.params = init_params(cfg.hp, std::move(embeddings), init_rng);
  st.vocab = vocab;
  st.opt = AdamOptimizer(st.params.all(), cfg.adam);
  st.order_rng = RngStream(order_seed(cfg.seed));
  return st;
}

namespace {

// Fixed composition: one seeded shuffle of the corpus, chunked in order.
// Reconstructed identically on resume from (seed, corpus size).
std::vector<std::vector<std::size_t>> make_batches(std::size_t n,
                                                   std::size_t batch_size,
                                                   std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  RngStream comp_rng(composition_seed(seed));
  comp_rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += batch_size) {
    const std::size_t hi = std::min(n, i + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(hi));
  }
  return batches;
}

}  // namespace

void train_epochs(TrainState& st, const TrainConfig& cfg,
                  const std::vector<TrainingTriple>& train_set,
                  const std::vector<TrainingTriple>* val_set,
                  std::size_t target_epochs, std::ostream& loss_log,
                  std::ostream& info_log) {
  if (train_set.empty()) {
    throw std::invalid_argument("train_epochs: empty training set");
  }
  std::vector<EncodedTriple> data;
  data.reserve(train_set.size());
  for (const auto& t : train_set)
    data.push_back(encode_triple(t, st.vocab, cfg.hp.max_doc_len));

  const auto batches = make_batches(data.size(), cfg.batch_size, cfg.seed);
  const auto params = st.params.all();

  char line[160];
  for (std::uint64_t epoch = st.epochs_done + 1; epoch <= target_epochs;
       ++epoch) {
    std::vector<std::size_t> order(batches.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    st.order_rng.shuffle(order);

    for (std::size_t bi : order) {
      st.params.zero_grads();
      double sl = 0.0, sg = 0.0, sa = 0.0, sp = 0.0;
      for (std::size_t idx : batches[bi]) {
        const EncodedTriple& ex = data[idx];
        ag::Tape tape;
        auto steps = forward_teacher_forced(tape, st.params, ex.doc_ids,
                                            ex.query_ids, ex.summary_ids);
        auto lb = compute_loss(tape, steps, ex, st.params.hp);
        tape.backward(lb.total);
        sl += lb.L;
        sg += lb.L_gen;
        sa += lb.L_att;
        sp += lb.L_ptr;
      }
      const double inv = 1.0 / static_cast<double>(batches[bi].size());
      for (const auto& p : params)
        for (double& g : p.array->grad) g *= inv;
      st.opt.step(params);
      ++st.global_step;
      std::snprintf(line, sizeof(line),
                    "%llu %llu %.6f %.6f %.6f %.6f\n",
                    static_cast<unsigned long long>(epoch),
                    static_cast<unsigned long long>(st.global_step), sl * inv,
                    sg * inv, sa * inv, sp * inv);
      loss_log << line;
    }
    st.epochs_done = epoch;
    if (val_set && !val_set->empty()) {
      const double vl = mean_loss(st, *val_set, cfg.hp.max_doc_len);
      std::snprintf(line, sizeof(line), "epoch %llu val_loss %.6f\n",
                    static_cast<unsigned long long>(epoch), vl);
      info_log << line;
    }
  }
  loss_log.flush();
}

double mean_loss(const TrainState& st, const std::vector<TrainingTriple>& set,
                 std::size_t max_doc_len) {
  if (set.empty()) throw std::invalid_argument("mean_loss: empty set");
  double total = 0.0;
  for (const auto& t : set) {
    const EncodedTriple ex = encode_triple(t, st.vocab, max_doc_len);
    ag::Tape tape;
    auto steps = forward_teacher_forced(tape, st.params, ex.doc_ids,
                                        ex.query_ids, ex.summary_ids);
    total += compute_loss(tape, steps, ex, st.params.hp).L;
  }
  return total / static_cast<double>(set.size());
}

namespace {

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

void put_f64(std::ostream& out, double d) {
  put_u64(out, std::bit_cast<std::uint64_t>(d));
}

void put_str(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint64_t get_u64(std::istream& in) {
  char b[8];
  if (!in.read(b, 8)) throw ParseError("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
  return v;
}

double get_f64(std::istream& in) {
  return std::bit_cast<double>(get_u64(in));
}

std::string get_str(std::istream& in) {
  const std::uint64_t n = get_u64(in);
  if (n > (1ull << 32)) throw ParseError("checkpoint: unreasonable string length");
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw ParseError("checkpoint: truncated string");
  }
  return s;
}

ModelParams make_empty_params(const HyperParams& hp) {
  auto zero_gru = [](std::size_t d_in, std::size_t d_out) {
    GruParams g;
    g.W_r = ag::zeros({d_out, d_in + d_out});
    g.W_z = ag::zeros({d_out, d_in + d_out});
    g.W_h = ag::zeros({d_out, d_in + d_out});
    g.b_r = ag::zeros({d_out});
    g.b_z = ag::zeros({d_out});
    g.b_h = ag::zeros({d_out});
    return g;
  };
  ModelParams p;
  p.hp = hp;
  const std::size_t enc = 2 * hp.d_doc;
  p.embeddings = ag::zeros({hp.vocab_size, hp.d_emb});
  p.doc_fwd = zero_gru(hp.d_emb, hp.d_doc);
  p.doc_bwd = zero_gru(hp.d_emb, hp.d_doc);
  p.query = zero_gru(hp.d_emb, hp.d_que);
  p.decoder = zero_gru(enc + hp.d_que + hp.d_emb, hp.d_dec);
  p.W_s0 = ag::zeros({hp.d_dec, enc});
  p.W_att = ag::zeros({hp.d_att, enc + hp.d_dec + hp.d_emb + hp.d_que});
  p.b_att = ag::zeros({hp.d_att});
  p.v_att = ag::zeros({1, hp.d_att});
  p.W_gen1 = ag::zeros({hp.d_gen, hp.d_dec + enc});
  p.b_gen1 = ag::zeros({hp.d_gen});
  p.W_gen2 = ag::zeros({hp.gen_vocab_size, hp.d_gen});
  p.b_gen2 = ag::zeros({hp.gen_vocab_size});
  p.v_ptr = ag::zeros({1, hp.d_dec + hp.d_emb + enc});
  p.b_ptr = ag::zeros({1});
  return p;
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainState& st,
                     std::size_t batch_size, std::uint64_t seed) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("save_checkpoint: cannot open " + path);
  out.write(kMagic, 8);

  const HyperParams& hp = st.params.hp;
  for (std::uint64_t v : {hp.d_emb, hp.d_doc, hp.d_que, hp.d_dec, hp.d_att,
                          hp.d_gen, hp.vocab_size, hp.gen_vocab_size,
                          hp.max_doc_len}) {
    put_u64(out, v);
  }
  const AdamConfig& ac = st.opt.config();
  put_f64(out, ac.lr);
  put_f64(out, ac.beta1);
  put_f64(out, ac.beta2);
  put_f64(out, ac.eps);
  put_f64(out, ac.grad_clip);
  put_u64(out, batch_size);
  put_u64(out, seed);
  put_u64(out, st.epochs_done);
  put_u64(out, st.global_step);
  put_u64(out, st.opt.steps_taken());
  put_u64(out, st.vocab.content_hash());

  put_u64(out, st.vocab.size());
  for (const auto& tok : st.vocab.tokens()) put_str(out, tok);

  put_str(out, st.order_rng.state());

  const auto params = st.params.all();
  put_u64(out, params.size());
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const auto& p = params[pi];
    put_str(out, p.name);
    put_u64(out, p.array->shape.size());
    for (std::size_t d : p.array->shape) put_u64(out, d);
    for (double v : p.array->values) put_f64(out, v);
    for (double v : st.opt.first_moments()[pi]) put_f64(out, v);
    for (double v : st.opt.second_moments()[pi]) put_f64(out, v);
  }
  if (!out) throw ParseError("save_checkpoint: write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("load_checkpoint: cannot open " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw ParseError("load_checkpoint: " + path +
                     " is not a recognized checkpoint (bad magic)");
  }

  HyperParams hp;
  hp.d_emb = get_u64(in);
  hp.d_doc = get_u64(in);
  hp.d_que = get_u64(in);
  hp.d_dec = get_u64(in);
  hp.d_att = get_u64(in);
  hp.d_gen = get_u64(in);
  hp.vocab_size = get_u64(in);
  hp.gen_vocab_size = get_u64(in);
  hp.max_doc_len = get_u64(in);

  AdamConfig ac;
  ac.lr = get_f64(in);
  ac.beta1 = get_f64(in);
  ac.beta2 = get_f64(in);
  ac.eps = get_f64(in);
  ac.grad_clip = get_f64(in);

  LoadedCheckpoint lc;
  lc.batch_size = get_u64(in);
  lc.seed = get_u64(in);
  const std::uint64_t epochs_done = get_u64(in);
  const std::uint64_t global_step = get_u64(in);
  const std::uint64_t adam_t = get_u64(in);
  const std::uint64_t vocab_hash = get_u64(in);

  const std::uint64_t vsize = get_u64(in);
  Vocabulary vocab;
  for (std::uint64_t i = 0; i < vsize; ++i) {
    const std::string tok = get_str(in);
    if (i < 3) {
      if (tok != vocab.token(static_cast<int>(i))) {
        throw ParseError("load_checkpoint: special token slot " +
                         std::to_string(i) + " holds '" + tok + "'");
      }
    } else {
      vocab.add(tok);
    }
  }
  if (vocab.size() != hp.vocab_size) {
    throw ParseError("load_checkpoint: vocabulary size " +
                     std::to_string(vocab.size()) +
                     " disagrees with hyperparameters");
  }
  if (vocab.content_hash() != vocab_hash) {
    throw ParseError("load_checkpoint: vocabulary hash mismatch");
  }

  const std::string rng_state = get_str(in);

  TrainState st;
  st.params = make_empty_params(hp);
  st.vocab = std::move(vocab);
  st.epochs_done = epochs_done;
  st.global_step = global_step;
  st.order_rng.set_state(rng_state);

  const auto params = st.params.all();
  const std::uint64_t pcount = get_u64(in);
  if (pcount != params.size()) {
    throw ParseError("load_checkpoint: expected " +
                     std::to_string(params.size()) + " parameters, file has " +
                     std::to_string(pcount));
  }
  std::vector<std::vector<double>> m(params.size()), v(params.size());
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const std::string name = get_str(in);
    if (name != params[pi].name) {
      throw ParseError("load_checkpoint: parameter order mismatch, expected " +
                       params[pi].name + ", file has " + name);
    }
    const std::uint64_t rank = get_u64(in);
    ag::Shape shape(rank);
    for (auto& d : shape) d = get_u64(in);
    if (shape != params[pi].array->shape) {
      throw ParseError("load_checkpoint: shape mismatch for " + name);
    }
    auto& arr = *params[pi].array;
    for (double& x : arr.values) x = get_f64(in);
    m[pi].resize(arr.size());
    v[pi].resize(arr.size());
    for (double& x : m[pi]) x = get_f64(in);
    for (double& x : v[pi]) x = get_f64(in);
  }
  st.opt = AdamOptimizer(params, ac);
  st.opt.restore(std::move(m), std::move(v), adam_t);

  lc.state = std::move(st);
  return lc;
}

}  // namespace qsum
