// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "qsum/training.hpp"

using namespace qsum;

namespace {

HyperParams toy_hp() {
  HyperParams hp;
  hp.d_emb = 3;
  hp.d_doc = 2;
  hp.d_que = 2;
  hp.d_dec = 3;
  hp.d_att = 2;
  hp.d_gen = 2;
  hp.vocab_size = 9;
  hp.gen_vocab_size = 5;
  hp.max_doc_len = 50;
  return hp;
}

Vocabulary toy_vocab() {
  Vocabulary v;
  for (const char* w : {"a", "b", "c", "d", "e", "f"}) v.add(w);
  return v;  // ids: a=3 .. f=8
}

ModelParams random_params(const HyperParams& hp, std::uint64_t seed) {
  RngStream rng(seed);
  std::vector<double> e(hp.vocab_size * hp.d_emb);
  for (double& x : e) x = rng.uniform(-0.5, 0.5);
  return init_params(hp, ag::make_array({hp.vocab_size, hp.d_emb}, std::move(e)),
                     rng);
}

ModelParams zero_params(const HyperParams& hp) {
  auto p = random_params(hp, 1);
  for (const auto& ref : p.all()) {
    std::fill(ref.array->values.begin(), ref.array->values.end(), 0.0);
  }
  return p;
}

// Supervision arrays cover the appended <EOS> as a plain generate step.
TrainingTriple make_triple(std::vector<std::string> doc,
                           std::vector<std::string> query,
                           std::vector<std::string> summary,
                           std::vector<int> x_ptr, std::vector<long> pointed) {
  TrainingTriple t;
  t.article_id = "art";
  t.doc_id = "1";
  t.query_id = "1.1";
  t.ref_id = "A.1.1";
  t.doc_tokens = doc;
  t.raw_doc_tokens = std::move(doc);
  t.query_tokens = std::move(query);
  t.summary_tokens = std::move(summary);
  t.summary_tokens.push_back("<EOS>");
  t.x_ptr = std::move(x_ptr);
  t.x_ptr.push_back(0);
  t.pointed_index = std::move(pointed);
  t.pointed_index.push_back(-1);
  return t;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("encode_triple maps tokens to ids and keeps supervision") {
  auto vocab = toy_vocab();
  auto t = make_triple({"a", "b", "zebra"}, {"c"}, {"b"}, {1}, {1});
  auto e = encode_triple(t, vocab, 50);

  CHECK(e.query_id == "1.1");
  CHECK(e.doc_ids == std::vector<int>{3, 4, Vocabulary::kUnk});
  CHECK(e.query_ids == std::vector<int>{5});
  CHECK(e.summary_ids == std::vector<int>{4, Vocabulary::kEos});
  CHECK(e.x_ptr == std::vector<int>{1, 0});
  CHECK(e.pointed_index == std::vector<long>{1, -1});
}

TEST_CASE("encode_triple truncation drops supervision past the cut") {
  auto vocab = toy_vocab();
  auto t = make_triple({"a", "b", "c", "d"}, {"c"}, {"d"}, {1}, {3});
  auto e = encode_triple(t, vocab, 2);

  CHECK(e.doc_ids == std::vector<int>{3, 4});
  // The pointed position fell off the end, so the step became generate-only.
  CHECK(e.x_ptr == std::vector<int>{0, 0});
  CHECK(e.pointed_index == std::vector<long>{-1, -1});
}

TEST_CASE("single pointer step under a zero model costs exactly 2 ln 2") {
  auto hp = toy_hp();
  auto p = zero_params(hp);
  ag::Tape t;
  auto steps = forward_teacher_forced(t, p, {3, 4}, {5}, {Vocabulary::kEos});
  REQUIRE(steps.size() == 1);

  EncodedTriple ex;
  ex.doc_ids = {3, 4};
  ex.query_ids = {5};
  ex.summary_ids = {Vocabulary::kEos};
  ex.x_ptr = {1};
  ex.pointed_index = {0};

  auto lb = compute_loss(t, steps, ex, hp);
  const double ln2 = std::log(2.0);
  CHECK(lb.L_gen == 0.0);
  CHECK(lb.L_att == doctest::Approx(ln2).epsilon(1e-12));
  CHECK(lb.L_ptr == doctest::Approx(ln2).epsilon(1e-12));
  CHECK(lb.L == doctest::Approx(2 * ln2).epsilon(1e-12));
  CHECK(lb.n_steps == 1);
}

TEST_CASE("zero model generate step over 8 candidates costs ln 8") {
  auto hp = toy_hp();
  hp.gen_vocab_size = 8;
  auto p = zero_params(hp);
  ag::Tape t;
  auto steps = forward_teacher_forced(t, p, {3, 4, 5}, {6}, {Vocabulary::kEos});

  EncodedTriple ex;
  ex.summary_ids = {Vocabulary::kEos};
  ex.x_ptr = {0};
  ex.pointed_index = {-1};

  auto lb = compute_loss(t, steps, ex, hp);
  CHECK(lb.L_gen == doctest::Approx(std::log(8.0)).epsilon(1e-12));
  CHECK(lb.L_att == 0.0);
  CHECK(lb.L_ptr == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("mixed two-step zero-model loss is 2.5 ln 2") {
  auto hp = toy_hp();
  hp.gen_vocab_size = 4;
  auto p = zero_params(hp);
  ag::Tape t;
  auto steps =
      forward_teacher_forced(t, p, {3, 4}, {5}, {4, Vocabulary::kEos});
  REQUIRE(steps.size() == 2);

  EncodedTriple ex;
  ex.summary_ids = {4, Vocabulary::kEos};
  ex.x_ptr = {1, 0};
  ex.pointed_index = {1, -1};

  // Pointer step: ln2 attention + ln2 switch. Generate step: ln4 + ln2.
  auto lb = compute_loss(t, steps, ex, hp);
  CHECK(lb.L == doctest::Approx(1.7328679513998633).epsilon(1e-12));
  CHECK(lb.L == doctest::Approx(2.5 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("reported total is literally the component sum over steps") {
  auto hp = toy_hp();
  RngStream rng(21);
  for (int rep = 0; rep < 10; ++rep) {
    auto p = random_params(hp, 4000 + static_cast<std::uint64_t>(rep));
    ag::Tape t;
    const std::vector<int> doc{3, 4, 5, 6};
    const std::vector<int> query{7};
    const std::vector<int> summary{4, 6, Vocabulary::kEos};
    auto steps = forward_teacher_forced(t, p, doc, query, summary);

    EncodedTriple ex;
    ex.doc_ids = doc;
    ex.query_ids = query;
    ex.summary_ids = summary;
    ex.x_ptr = {1, 0, 0};
    ex.pointed_index = {1, -1, -1};

    auto lb = compute_loss(t, steps, ex, hp);
    CHECK(lb.L == (lb.L_gen + lb.L_att + lb.L_ptr) / 3.0);
    CHECK(lb.L_gen >= 0.0);
    CHECK(lb.L_att >= 0.0);
    CHECK(lb.L_ptr >= 0.0);
  }
}

TEST_CASE("pointer steps contribute nothing to the generator loss") {
  auto hp = toy_hp();
  auto p = random_params(hp, 22);
  ag::Tape t;
  auto steps =
      forward_teacher_forced(t, p, {3, 4, 5}, {6}, {4, Vocabulary::kEos});

  EncodedTriple all_ptr;
  all_ptr.summary_ids = {4, Vocabulary::kEos};
  all_ptr.x_ptr = {1, 1};
  all_ptr.pointed_index = {1, 2};
  CHECK(compute_loss(t, steps, all_ptr, hp).L_gen == 0.0);

  EncodedTriple all_gen;
  all_gen.summary_ids = {4, Vocabulary::kEos};
  all_gen.x_ptr = {0, 0};
  all_gen.pointed_index = {-1, -1};
  CHECK(compute_loss(t, steps, all_gen, hp).L_att == 0.0);
}

TEST_CASE("generator targets beyond the output vocabulary become <UNK>") {
  auto hp = toy_hp();  // gen_vocab_size 5, vocab 9
  auto p = random_params(hp, 23);
  ag::Tape t;
  auto steps =
      forward_teacher_forced(t, p, {3, 4}, {5}, {7, Vocabulary::kEos});

  EncodedTriple rare;
  rare.summary_ids = {7, Vocabulary::kEos};  // id 7 >= 5
  rare.x_ptr = {0, 0};
  rare.pointed_index = {-1, -1};

  EncodedTriple unk = rare;
  unk.summary_ids = {Vocabulary::kUnk, Vocabulary::kEos};

  // Same steps: only the picked generator index can differ, and it must not.
  CHECK(compute_loss(t, steps, rare, hp).L_gen ==
        compute_loss(t, steps, unk, hp).L_gen);
}

TEST_CASE("compute_loss rejects malformed supervision") {
  auto hp = toy_hp();
  auto p = random_params(hp, 24);
  ag::Tape t;
  auto steps = forward_teacher_forced(t, p, {3, 4}, {5}, {Vocabulary::kEos});

  EncodedTriple ex;
  ex.summary_ids = {Vocabulary::kEos};
  ex.x_ptr = {1};
  ex.pointed_index = {5};  // doc has 2 positions
  CHECK_THROWS_AS(compute_loss(t, steps, ex, hp), std::invalid_argument);
  ex.pointed_index = {-1};
  CHECK_THROWS_AS(compute_loss(t, steps, ex, hp), std::invalid_argument);

  EncodedTriple short_sup;
  short_sup.summary_ids = {Vocabulary::kEos};
  short_sup.x_ptr = {};  // wrong length
  short_sup.pointed_index = {-1};
  CHECK_THROWS_AS(compute_loss(t, steps, short_sup, hp),
                  std::invalid_argument);
}

TEST_CASE("loss agrees with the straight-line forward pass") {
  auto hp = toy_hp();
  for (int rep = 0; rep < 5; ++rep) {
    auto p = random_params(hp, 5000 + static_cast<std::uint64_t>(rep));
    const std::vector<int> doc{3, 4, 5, 6, 7};
    const std::vector<int> query{8, 3};
    const std::vector<int> summary{5, 7, Vocabulary::kEos};
    const std::vector<int> x_ptr{0, 1, 0};
    const std::vector<long> pointed{-1, 4, -1};

    ag::Tape t;
    auto steps = forward_teacher_forced(t, p, doc, query, summary);
    EncodedTriple ex;
    ex.doc_ids = doc;
    ex.query_ids = query;
    ex.summary_ids = summary;
    ex.x_ptr = x_ptr;
    ex.pointed_index = pointed;
    auto lb = compute_loss(t, steps, ex, hp);

    auto want = oracle::full_forward(p, doc, query, summary, x_ptr, pointed);
    CHECK(lb.L_gen == doctest::Approx(want.L_gen).epsilon(1e-12));
    CHECK(lb.L_att == doctest::Approx(want.L_att).epsilon(1e-12));
    CHECK(lb.L_ptr == doctest::Approx(want.L_ptr).epsilon(1e-12));
    CHECK(lb.L == doctest::Approx(want.L).epsilon(1e-12));
  }
}

namespace {

std::vector<ag::ParamRef> single_param(ag::ArrayPtr a) {
  return {{"w", std::move(a)}};
}

}  // namespace

TEST_CASE("first Adam step moves by lr * g / (|g| + eps)") {
  AdamConfig cfg;
  cfg.lr = 0.1;
  auto w = ag::make_vector({1.0, -2.0});
  auto params = single_param(w);
  AdamOptimizer opt(params, cfg);

  w->grad = {2.0, -0.5};
  opt.step(params);

  // Bias correction cancels on the first step, so mhat = g, vhat = g*g.
  CHECK(w->values[0] ==
        doctest::Approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-15));
  CHECK(w->values[1] ==
        doctest::Approx(-2.0 + 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-15));
  CHECK(opt.steps_taken() == 1);
}

TEST_CASE("zero gradients leave parameters untouched") {
  auto w = ag::make_vector({0.7, -0.3});
  auto params = single_param(w);
  AdamOptimizer opt(params, AdamConfig{});
  opt.step(params);
  opt.step(params);
  CHECK(w->values == std::vector<double>{0.7, -0.3});
  CHECK(opt.steps_taken() == 2);
}

TEST_CASE("constant gradients settle near a step size of lr") {
  AdamConfig cfg;
  cfg.lr = 0.01;
  auto w = ag::make_vector({0.0});
  auto params = single_param(w);
  AdamOptimizer opt(params, cfg);
  double prev = 0.0;
  double delta = 0.0;
  for (int i = 0; i < 200; ++i) {
    w->grad = {1.0};
    prev = w->values[0];
    opt.step(params);
    delta = prev - w->values[0];
  }
  CHECK(delta == doctest::Approx(cfg.lr).epsilon(0.05));
}

TEST_CASE("Adam matches a hand-rolled reference over several steps") {
  AdamConfig cfg;
  cfg.lr = 0.02;
  cfg.beta1 = 0.8;
  cfg.beta2 = 0.95;
  cfg.eps = 1e-6;
  auto w = ag::make_vector({0.4, -1.1, 2.2});
  auto params = single_param(w);
  AdamOptimizer opt(params, cfg);

  std::vector<double> ref = {0.4, -1.1, 2.2};
  std::vector<double> m(3, 0.0), v(3, 0.0);
  RngStream rng(25);
  for (int step = 1; step <= 5; ++step) {
    std::vector<double> g(3);
    for (double& x : g) x = rng.uniform(-1.0, 1.0);
    w->grad = g;
    opt.step(params);
    for (int i = 0; i < 3; ++i) {
      m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / (1 - std::pow(cfg.beta1, step));
      const double vhat = v[i] / (1 - std::pow(cfg.beta2, step));
      ref[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    for (int i = 0; i < 3; ++i) {
      CHECK(w->values[i] == doctest::Approx(ref[i]).epsilon(1e-14));
    }
  }
}

TEST_CASE("global-norm clipping equals pre-scaled gradients") {
  AdamConfig clip_cfg;
  clip_cfg.grad_clip = 1.0;
  auto w1 = ag::make_vector({0.5, 0.5});
  auto p1 = single_param(w1);
  AdamOptimizer o1(p1, clip_cfg);
  w1->grad = {1.2, 1.6};  // norm 2, scaled by 0.5
  o1.step(p1);

  AdamConfig plain;
  auto w2 = ag::make_vector({0.5, 0.5});
  auto p2 = single_param(w2);
  AdamOptimizer o2(p2, plain);
  w2->grad = {0.6, 0.8};
  o2.step(p2);

  CHECK(w1->values == w2->values);
}

TEST_CASE("a non-finite gradient aborts and names the parameter") {
  auto w = ag::make_vector({1.0});
  std::vector<ag::ParamRef> params = {{"W_att", w}};
  AdamOptimizer opt(params, AdamConfig{});
  w->grad = {std::nan("")};
  CHECK_THROWS_WITH_AS(opt.step(params),
                       doctest::Contains("W_att"), ag::NumericError);
}

TEST_CASE("config parsing: defaults and full round trip") {
  auto cfg = parse_config_text("");
  CHECK(cfg.batch_size == 30);
  CHECK(cfg.seed == 42);
  CHECK(cfg.epochs == 1);
  CHECK(cfg.adam.lr == 1e-3);
  CHECK(cfg.adam.grad_clip == 0.0);
  CHECK_FALSE(cfg.embeddings_path.has_value());

  cfg = parse_config_text(
      "# run settings\n"
      "d_emb = 16\n"
      "d_doc=32\n"
      "  d_que = 8\t\n"
      "d_dec = 24\n"
      "d_att = 12\n"
      "d_gen = 10\n"
      "vocab_size = 500\n"
      "gen_vocab_size = 200\n"
      "max_doc_len = 64\n"
      "\n"
      "batch_size = 4\n"
      "seed = 7\n"
      "epochs = 3\n"
      "learning_rate = 0.005\n"
      "adam_beta1 = 0.85\n"
      "adam_beta2 = 0.99\n"
      "adam_epsilon = 1e-7\n"
      "grad_clip = 5\n"
      "embeddings_path = /tmp/vecs.txt\n");
  CHECK(cfg.hp.d_emb == 16);
  CHECK(cfg.hp.d_doc == 32);
  CHECK(cfg.hp.d_que == 8);
  CHECK(cfg.hp.d_dec == 24);
  CHECK(cfg.hp.d_att == 12);
  CHECK(cfg.hp.d_gen == 10);
  CHECK(cfg.hp.vocab_size == 500);
  CHECK(cfg.hp.gen_vocab_size == 200);
  CHECK(cfg.hp.max_doc_len == 64);
  CHECK(cfg.batch_size == 4);
  CHECK(cfg.seed == 7);
  CHECK(cfg.epochs == 3);
  CHECK(cfg.adam.lr == 0.005);
  CHECK(cfg.adam.beta1 == 0.85);
  CHECK(cfg.adam.beta2 == 0.99);
  CHECK(cfg.adam.eps == 1e-7);
  CHECK(cfg.adam.grad_clip == 5.0);
  CHECK(cfg.embeddings_path == "/tmp/vecs.txt");
}

TEST_CASE("config parsing: rejects what it does not understand") {
  CHECK_THROWS_WITH_AS(parse_config_text("turbo = on\n"),
                       doctest::Contains("unknown key 'turbo'"), ParseError);
  CHECK_THROWS_WITH_AS(parse_config_text("seed = banana\n"),
                       doctest::Contains("line 1"), ParseError);
  CHECK_THROWS_WITH_AS(parse_config_text("d_emb = 16\nlearning_rate = fast\n"),
                       doctest::Contains("line 2"), ParseError);
  CHECK_THROWS_AS(parse_config_text("= 3\n"), ParseError);
  CHECK_THROWS_AS(parse_config_text("just words\n"), ParseError);
  CHECK_THROWS_AS(parse_config_text("batch_size = 0\n"), ParseError);
  CHECK_THROWS_AS(parse_config_text("seed = 12x\n"), ParseError);
  CHECK_THROWS_AS(parse_config_file(tmp_path("qsum_no_such.cfg")), ParseError);
}

namespace {

TrainConfig tiny_cfg() {
  TrainConfig cfg;
  cfg.hp = toy_hp();
  cfg.batch_size = 2;
  cfg.seed = 11;
  cfg.adam.lr = 0.01;
  return cfg;
}

std::vector<TrainingTriple> tiny_corpus() {
  std::vector<TrainingTriple> c;
  c.push_back(make_triple({"a", "b", "c"}, {"d"}, {"b"}, {1}, {1}));
  c.push_back(make_triple({"c", "d"}, {"a"}, {"d", "c"}, {1, 1}, {1, 0}));
  c.push_back(make_triple({"e", "f", "a"}, {"b"}, {"e"}, {1}, {0}));
  c.push_back(make_triple({"b", "e"}, {"f"}, {"f"}, {0}, {-1}));
  return c;
}

}  // namespace

TEST_CASE("init_train_state enforces the vocabulary size and is repeatable") {
  auto cfg = tiny_cfg();
  auto vocab = toy_vocab();

  auto a = init_train_state(cfg, vocab);
  auto b = init_train_state(cfg, vocab);
  const auto pa = a.params.all();
  const auto pb = b.params.all();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].array->values == pb[i].array->values);
  }
  CHECK(a.order_rng.state() == b.order_rng.state());
  CHECK(a.epochs_done == 0);
  CHECK(a.global_step == 0);

  cfg.hp.vocab_size = 10;
  CHECK_THROWS_AS(init_train_state(cfg, vocab), std::invalid_argument);
}

TEST_CASE("first logged loss equals the loss of the untouched model") {
  auto cfg = tiny_cfg();
  cfg.batch_size = 1;
  auto vocab = toy_vocab();
  const std::vector<TrainingTriple> corpus = {tiny_corpus()[0]};

  auto probe = init_train_state(cfg, vocab);
  const double before = mean_loss(probe, corpus, cfg.hp.max_doc_len);

  auto st = init_train_state(cfg, vocab);
  std::ostringstream loss_log, info_log;
  train_epochs(st, cfg, corpus, nullptr, 1, loss_log, info_log);

  unsigned long long epoch = 0, step = 0;
  double L = 0, lg = 0, la = 0, lp = 0;
  REQUIRE(std::sscanf(loss_log.str().c_str(), "%llu %llu %lf %lf %lf %lf",
                      &epoch, &step, &L, &lg, &la, &lp) == 6);
  CHECK(epoch == 1);
  CHECK(step == 1);
  CHECK(L == doctest::Approx(before).epsilon(1e-6));
  CHECK(st.epochs_done == 1);
  CHECK(st.global_step == 1);
}

TEST_CASE("training runs are reproducible given the seed") {
  auto cfg = tiny_cfg();
  auto vocab = toy_vocab();
  auto corpus = tiny_corpus();

  std::ostringstream log1, log2, info1, info2;
  auto s1 = init_train_state(cfg, vocab);
  train_epochs(s1, cfg, corpus, &corpus, 3, log1, info1);
  auto s2 = init_train_state(cfg, vocab);
  train_epochs(s2, cfg, corpus, &corpus, 3, log2, info2);

  CHECK(log1.str() == log2.str());
  CHECK(info1.str() == info2.str());
  CHECK(!info1.str().empty());
  CHECK(info1.str().substr(0, 6) == "epoch ");

  const auto p1 = s1.params.all();
  const auto p2 = s2.params.all();
  for (std::size_t i = 0; i < p1.size(); ++i) {
    CHECK(p1[i].array->values == p2[i].array->values);
  }
}

TEST_CASE("a short run reduces the training loss") {
  auto cfg = tiny_cfg();
  cfg.adam.lr = 0.05;
  auto vocab = toy_vocab();
  auto corpus = tiny_corpus();

  auto st = init_train_state(cfg, vocab);
  const double before = mean_loss(st, corpus, cfg.hp.max_doc_len);
  std::ostringstream loss_log, info_log;
  train_epochs(st, cfg, corpus, nullptr, 30, loss_log, info_log);
  const double after = mean_loss(st, corpus, cfg.hp.max_doc_len);
  CHECK(after < before);
}

TEST_CASE("checkpoint save, load, save is byte-identical") {
  auto cfg = tiny_cfg();
  auto vocab = toy_vocab();
  auto corpus = tiny_corpus();
  auto st = init_train_state(cfg, vocab);
  std::ostringstream loss_log, info_log;
  train_epochs(st, cfg, corpus, nullptr, 2, loss_log, info_log);

  const auto p1 = tmp_path("qsum_ckpt_a.bin");
  const auto p2 = tmp_path("qsum_ckpt_b.bin");
  save_checkpoint(p1, st, cfg.batch_size, cfg.seed);
  auto loaded = load_checkpoint(p1);
  save_checkpoint(p2, loaded.state, loaded.batch_size, loaded.seed);

  const std::string bytes1 = slurp(p1);
  const std::string bytes2 = slurp(p2);
  CHECK(!bytes1.empty());
  CHECK(bytes1 == bytes2);

  CHECK(loaded.batch_size == cfg.batch_size);
  CHECK(loaded.seed == cfg.seed);
  CHECK(loaded.state.epochs_done == 2);
  CHECK(loaded.state.global_step == st.global_step);
  CHECK(loaded.state.order_rng.state() == st.order_rng.state());
  CHECK(loaded.state.vocab.content_hash() == vocab.content_hash());
  const auto pa = st.params.all();
  const auto pb = loaded.state.params.all();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].array->values == pb[i].array->values);
  }
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(st.opt.first_moments()[i] == loaded.state.opt.first_moments()[i]);
    CHECK(st.opt.second_moments()[i] == loaded.state.opt.second_moments()[i]);
  }
  CHECK(loaded.state.opt.steps_taken() == st.opt.steps_taken());
}

TEST_CASE("checkpoint loading rejects damaged files") {
  auto cfg = tiny_cfg();
  auto vocab = toy_vocab();
  auto st = init_train_state(cfg, vocab);
  const auto good = tmp_path("qsum_ckpt_good.bin");
  save_checkpoint(good, st, cfg.batch_size, cfg.seed);
  std::string bytes = slurp(good);

  const auto bad = tmp_path("qsum_ckpt_bad.bin");
  {
    std::string corrupt = bytes;
    corrupt[0] = 'X';
    std::ofstream(bad, std::ios::binary) << corrupt;
    CHECK_THROWS_WITH_AS(load_checkpoint(bad), doctest::Contains("bad magic"),
                         ParseError);
  }
  {
    std::ofstream(bad, std::ios::binary) << bytes.substr(0, 100);
    CHECK_THROWS_WITH_AS(load_checkpoint(bad), doctest::Contains("truncated"),
                         ParseError);
  }
  {
    // Byte 184 is the first character of the first stored special token.
    std::string corrupt = bytes;
    REQUIRE(corrupt.size() > 184);
    corrupt[184] = '?';
    std::ofstream(bad, std::ios::binary) << corrupt;
    CHECK_THROWS_AS(load_checkpoint(bad), ParseError);
  }
  CHECK_THROWS_AS(load_checkpoint(tmp_path("qsum_ckpt_missing.bin")),
                  ParseError);
}

TEST_CASE("resuming from a checkpoint replays the uninterrupted run") {
  auto cfg = tiny_cfg();
  auto vocab = toy_vocab();
  auto corpus = tiny_corpus();

  std::ostringstream log_full, info;
  auto full = init_train_state(cfg, vocab);
  train_epochs(full, cfg, corpus, nullptr, 4, log_full, info);

  std::ostringstream log_h1, log_h2;
  auto half = init_train_state(cfg, vocab);
  train_epochs(half, cfg, corpus, nullptr, 2, log_h1, info);
  const auto ck = tmp_path("qsum_ckpt_resume.bin");
  save_checkpoint(ck, half, cfg.batch_size, cfg.seed);

  auto resumed = load_checkpoint(ck);
  TrainConfig cfg2 = cfg;
  cfg2.batch_size = resumed.batch_size;
  cfg2.seed = resumed.seed;
  train_epochs(resumed.state, cfg2, corpus, nullptr, 4, log_h2, info);

  CHECK(log_full.str() == log_h1.str() + log_h2.str());
  const auto pa = full.params.all();
  const auto pb = resumed.state.params.all();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].array->values == pb[i].array->values);
  }
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(full.opt.first_moments()[i] ==
          resumed.state.opt.first_moments()[i]);
    CHECK(full.opt.second_moments()[i] ==
          resumed.state.opt.second_moments()[i]);
  }
  CHECK(full.order_rng.state() == resumed.state.order_rng.state());
  CHECK(full.global_step == resumed.state.global_step);
}
