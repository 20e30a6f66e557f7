// SPDX-License-Identifier: Apache-2.0
//
// Loss assembly, Adam, minibatch training with deterministic shuffling, and
// binary checkpoints that make an interrupted run bitwise-resumable.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "qsum/dataset.hpp"
#include "qsum/model.hpp"
#include "qsum/numgrad.hpp"
#include "qsum/rng.hpp"
#include "qsum/textprep.hpp"

namespace qsum {

// One triple mapped to token ids, truncated, ready for the network.
struct EncodedTriple {
  std::string query_id;
  std::vector<int> doc_ids;
  std::vector<int> query_ids;
  std::vector<int> summary_ids;   // ends with <EOS>
  std::vector<int> x_ptr;
  std::vector<long> pointed_index;
};

EncodedTriple encode_triple(const TrainingTriple& t, const Vocabulary& vocab,
                            std::size_t max_doc_len);

struct LossBreakdown {
  ag::ArrayPtr total;  // scalar, on the caller's tape
  double L = 0.0;
  double L_gen = 0.0;
  double L_att = 0.0;
  double L_ptr = 0.0;
  std::size_t n_steps = 0;
};

// Sums, over the summary positions, the pointer-switch cross entropy at
// every step, the generator negative log-likelihood where the supervision
// says generate, and the attention negative log-likelihood where it says
// point; the total is the component sum divided by the number of positions.
// Generator targets outside the generator vocabulary fall back to <UNK>.
LossBreakdown compute_loss(ag::Tape& tape, const std::vector<DecoderStep>& steps,
                           const EncodedTriple& ex, const HyperParams& hp);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
};

class AdamOptimizer {
 public:
  AdamOptimizer() = default;
  AdamOptimizer(const std::vector<ag::ParamRef>& params, AdamConfig cfg);

  // Applies one update from the gradients currently held by the params.
  // A non-finite gradient aborts with the parameter's name in the message.
  void step(const std::vector<ag::ParamRef>& params);

  const AdamConfig& config() const { return cfg_; }
  std::uint64_t steps_taken() const { return t_; }

  // Checkpoint plumbing.
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void restore(std::vector<std::vector<double>> m,
               std::vector<std::vector<double>> v, std::uint64_t t);

 private:
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

// Mirrors the key=value run configuration file. Unknown keys are rejected.
struct TrainConfig {
  HyperParams hp;
  AdamConfig adam;
  std::size_t batch_size = 30;
  std::uint64_t seed = 42;
  std::size_t epochs = 1;
  std::optional<std::string> embeddings_path;
};

TrainConfig parse_config_file(const std::string& path);
TrainConfig parse_config_text(const std::string& text);

struct TrainState {
  ModelParams params;
  Vocabulary vocab;
  AdamOptimizer opt;
  std::uint64_t epochs_done = 0;
  std::uint64_t global_step = 0;  // batches applied
  RngStream order_rng{0};         // batch-order shuffles; checkpointed
};

// Fresh state: draws embeddings and weights from RngStream(seed), then
// prepares the order stream. Resuming instead goes through load_checkpoint.
TrainState init_train_state(const TrainConfig& cfg, const Vocabulary& vocab);

// Runs epochs [epochs_done+1, target_epochs]. Batch composition is one
// seeded shuffle of the corpus chunked in order (rebuilt identically on
// resume); only the batch order changes between epochs. Per applied batch,
// writes "epoch step L L_gen L_att L_ptr" to loss_log. A validation set, if
// present, is scored after every epoch on info_log.
void train_epochs(TrainState& st, const TrainConfig& cfg,
                  const std::vector<TrainingTriple>& train_set,
                  const std::vector<TrainingTriple>* val_set,
                  std::size_t target_epochs, std::ostream& loss_log,
                  std::ostream& info_log);

// Forward-only mean loss over a set.
double mean_loss(const TrainState& st, const std::vector<TrainingTriple>& set,
                 std::size_t max_doc_len);

// Little-endian binary container; layout versioned by the magic. Holds
// hyperparameters, the optimizer configuration, batch_size and seed, the
// vocabulary, every parameter with its Adam moments, the order-stream state,
// and the epoch/step counters. save -> load -> save is byte-identical.
void save_checkpoint(const std::string& path, const TrainState& st,
                     std::size_t batch_size, std::uint64_t seed);

struct LoadedCheckpoint {
  TrainState state;
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace qsum
