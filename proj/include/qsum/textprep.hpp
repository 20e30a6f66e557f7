// SPDX-License-Identifier: Apache-2.0
//
// Tokenization, vocabulary construction, and embedding initialization.

#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "qsum/numgrad.hpp"
#include "qsum/rng.hpp"

namespace qsum {

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One token with its original surface form and byte span in the source text.
struct Token {
  std::string lower;   // normalized form used everywhere downstream
  std::string raw;     // original casing, kept for pointer output substitution
  std::size_t start;   // byte offset in the source string, [start, end)
  std::size_t end;
};

// Lowercases and splits on whitespace, detaching , . ! ? ; : " ( ) as
// standalone tokens. Dotted single-letter abbreviations ("U.S.", "a.m.")
// keep their periods and stay one token. ASCII-only case folding.
std::vector<Token> tokenize_full(const std::string& text);
std::vector<std::string> tokenize(const std::string& text);

// Token ids. 0, 1, 2 are reserved for the sequence-control specials.
class Vocabulary {
 public:
  static constexpr int kGo = 0;
  static constexpr int kEos = 1;
  static constexpr int kUnk = 2;

  Vocabulary();

  // Unknown tokens map to kUnk.
  int lookup(const std::string& token) const;
  bool contains(const std::string& token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return id_to_token_.size(); }

  // Append a non-special token; id is the next free slot.
  int add(const std::string& token);

  const std::vector<std::string>& tokens() const { return id_to_token_; }

  // FNV-1a over all tokens in id order; checkpoints store this to detect a
  // vocabulary swap under a trained model.
  std::uint64_t content_hash() const;

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

// Most frequent tokens win; equal counts break lexicographically ascending.
// max_size counts the three specials, so max_size - 3 content tokens fit.
Vocabulary build_vocab(const std::vector<std::vector<std::string>>& texts,
                       std::size_t max_size);

// Builds the {vocab_size, dim} embedding matrix. When a vector file is given
// (one line per token: "token v1 v2 ... v_dim"), tokens found there take
// their file vector; every other row (specials included) draws per-dimension
// Normal(mu_d, sigma_d) where mu_d / sigma_d are the mean and population
// standard deviation of all file vectors. Without a file every row draws
// Normal(0, 0.1). Rows are filled in id order, dimensions in order, so the
// draw sequence is reproducible.
ag::ArrayPtr init_embeddings(const Vocabulary& vocab, std::size_t dim,
                             const std::optional<std::string>& vectors_path,
                             RngStream& rng);

}  // namespace qsum
