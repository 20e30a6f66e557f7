// SPDX-License-Identifier: Apache-2.0

#include "qsum/textprep.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace qsum {

namespace {

bool is_detach_punct(char c) {
  switch (c) {
    case ',': case '.': case '!': case '?':
    case ';': case ':': case '"': case '(': case ')':
      return true;
    default:
      return false;
  }
}

bool is_ascii_alpha(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

char ascii_lower(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

std::string lower_copy(const std::string& s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), ascii_lower);
  return out;
}

// Length of the leading run of (letter '.') pairs: 4 for "U.S.", 0 for "said.".
std::size_t abbrev_prefix_len(const std::string& s, std::size_t pos,
                              std::size_t end) {
  std::size_t i = pos;
  while (i + 2 <= end && is_ascii_alpha(s[i]) && s[i + 1] == '.') i += 2;
  return i - pos;
}

void emit(std::vector<Token>& out, const std::string& text, std::size_t start,
          std::size_t end) {
  Token t;
  t.raw = text.substr(start, end - start);
  t.lower = lower_copy(t.raw);
  t.start = start;
  t.end = end;
  out.push_back(std::move(t));
}

// One whitespace-delimited chunk [pos, end).
void split_chunk(std::vector<Token>& out, const std::string& text,
                 std::size_t pos, std::size_t end) {
  // Leading detachable punctuation.
  while (pos < end && is_detach_punct(text[pos])) {
    emit(out, text, pos, pos + 1);
    ++pos;
  }
  if (pos >= end) return;

  // "U.S." keeps its periods; trailing punctuation after it still detaches,
  // so "U.S.," becomes ["u.s.", ","].
  const std::size_t ab = abbrev_prefix_len(text, pos, end);
  if (ab > 0) {
    bool only_punct_after = true;
    for (std::size_t i = pos + ab; i < end; ++i) {
      if (!is_detach_punct(text[i])) {
        only_punct_after = false;
        break;
      }
    }
    if (only_punct_after) {
      emit(out, text, pos, pos + ab);
      for (std::size_t i = pos + ab; i < end; ++i) emit(out, text, i, i + 1);
      return;
    }
  }

  std::size_t run = pos;
  for (std::size_t i = pos; i < end; ++i) {
    if (is_detach_punct(text[i])) {
      if (run < i) emit(out, text, run, i);
      emit(out, text, i, i + 1);
      run = i + 1;
    }
  }
  if (run < end) emit(out, text, run, end);
}

}  // namespace

std::vector<Token> tokenize_full(const std::string& text) {
  std::vector<Token> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    while (i < n && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < n && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) split_chunk(out, text, i, j);
    i = j;
  }
  return out;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  for (auto& t : tokenize_full(text)) out.push_back(std::move(t.lower));
  return out;
}

Vocabulary::Vocabulary() {
  id_to_token_ = {"<GO>", "<EOS>", "<UNK>"};
  for (int i = 0; i < 3; ++i) token_to_id_[id_to_token_[i]] = i;
}

int Vocabulary::lookup(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(const std::string& token) const {
  return token_to_id_.count(token) != 0;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw std::out_of_range("Vocabulary::token: id " + std::to_string(id) +
                            " out of range for size " +
                            std::to_string(id_to_token_.size()));
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

int Vocabulary::add(const std::string& token) {
  auto it = token_to_id_.find(token);
  if (it != token_to_id_.end()) return it->second;
  const int id = static_cast<int>(id_to_token_.size());
  id_to_token_.push_back(token);
  token_to_id_[token] = id;
  return id;
}

std::uint64_t Vocabulary::content_hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& t : id_to_token_) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 1099511628211ull;
    }
    h ^= 0xff;  // token separator
    h *= 1099511628211ull;
  }
  return h;
}

Vocabulary build_vocab(const std::vector<std::vector<std::string>>& texts,
                       std::size_t max_size) {
  if (max_size < 3) {
    throw std::invalid_argument(
        "build_vocab: max_size must be at least 3 to hold the specials");
  }
  // std::map keeps candidates in lexicographic order, which makes the
  // frequency-then-lex ordering below a stable sort away.
  std::map<std::string, std::uint64_t> counts;
  for (const auto& text : texts) {
    for (const auto& tok : text) {
      if (tok == "<GO>" || tok == "<EOS>" || tok == "<UNK>") continue;
      ++counts[tok];
    }
  }
  std::vector<std::pair<std::string, std::uint64_t>> ranked(counts.begin(),
                                                            counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) {
                     return a.second > b.second;
                   });
  Vocabulary v;
  const std::size_t capacity = max_size - 3;
  for (std::size_t i = 0; i < ranked.size() && i < capacity; ++i) {
    v.add(ranked[i].first);
  }
  return v;
}

ag::ArrayPtr init_embeddings(const Vocabulary& vocab, std::size_t dim,
                             const std::optional<std::string>& vectors_path,
                             RngStream& rng) {
  const std::size_t v = vocab.size();
  std::vector<double> table(v * dim, 0.0);

  std::unordered_map<std::string, std::vector<double>> file_vecs;
  std::vector<double> mu(dim, 0.0), sigma(dim, 0.1);

  if (vectors_path) {
    std::ifstream in(*vectors_path);
    if (!in) {
      throw ParseError("init_embeddings: cannot open " + *vectors_path);
    }
    std::string line;
    std::size_t lineno = 0;
    std::vector<std::vector<double>> all;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string tok;
      if (!(ls >> tok)) {
        throw ParseError("init_embeddings: line " + std::to_string(lineno) +
                         ": missing token");
      }
      std::vector<double> vec;
      vec.reserve(dim);
      double x;
      while (ls >> x) vec.push_back(x);
      if (!ls.eof()) {
        throw ParseError("init_embeddings: line " + std::to_string(lineno) +
                         ": malformed number");
      }
      if (vec.size() != dim) {
        throw ParseError("init_embeddings: line " + std::to_string(lineno) +
                         ": expected " + std::to_string(dim) +
                         " values, got " + std::to_string(vec.size()));
      }
      all.push_back(vec);
      file_vecs[tok] = std::move(vec);
    }
    if (!all.empty()) {
      std::fill(mu.begin(), mu.end(), 0.0);
      for (const auto& vec : all)
        for (std::size_t d = 0; d < dim; ++d) mu[d] += vec[d];
      for (std::size_t d = 0; d < dim; ++d) mu[d] /= double(all.size());
      std::fill(sigma.begin(), sigma.end(), 0.0);
      for (const auto& vec : all)
        for (std::size_t d = 0; d < dim; ++d) {
          const double diff = vec[d] - mu[d];
          sigma[d] += diff * diff;
        }
      for (std::size_t d = 0; d < dim; ++d)
        sigma[d] = std::sqrt(sigma[d] / double(all.size()));
    }
  }

  for (std::size_t id = 0; id < v; ++id) {
    const std::string& tok = vocab.tokens()[id];
    auto it = file_vecs.find(tok);
    if (id >= 3 && it != file_vecs.end()) {
      std::copy(it->second.begin(), it->second.end(),
                table.begin() + static_cast<std::ptrdiff_t>(id * dim));
    } else {
      for (std::size_t d = 0; d < dim; ++d) {
        table[id * dim + d] = rng.normal(mu[d], sigma[d]);
      }
    }
  }
  return ag::make_array({v, dim}, std::move(table));
}

}  // namespace qsum
