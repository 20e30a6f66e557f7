// SPDX-License-Identifier: Apache-2.0

#include "qsum/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "qsum/rng.hpp"

namespace qsum {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string join_tokens(const std::vector<std::string>& toks) {
  std::string out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) out += ' ';
    out += toks[i];
  }
  return out;
}

// First contiguous occurrence of needle in haystack, or -1.
long find_subsequence(const std::vector<std::string>& haystack,
                      const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > haystack.size()) return -1;
  const std::size_t last = haystack.size() - needle.size();
  for (std::size_t d = 0; d <= last; ++d) {
    bool match = true;
    for (std::size_t k = 0; k < needle.size(); ++k) {
      if (haystack[d + k] != needle[k]) {
        match = false;
        break;
      }
    }
    if (match) return static_cast<long>(d);
  }
  return -1;
}

// Reference labels A..Z, then AA, AB, ... for pathological reference counts.
std::string ref_letter(std::size_t idx) {
  std::string s;
  ++idx;
  while (idx > 0) {
    --idx;
    s.insert(s.begin(), static_cast<char>('A' + idx % 26));
    idx /= 26;
  }
  return s;
}

void validate_span(const RawArticle& a, const EntityMention& m,
                   const std::string& host, const char* host_name) {
  if (m.start > m.end || m.end > host.size()) {
    throw ParseError("article " + a.article_id + ": entity span [" +
                     std::to_string(m.start) + "," + std::to_string(m.end) +
                     ") exceeds " + host_name + " of length " +
                     std::to_string(host.size()));
  }
}

}  // namespace

std::vector<TrainingTriple> build_triples(const RawArticle& article) {
  std::vector<TrainingTriple> out;

  const auto doc_full = tokenize_full(article.body);
  std::vector<std::string> doc_tokens, raw_doc_tokens;
  doc_tokens.reserve(doc_full.size());
  raw_doc_tokens.reserve(doc_full.size());
  for (const auto& t : doc_full) {
    doc_tokens.push_back(t.lower);
    raw_doc_tokens.push_back(t.raw);
  }

  for (std::size_t k = 0; k < article.highlights.size(); ++k) {
    const std::string& highlight = article.highlights[k];
    const auto sum_full = tokenize_full(highlight);

    std::vector<const EntityMention*> mentions;
    for (const auto& m : article.entities) {
      if (m.highlight_index.has_value()) {
        if (*m.highlight_index >= article.highlights.size()) {
          throw ParseError("article " + article.article_id +
                           ": entity highlight_index " +
                           std::to_string(*m.highlight_index) +
                           " out of range");
        }
        validate_span(article, m, article.highlights[*m.highlight_index],
                      "highlight");
        if (*m.highlight_index == k) mentions.push_back(&m);
      } else {
        validate_span(article, m, article.body, "body");
      }
    }
    std::stable_sort(mentions.begin(), mentions.end(),
                     [](const EntityMention* a, const EntityMention* b) {
                       if (a->start != b->start) return a->start < b->start;
                       return a->end < b->end;
                     });

    std::vector<std::string> summary_tokens;
    summary_tokens.reserve(sum_full.size() + 1);
    for (const auto& t : sum_full) summary_tokens.push_back(t.lower);
    summary_tokens.push_back("<EOS>");

    // Pointer supervision is a property of the highlight: every annotated
    // occurrence marks its token run, whichever mention becomes the query.
    std::vector<int> x_ptr(summary_tokens.size(), 0);
    std::vector<long> pointed(summary_tokens.size(), -1);
    for (const auto* m : mentions) {
      std::size_t t0 = sum_full.size(), t1 = 0;
      for (std::size_t t = 0; t < sum_full.size(); ++t) {
        if (sum_full[t].start >= m->start && sum_full[t].end <= m->end) {
          t0 = std::min(t0, t);
          t1 = std::max(t1, t + 1);
        }
      }
      if (t0 >= t1) continue;
      std::vector<std::string> run(summary_tokens.begin() + t0,
                                   summary_tokens.begin() + t1);
      const long d = find_subsequence(doc_tokens, run);
      if (d < 0) continue;
      for (std::size_t t = t0; t < t1; ++t) {
        x_ptr[t] = 1;
        pointed[t] = d + static_cast<long>(t - t0);
      }
    }

    for (const auto* m : mentions) {
      TrainingTriple tr;
      tr.article_id = article.article_id;
      tr.query_tokens = tokenize(m->text);
      if (tr.query_tokens.empty()) continue;
      tr.doc_tokens = doc_tokens;
      tr.raw_doc_tokens = raw_doc_tokens;
      tr.summary_tokens = summary_tokens;
      tr.x_ptr = x_ptr;
      tr.pointed_index = pointed;
      out.push_back(std::move(tr));
    }
  }
  return out;
}

void annotate_entities_capitalized(RawArticle& article) {
  for (std::size_t k = 0; k < article.highlights.size(); ++k) {
    const auto toks = tokenize_full(article.highlights[k]);
    std::size_t i = 0;
    while (i < toks.size()) {
      const bool cap = !toks[i].raw.empty() && toks[i].raw[0] >= 'A' &&
                       toks[i].raw[0] <= 'Z';
      if (!cap) {
        ++i;
        continue;
      }
      std::size_t j = i;
      while (j + 1 < toks.size() && !toks[j + 1].raw.empty() &&
             toks[j + 1].raw[0] >= 'A' && toks[j + 1].raw[0] <= 'Z') {
        ++j;
      }
      EntityMention m;
      m.highlight_index = k;
      m.start = toks[i].start;
      m.end = toks[j].end;
      m.text = article.highlights[k].substr(m.start, m.end - m.start);
      article.entities.push_back(std::move(m));
      i = j + 1;
    }
  }
}

Split assign_split(const std::string& article_id, std::uint64_t seed,
                   double val_frac, double test_frac) {
  if (val_frac < 0.0 || test_frac < 0.0 || val_frac + test_frac > 1.0) {
    throw std::invalid_argument("assign_split: fractions must be >= 0 and sum to <= 1");
  }
  const std::uint64_t h = splitmix64(fnv1a(article_id) ^ seed);
  const double u = static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
  if (u < val_frac) return Split::val;
  if (u < val_frac + test_frac) return Split::test;
  return Split::train;
}

void assign_ids(std::vector<TrainingTriple>& corpus, std::uint64_t seed) {
  RngStream rng(seed);

  // doc -> query -> triple indices, pre-sorted so the shuffles start from a
  // state independent of input order.
  std::map<std::string, std::map<std::string, std::vector<std::size_t>>> tree;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    tree[corpus[i].article_id][join_tokens(corpus[i].query_tokens)].push_back(i);
  }

  std::vector<std::string> docs;
  for (const auto& [aid, _] : tree) docs.push_back(aid);
  rng.shuffle(docs);

  for (std::size_t d = 0; d < docs.size(); ++d) {
    const std::string doc_id = std::to_string(d + 1);
    auto& queries = tree[docs[d]];
    std::vector<std::string> qkeys;
    for (const auto& [qk, _] : queries) qkeys.push_back(qk);
    rng.shuffle(qkeys);
    for (std::size_t q = 0; q < qkeys.size(); ++q) {
      const std::string query_id = doc_id + "." + std::to_string(q + 1);
      auto refs = queries[qkeys[q]];
      // Canonical pre-shuffle order by content, so the letter assignment does
      // not depend on how the input corpus happened to be ordered.
      std::stable_sort(refs.begin(), refs.end(),
                       [&](std::size_t x, std::size_t y) {
                         return corpus[x].summary_tokens < corpus[y].summary_tokens;
                       });
      rng.shuffle(refs);
      for (std::size_t r = 0; r < refs.size(); ++r) {
        corpus[refs[r]].doc_id = doc_id;
        corpus[refs[r]].query_id = query_id;
        corpus[refs[r]].ref_id = ref_letter(r) + "." + query_id;
      }
    }
  }

  auto id_key = [](const TrainingTriple& t) {
    // numeric doc, numeric query, then the letter part
    const std::size_t dot1 = t.query_id.find('.');
    const unsigned long dnum = std::stoul(t.query_id.substr(0, dot1));
    const unsigned long qnum = std::stoul(t.query_id.substr(dot1 + 1));
    const std::string letter = t.ref_id.substr(0, t.ref_id.find('.'));
    return std::make_tuple(dnum, qnum, letter.size(), letter);
  };
  std::sort(corpus.begin(), corpus.end(),
            [&](const TrainingTriple& a, const TrainingTriple& b) {
              return id_key(a) < id_key(b);
            });
}

void truncate_doc(TrainingTriple& t, std::size_t max_doc_len) {
  if (t.doc_tokens.size() <= max_doc_len) return;
  t.doc_tokens.resize(max_doc_len);
  t.raw_doc_tokens.resize(max_doc_len);
  for (std::size_t i = 0; i < t.summary_tokens.size(); ++i) {
    if (t.pointed_index[i] >= static_cast<long>(max_doc_len)) {
      t.x_ptr[i] = 0;
      t.pointed_index[i] = -1;
    }
  }
}

CorpusStats corpus_stats(const std::vector<TrainingTriple>& corpus) {
  CorpusStats s;
  s.triples = corpus.size();

  std::map<std::string, std::size_t> doc_len;       // article -> token count
  std::map<std::pair<std::string, std::string>, std::vector<std::string>>
      pair_refs;                                    // (article, query) -> summaries
  double sum_words = 0.0;
  for (const auto& t : corpus) {
    doc_len[t.article_id] = t.doc_tokens.size();
    pair_refs[{t.article_id, join_tokens(t.query_tokens)}].push_back(
        join_tokens(t.summary_tokens));
    sum_words +=
        t.summary_tokens.empty() ? 0.0 : double(t.summary_tokens.size() - 1);
  }

  s.documents = doc_len.size();
  s.pairs = pair_refs.size();
  if (s.documents) {
    double total = 0.0;
    for (const auto& [_, n] : doc_len) total += double(n);
    s.avg_words_per_doc = total / double(s.documents);
  }
  if (s.pairs) {
    double total = 0.0;
    for (const auto& [key, _] : pair_refs) {
      total += double(1 + std::count(key.second.begin(), key.second.end(), ' '));
      if (key.second.empty()) total -= 1.0;
    }
    s.avg_words_per_query = total / double(s.pairs);
  }
  if (s.triples) s.avg_words_per_summary = sum_words / double(s.triples);

  for (const auto& [_, refs] : pair_refs) {
    std::map<std::string, std::size_t> seen;
    for (const auto& r : refs) ++seen[r];
    for (const auto& [__, n] : seen)
      if (n > 1) s.duplicate_refs += n - 1;
  }
  return s;
}

std::string format_stats(
    const std::vector<std::pair<std::string, CorpusStats>>& rows) {
  std::ostringstream os;
  os << "split       documents  pairs  triples  words/doc  words/query  words/summary  dup-refs\n";
  for (const auto& [name, s] : rows) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "%-11s %9zu %6zu %8zu %10.2f %12.2f %14.2f %9zu\n",
                  name.c_str(), s.documents, s.pairs, s.triples,
                  s.avg_words_per_doc, s.avg_words_per_query,
                  s.avg_words_per_summary, s.duplicate_refs);
    os << buf;
  }
  return os.str();
}

namespace {

std::vector<std::string> string_array(const ordered_json& j, const char* field,
                                      std::size_t lineno) {
  if (!j.contains(field) || !j[field].is_array()) {
    throw ParseError("line " + std::to_string(lineno) + ": missing array '" +
                     field + "'");
  }
  std::vector<std::string> out;
  for (const auto& e : j[field]) {
    if (!e.is_string()) {
      throw ParseError("line " + std::to_string(lineno) + ": '" + field +
                       "' holds a non-string element");
    }
    out.push_back(e.get<std::string>());
  }
  return out;
}

}  // namespace

std::vector<RawArticle> read_articles_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::vector<RawArticle> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const std::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    RawArticle a;
    if (!j.contains("article_id") || !j["article_id"].is_string()) {
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": missing string 'article_id'");
    }
    a.article_id = j["article_id"].get<std::string>();
    if (!j.contains("body") || !j["body"].is_string()) {
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": missing string 'body'");
    }
    a.body = j["body"].get<std::string>();
    a.highlights = string_array(j, "highlights", lineno);
    if (j.contains("entities")) {
      for (const auto& je : j["entities"]) {
        EntityMention m;
        m.text = je.at("text").get<std::string>();
        if (je.contains("highlight_index") && !je["highlight_index"].is_null()) {
          m.highlight_index = je["highlight_index"].get<std::size_t>();
        }
        m.start = je.at("start").get<std::size_t>();
        m.end = je.at("end").get<std::size_t>();
        a.entities.push_back(std::move(m));
      }
    }
    out.push_back(std::move(a));
  }
  return out;
}

void write_triples_jsonl(const std::string& path,
                         const std::vector<TrainingTriple>& corpus) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open " + path + " for writing");
  for (const auto& t : corpus) {
    ordered_json j;
    j["doc_id"] = t.doc_id;
    j["query_id"] = t.query_id;
    j["ref_id"] = t.ref_id;
    j["article_id"] = t.article_id;
    j["doc_tokens"] = t.doc_tokens;
    j["raw_doc_tokens"] = t.raw_doc_tokens;
    j["query_tokens"] = t.query_tokens;
    j["summary_tokens"] = t.summary_tokens;
    j["x_ptr"] = t.x_ptr;
    j["pointed_index"] = t.pointed_index;
    out << j.dump() << "\n";
  }
}

std::vector<TrainingTriple> read_triples_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::vector<TrainingTriple> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const std::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    TrainingTriple t;
    t.doc_id = j.at("doc_id").get<std::string>();
    t.query_id = j.at("query_id").get<std::string>();
    t.ref_id = j.at("ref_id").get<std::string>();
    t.article_id = j.value("article_id", std::string());
    t.doc_tokens = string_array(j, "doc_tokens", lineno);
    t.raw_doc_tokens = string_array(j, "raw_doc_tokens", lineno);
    t.query_tokens = string_array(j, "query_tokens", lineno);
    t.summary_tokens = string_array(j, "summary_tokens", lineno);
    t.x_ptr = j.at("x_ptr").get<std::vector<int>>();
    t.pointed_index = j.at("pointed_index").get<std::vector<long>>();
    if (t.x_ptr.size() != t.summary_tokens.size() ||
        t.pointed_index.size() != t.summary_tokens.size()) {
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": supervision arrays do not match summary length");
    }
    if (t.raw_doc_tokens.size() != t.doc_tokens.size()) {
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": raw_doc_tokens does not match doc_tokens length");
    }
    for (std::size_t i = 0; i < t.summary_tokens.size(); ++i) {
      const long p = t.pointed_index[i];
      const bool on = t.x_ptr[i] == 1;
      if (on != (p >= 0) ||
          (on && (p >= static_cast<long>(t.doc_tokens.size()) ||
                  t.doc_tokens[static_cast<std::size_t>(p)] !=
                      t.summary_tokens[i]))) {
        throw ParseError(path + ":" + std::to_string(lineno) +
                         ": inconsistent pointer supervision at position " +
                         std::to_string(i));
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace qsum
