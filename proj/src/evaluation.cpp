// SPDX-License-Identifier: Apache-2.0

#include "qsum/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "qsum/rng.hpp"
#include "qsum/textprep.hpp"

namespace qsum {

namespace {

// Joined n-gram keys; \x1f cannot appear inside a token.
void count_ngrams(const Tokens& toks, std::size_t n,
                  std::map<std::string, std::size_t>& out) {
  if (n == 0 || toks.size() < n) return;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    std::string key = toks[i];
    for (std::size_t j = 1; j < n; ++j) {
      key += '\x1f';
      key += toks[i + j];
    }
    ++out[key];
  }
}

RougeScore from_counts(const std::map<std::string, std::size_t>& cand,
                       std::size_t cand_total,
                       const std::map<std::string, std::size_t>& ref,
                       std::size_t ref_total) {
  std::size_t match = 0;
  for (const auto& [key, c] : cand) {
    auto it = ref.find(key);
    if (it != ref.end()) match += std::min(c, it->second);
  }
  RougeScore s;
  if (ref_total) s.recall = double(match) / double(ref_total);
  if (cand_total) s.precision = double(match) / double(cand_total);
  if (s.recall + s.precision > 0.0) {
    s.f1 = 2.0 * s.recall * s.precision / (s.recall + s.precision);
  }
  return s;
}

constexpr std::size_t kSkipGap = 4;
const std::string kBegin = "\x02";  // begin-of-sequence marker

void count_skip_pairs(const Tokens& toks,
                      std::map<std::string, std::size_t>& out,
                      std::size_t& total) {
  Tokens aug;
  aug.reserve(toks.size() + 1);
  aug.push_back(kBegin);
  aug.insert(aug.end(), toks.begin(), toks.end());
  total = 0;
  for (std::size_t i = 0; i < aug.size(); ++i) {
    const std::size_t hi = std::min(aug.size(), i + kSkipGap + 1);
    for (std::size_t j = i + 1; j < hi; ++j) {
      ++out[aug[i] + '\x1f' + aug[j]];
      ++total;
    }
  }
}

}  // namespace

RougeScore rouge_n(const Tokens& cand, const Tokens& ref, std::size_t n) {
  if (n == 0) throw std::invalid_argument("rouge_n: n must be positive");
  std::map<std::string, std::size_t> cc, rc;
  count_ngrams(cand, n, cc);
  count_ngrams(ref, n, rc);
  const std::size_t ct = cand.size() >= n ? cand.size() - n + 1 : 0;
  const std::size_t rt = ref.size() >= n ? ref.size() - n + 1 : 0;
  return from_counts(cc, ct, rc, rt);
}

RougeScore rouge_l(const Tokens& cand, const Tokens& ref) {
  const std::size_t m = cand.size(), n = ref.size();
  RougeScore s;
  if (m == 0 || n == 0) return s;
  std::vector<std::size_t> prev(n + 1, 0), cur(n + 1, 0);
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 1; j <= n; ++j) {
      if (cand[i - 1] == ref[j - 1]) {
        cur[j] = prev[j - 1] + 1;
      } else {
        cur[j] = std::max(prev[j], cur[j - 1]);
      }
    }
    std::swap(prev, cur);
  }
  const double lcs = double(prev[n]);
  s.recall = lcs / double(n);
  s.precision = lcs / double(m);
  if (s.recall + s.precision > 0.0) {
    s.f1 = 2.0 * s.recall * s.precision / (s.recall + s.precision);
  }
  return s;
}

RougeScore rouge_su4(const Tokens& cand, const Tokens& ref) {
  std::map<std::string, std::size_t> cc, rc;
  std::size_t ct = 0, rt = 0;
  count_skip_pairs(cand, cc, ct);
  count_skip_pairs(ref, rc, rt);
  return from_counts(cc, ct, rc, rt);
}

// ---------------------------------------------------------------------------
// Porter stemmer, following the 1980 paper's rule lists.

namespace {

class Porter {
 public:
  explicit Porter(std::string w) : b_(std::move(w)) {}

  std::string run() {
    if (b_.size() <= 2) return b_;
    for (char c : b_) {
      if (c < 'a' || c > 'z') return b_;  // stem only plain lowercase words
    }
    step1a();
    step1b();
    step1c();
    step2();
    step3();
    step4();
    step5a();
    step5b();
    return b_;
  }

 private:
  std::string b_;

  bool is_consonant(std::size_t i) const {
    switch (b_[i]) {
      case 'a': case 'e': case 'i': case 'o': case 'u':
        return false;
      case 'y':
        return i == 0 ? true : !is_consonant(i - 1);
      default:
        return true;
    }
  }

  // Number of VC sequences in b_[0, end).
  std::size_t measure(std::size_t end) const {
    std::size_t m = 0, i = 0;
    while (i < end && is_consonant(i)) ++i;
    while (i < end) {
      while (i < end && !is_consonant(i)) ++i;
      if (i >= end) break;
      ++m;
      while (i < end && is_consonant(i)) ++i;
    }
    return m;
  }

  bool has_vowel(std::size_t end) const {
    for (std::size_t i = 0; i < end; ++i)
      if (!is_consonant(i)) return true;
    return false;
  }

  bool double_consonant() const {
    const std::size_t n = b_.size();
    return n >= 2 && b_[n - 1] == b_[n - 2] && is_consonant(n - 1);
  }

  // consonant-vowel-consonant ending where the final consonant is not w/x/y.
  bool cvc(std::size_t end) const {
    if (end < 3) return false;
    const std::size_t i = end - 1;
    if (!is_consonant(i) || is_consonant(i - 1) || !is_consonant(i - 2))
      return false;
    const char c = b_[i];
    return c != 'w' && c != 'x' && c != 'y';
  }

  bool ends(const char* suffix) const {
    const std::size_t n = std::strlen(suffix);
    return b_.size() >= n && b_.compare(b_.size() - n, n, suffix) == 0;
  }

  std::size_t stem_len(const char* suffix) const {
    return b_.size() - std::strlen(suffix);
  }

  void set_suffix(const char* suffix, const char* repl) {
    b_.replace(stem_len(suffix), std::strlen(suffix), repl);
  }

  // Replace suffix when the stem before it has measure > min_m.
  bool replace_m(const char* suffix, const char* repl, std::size_t min_m) {
    if (!ends(suffix)) return false;
    if (measure(stem_len(suffix)) > min_m) set_suffix(suffix, repl);
    return true;  // suffix matched, stop scanning this rule list
  }

  void step1a() {
    if (ends("sses")) set_suffix("sses", "ss");
    else if (ends("ies")) set_suffix("ies", "i");
    else if (ends("ss")) {}
    else if (ends("s")) b_.pop_back();
  }

  void step1b() {
    bool cleanup = false;
    if (ends("eed")) {
      if (measure(stem_len("eed")) > 0) b_.pop_back();
    } else if (ends("ed") && has_vowel(stem_len("ed"))) {
      b_.resize(stem_len("ed"));
      cleanup = true;
    } else if (ends("ing") && has_vowel(stem_len("ing"))) {
      b_.resize(stem_len("ing"));
      cleanup = true;
    }
    if (!cleanup) return;
    if (ends("at")) set_suffix("at", "ate");
    else if (ends("bl")) set_suffix("bl", "ble");
    else if (ends("iz")) set_suffix("iz", "ize");
    else if (double_consonant()) {
      const char c = b_.back();
      if (c != 'l' && c != 's' && c != 'z') b_.pop_back();
    } else if (measure(b_.size()) == 1 && cvc(b_.size())) {
      b_.push_back('e');
    }
  }

  void step1c() {
    if (ends("y") && has_vowel(stem_len("y"))) b_.back() = 'i';
  }

  void step2() {
    static const std::pair<const char*, const char*> rules[] = {
        {"ational", "ate"}, {"tional", "tion"}, {"enci", "ence"},
        {"anci", "ance"},   {"izer", "ize"},    {"abli", "able"},
        {"alli", "al"},     {"entli", "ent"},   {"eli", "e"},
        {"ousli", "ous"},   {"ization", "ize"}, {"ation", "ate"},
        {"ator", "ate"},    {"alism", "al"},    {"iveness", "ive"},
        {"fulness", "ful"}, {"ousness", "ous"}, {"aliti", "al"},
        {"iviti", "ive"},   {"biliti", "ble"}};
    for (const auto& [suf, repl] : rules) {
      if (replace_m(suf, repl, 0)) return;
    }
  }

  void step3() {
    static const std::pair<const char*, const char*> rules[] = {
        {"icate", "ic"}, {"ative", ""}, {"alize", "al"},
        {"iciti", "ic"}, {"ical", "ic"}, {"ful", ""}, {"ness", ""}};
    for (const auto& [suf, repl] : rules) {
      if (replace_m(suf, repl, 0)) return;
    }
  }

  void step4() {
    static const char* suffixes[] = {"al",  "ance", "ence", "er",   "ic",
                                     "able", "ible", "ant",  "ement", "ment",
                                     "ent", "ou",   "ism",  "ate",  "iti",
                                     "ous", "ive",  "ize"};
    if (ends("ion")) {
      const std::size_t st = stem_len("ion");
      if (st > 0 && (b_[st - 1] == 's' || b_[st - 1] == 't') &&
          measure(st) > 1) {
        b_.resize(st);
      }
      return;
    }
    for (const char* suf : suffixes) {
      if (ends(suf)) {
        if (measure(stem_len(suf)) > 1) b_.resize(stem_len(suf));
        return;
      }
    }
  }

  void step5a() {
    if (!ends("e")) return;
    const std::size_t st = b_.size() - 1;
    const std::size_t m = measure(st);
    if (m > 1 || (m == 1 && !cvc(st))) b_.pop_back();
  }

  void step5b() {
    if (b_.size() >= 2 && b_.back() == 'l' && double_consonant() &&
        measure(b_.size() - 1) > 1) {
      b_.pop_back();
    }
  }
};

}  // namespace

std::string porter_stem(const std::string& word) { return Porter(word).run(); }

Tokens stem_tokens(const Tokens& toks) {
  Tokens out;
  out.reserve(toks.size());
  for (const auto& t : toks) out.push_back(porter_stem(t));
  return out;
}

// ---------------------------------------------------------------------------

Tokens first_query_sentence(const Tokens& doc_tokens, const Tokens& query) {
  if (doc_tokens.empty()) {
    throw std::invalid_argument("first_query_sentence: empty document");
  }
  std::vector<Tokens> sentences;
  Tokens cur;
  for (const auto& tok : doc_tokens) {
    cur.push_back(tok);
    if (tok == "." || tok == "!" || tok == "?") {
      sentences.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) sentences.push_back(std::move(cur));

  if (!query.empty()) {
    for (const auto& s : sentences) {
      if (query.size() > s.size()) continue;
      for (std::size_t d = 0; d + query.size() <= s.size(); ++d) {
        bool match = true;
        for (std::size_t k = 0; k < query.size(); ++k) {
          if (s[d + k] != query[k]) {
            match = false;
            break;
          }
        }
        if (match) return s;
      }
    }
  }
  return sentences.front();
}

namespace {

std::pair<unsigned long, unsigned long> parse_query_id(const std::string& id) {
  const std::size_t dot = id.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 >= id.size()) {
    throw std::invalid_argument("malformed query id '" + id + "'");
  }
  try {
    return {std::stoul(id.substr(0, dot)), std::stoul(id.substr(dot + 1))};
  } catch (const std::exception&) {
    throw std::invalid_argument("malformed query id '" + id + "'");
  }
}

}  // namespace

ReferenceSet offset_queries(const ReferenceSet& in) {
  std::map<unsigned long, std::vector<std::pair<unsigned long, std::string>>>
      by_doc;
  for (const auto& [id, _] : in.refs) {
    const auto [d, q] = parse_query_id(id);
    by_doc[d].push_back({q, id});
  }
  ReferenceSet out;
  for (auto& [d, queries] : by_doc) {
    std::sort(queries.begin(), queries.end());
    const std::size_t m = queries.size();
    for (std::size_t j = 0; j < m; ++j) {
      const std::string& this_id = queries[j].second;
      const std::string& next_id = queries[(j + 1) % m].second;
      out.refs[this_id] = in.refs.at(next_id);
    }
  }
  return out;
}

std::vector<std::pair<std::string, Tokens>> read_decoded(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_decoded: cannot open " + path);
  std::vector<std::pair<std::string, Tokens>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error("read_decoded: " + path + ":" +
                               std::to_string(lineno) + ": missing tab");
    }
    Tokens toks;
    std::istringstream ts(line.substr(tab + 1));
    std::string tok;
    while (ts >> tok) toks.push_back(tok);
    out.push_back({line.substr(0, tab), std::move(toks)});
  }
  return out;
}

EvalResult evaluate_run(
    const std::vector<std::pair<std::string, Tokens>>& decoded,
    const ReferenceSet& refs, bool stem, std::uint64_t bootstrap_seed,
    std::size_t resamples) {
  if (decoded.empty()) {
    throw std::invalid_argument("evaluate_run: no decoded pairs");
  }
  std::vector<std::string> missing;
  for (const auto& [id, _] : decoded) {
    if (!refs.refs.count(id)) missing.push_back(id);
  }
  if (!missing.empty()) {
    std::string msg = "evaluate_run: query ids without references:";
    for (const auto& id : missing) msg += " " + id;
    throw std::invalid_argument(msg);
  }

  const std::vector<std::string> metric_names = {"rouge_1", "rouge_2",
                                                 "rouge_l", "rouge_su4"};
  auto apply = [](const std::string& name, const Tokens& c, const Tokens& r) {
    if (name == "rouge_1") return rouge_n(c, r, 1);
    if (name == "rouge_2") return rouge_n(c, r, 2);
    if (name == "rouge_l") return rouge_l(c, r);
    return rouge_su4(c, r);
  };

  EvalResult res;
  double total_len = 0.0;
  for (const auto& [id, cand_raw] : decoded) {
    res.query_ids.push_back(id);
    total_len += double(cand_raw.size());
    const Tokens cand = stem ? stem_tokens(cand_raw) : cand_raw;
    std::vector<Tokens> rlist = refs.refs.at(id);
    if (stem) {
      for (auto& r : rlist) r = stem_tokens(r);
    }
    for (const auto& name : metric_names) {
      res.per_query[name].push_back(best_match(
          cand, rlist, [&](const Tokens& c, const Tokens& r) {
            return apply(name, c, r);
          }));
    }
  }
  res.mean_output_len = total_len / double(decoded.size());

  const std::size_t n = decoded.size();
  for (const auto& name : metric_names) {
    const auto& rows = res.per_query[name];
    MetricSummary ms;
    for (const auto& s : rows) {
      ms.mean_recall += s.recall;
      ms.mean_precision += s.precision;
      ms.mean_f1 += s.f1;
    }
    ms.mean_recall /= double(n);
    ms.mean_precision /= double(n);
    ms.mean_f1 /= double(n);
    res.summary[name] = ms;
  }

  if (resamples > 0) {
    RngStream rng(bootstrap_seed);
    std::map<std::string, std::vector<double>> boot;
    for (std::size_t r = 0; r < resamples; ++r) {
      std::vector<std::size_t> draw(n);
      for (auto& d : draw) d = static_cast<std::size_t>(rng.below(n));
      for (const auto& name : metric_names) {
        const auto& rows = res.per_query[name];
        double mean = 0.0;
        for (std::size_t d : draw) mean += rows[d].f1;
        boot[name].push_back(mean / double(n));
      }
    }
    // nearest-rank percentiles at 2.5% and 97.5%
    for (const auto& name : metric_names) {
      auto& means = boot[name];
      std::sort(means.begin(), means.end());
      const std::size_t lo =
          static_cast<std::size_t>(std::ceil(0.025 * double(resamples))) - 1;
      const std::size_t hi =
          static_cast<std::size_t>(std::ceil(0.975 * double(resamples))) - 1;
      res.summary[name].ci_lo = means[std::min(lo, resamples - 1)];
      res.summary[name].ci_hi = means[std::min(hi, resamples - 1)];
    }
  }
  return res;
}

std::string format_report(
    const std::vector<std::pair<std::string, EvalResult>>& rows) {
  std::ostringstream os;
  os << "run                  R-1 F  [95% CI]        R-2 F  [95% CI]        "
        "R-L F  [95% CI]        R-SU4 F  [95% CI]      avg-len\n";
  char buf[256];
  for (const auto& [label, r] : rows) {
    auto cell = [&](const char* name) {
      const MetricSummary& m = r.summary.at(name);
      char c[64];
      std::snprintf(c, sizeof(c), "%5.2f  [%5.2f,%5.2f]", 100.0 * m.mean_f1,
                    100.0 * m.ci_lo, 100.0 * m.ci_hi);
      return std::string(c);
    };
    std::snprintf(buf, sizeof(buf), "%-20s %s  %s  %s  %s  %7.2f\n",
                  label.c_str(), cell("rouge_1").c_str(),
                  cell("rouge_2").c_str(), cell("rouge_l").c_str(),
                  cell("rouge_su4").c_str(), r.mean_output_len);
    os << buf;
  }
  return os.str();
}

}  // namespace qsum
