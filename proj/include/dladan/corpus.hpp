#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "dladan/mat.hpp"

namespace dladan {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

enum class PenaltyKind { kMonths, kLife, kDeath, kNone };

struct RawPenalty {
  PenaltyKind kind = PenaltyKind::kNone;
  int months = 0;  // meaningful only for kMonths

  static RawPenalty of_months(int m) { return {PenaltyKind::kMonths, m}; }
  static RawPenalty life() { return {PenaltyKind::kLife, 0}; }
  static RawPenalty death() { return {PenaltyKind::kDeath, 0}; }
  static RawPenalty none() { return {PenaltyKind::kNone, 0}; }

  bool operator==(const RawPenalty& o) const { return kind == o.kind && months == o.months; }
};

// One legal case: sentence-segmented fact tokens plus labels. Cases loaded
// from multi-label records keep the extra labels until preprocess removes
// the whole case; after preprocess both extra lists are empty.
struct LawCase {
  std::vector<std::vector<std::string>> fact;
  int law_label = -1;
  int charge_label = -1;
  int penalty_label = -1;  // -1 until bucketed by preprocess
  RawPenalty raw_penalty;
  std::vector<int> extra_law_labels;
  std::vector<int> extra_charge_labels;
};

struct LawArticle {
  int article_id = -1;
  std::vector<std::string> text;
};

enum class Split { kTrain, kValidation, kTest };

struct Dataset {
  std::vector<LawCase> cases;
  std::vector<LawArticle> articles;  // articles[i] belongs to law label i once aligned
  std::vector<std::string> law_names;
  std::vector<std::string> charge_names;
  Split split = Split::kTrain;

  int num_law() const { return static_cast<int>(law_names.size()); }
  int num_charge() const { return static_cast<int>(charge_names.size()); }
};

// 11 penalty classes ordered by severity:
//   0 death/life, 1 (120,inf), 2 (84,120], 3 (60,84], 4 (36,60], 5 (24,36],
//   6 (12,24], 7 (9,12], 8 (6,9], 9 (0,6], 10 none (incl. 0 months).
struct PenaltyBucketTable {
  static constexpr int kNumClasses = 11;
  std::array<int, 9> month_upper_bounds = {120, 84, 60, 36, 24, 12, 9, 6, 0};

  static PenaltyBucketTable standard() { return PenaltyBucketTable{}; }

  int bucket(const RawPenalty& p) const {
    switch (p.kind) {
      case PenaltyKind::kDeath:
      case PenaltyKind::kLife:
        return 0;
      case PenaltyKind::kNone:
        return 10;
      case PenaltyKind::kMonths: {
        require(p.months >= 0, "bucket_penalty: negative months");
        if (p.months == 0) return 10;
        for (int k = 0; k < 9; ++k)
          if (p.months > month_upper_bounds[static_cast<size_t>(k)]) return k + 1;
        return 10;  // unreachable: months > 0 exceeds the 0 bound
      }
    }
    throw std::runtime_error("bucket_penalty: bad penalty kind");
  }
};

inline int bucket_penalty(const RawPenalty& raw, const PenaltyBucketTable& buckets) {
  return buckets.bucket(raw);
}

// ---------------------------------------------------------------------------
// Tokenization / sentence segmentation
// ---------------------------------------------------------------------------

// Sentence-final punctuation, ASCII and CJK forms.
inline const std::vector<std::string>& sentence_delimiters() {
  static const std::vector<std::string> d = {"\xE3\x80\x82", "\xEF\xBC\x81", "\xEF\xBC\x9F",
                                             "\xEF\xBC\x9B", ".",            "!",
                                             "?",            ";"};
  return d;
}

inline std::vector<std::string> split_sentences(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  size_t i = 0;
  while (i < text.size()) {
    bool matched = false;
    for (const auto& d : sentence_delimiters()) {
      if (text.compare(i, d.size(), d) == 0) {
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
        i += d.size();
        matched = true;
        break;
      }
    }
    if (!matched) cur.push_back(text[i++]);
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline std::vector<std::string> whitespace_tokenize(const std::string& sentence) {
  std::vector<std::string> toks;
  std::istringstream is(sentence);
  std::string t;
  while (is >> t) toks.push_back(t);
  return toks;
}

using TokenizerFn = std::function<std::vector<std::string>(const std::string&)>;
using SegmenterFn = std::function<std::vector<std::string>(const std::string&)>;

inline std::vector<std::vector<std::string>> segment_fact(const std::string& fact,
                                                          const SegmenterFn& segment,
                                                          const TokenizerFn& tokenize) {
  std::vector<std::vector<std::string>> out;
  for (const auto& s : segment(fact)) {
    auto toks = tokenize(s);
    if (!toks.empty()) out.push_back(std::move(toks));
  }
  return out;
}

inline const std::unordered_set<std::string>& stop_words() {
  static const std::unordered_set<std::string> s = {
      "a",  "an",  "and", "are",  "as", "at",   "be",   "by",   "for", "from", "in",
      "is", "it",  "of",  "on",   "or", "that", "the",  "this", "to",  "was",  "were",
      "的", "了",  "是",  "在",   "和", "与",   "及",   "而",   "或",  "就",   "其",
      "被", "对",  "将",  "个",   "等"};
  return s;
}

inline bool is_meaningful_token(const std::string& tok) {
  if (tok.empty()) return false;
  if (stop_words().count(tok)) return false;
  // punctuation-only tokens are not meaningful
  bool all_punct = true;
  for (unsigned char c : tok) {
    if (std::isalnum(c) || c >= 0x80) {
      all_punct = false;
      break;
    }
  }
  if (all_punct) return false;
  // CJK punctuation arrives as multi-byte sequences; screen the common ones
  static const std::unordered_set<std::string> cjk_punct = {
      "\xE3\x80\x82", "\xEF\xBC\x81", "\xEF\xBC\x9F", "\xEF\xBC\x9B", "\xEF\xBC\x8C",
      "\xE3\x80\x81", "\xEF\xBC\x9A", "\xE2\x80\x9C", "\xE2\x80\x9D"};
  return !cjk_punct.count(tok);
}

inline long count_meaningful_tokens(const LawCase& c) {
  long n = 0;
  for (const auto& s : c.fact)
    for (const auto& t : s)
      if (is_meaningful_token(t)) ++n;
  return n;
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

enum class Schema { kCail, kGeneric };

namespace detail {

inline int intern_label(std::vector<std::string>& names, std::unordered_map<std::string, int>& map,
                        const std::string& name) {
  auto it = map.find(name);
  if (it != map.end()) return it->second;
  int id = static_cast<int>(names.size());
  names.push_back(name);
  map.emplace(name, id);
  return id;
}

inline std::string label_to_string(const nlohmann::json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number_integer()) return std::to_string(j.get<long long>());
  throw std::runtime_error("label must be a string or integer");
}

inline RawPenalty parse_penalty_generic(const nlohmann::json& j) {
  if (j.is_string()) {
    std::string s = j.get<std::string>();
    if (s == "life") return RawPenalty::life();
    if (s == "death") return RawPenalty::death();
    if (s == "none") return RawPenalty::none();
    throw std::runtime_error("penalty string must be one of life/death/none, got \"" + s + "\"");
  }
  if (j.is_object() && j.contains("months")) {
    int m = j.at("months").get<int>();
    require(m >= 0, "field penalty.months must be non-negative, got " + std::to_string(m));
    return RawPenalty::of_months(m);
  }
  throw std::runtime_error("penalty must be {\"months\": int} or \"life\"/\"death\"/\"none\"");
}

inline RawPenalty parse_penalty_cail(const nlohmann::json& meta) {
  const auto& t = meta.at("term_of_imprisonment");
  if (t.value("death_penalty", false)) return RawPenalty::death();
  if (t.value("life_imprisonment", false)) return RawPenalty::life();
  int m = t.at("imprisonment").get<int>();
  require(m >= 0, "field imprisonment must be non-negative, got " + std::to_string(m));
  return m == 0 ? RawPenalty::none() : RawPenalty::of_months(m);
}

}  // namespace detail

struct LoadOptions {
  SegmenterFn segmenter = split_sentences;
  TokenizerFn tokenizer = whitespace_tokenize;
};

inline std::vector<LawArticle> load_articles(const std::string& path,
                                             std::vector<std::string>* names_out,
                                             const LoadOptions& opt = {}) {
  std::ifstream in(path);
  require(in.good(), "load_articles: cannot open " + path);
  std::vector<LawArticle> arts;
  std::vector<std::string> names;
  std::unordered_map<std::string, int> seen;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      std::string id = detail::label_to_string(j.at("id"));
      require(!seen.count(id), "line " + std::to_string(lineno) + ": duplicate article id " + id);
      std::string text = j.at("text").get<std::string>();
      LawArticle a;
      a.article_id = static_cast<int>(arts.size());
      for (const auto& sent : opt.segmenter(text))
        for (auto& t : opt.tokenizer(sent)) a.text.push_back(std::move(t));
      require(!a.text.empty(), "line " + std::to_string(lineno) + ": article text is empty");
      seen.emplace(id, a.article_id);
      names.push_back(id);
      arts.push_back(std::move(a));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (names_out) *names_out = std::move(names);
  return arts;
}

// Loads a JSON Lines case file. Labels are interned in file order; penalty
// stays raw (penalty_label = -1) until preprocess buckets it. If an article
// file is given, every law label must name a known article.
inline Dataset load_dataset(const std::string& path, Schema schema,
                            const std::string& article_path = "", const LoadOptions& opt = {}) {
  std::ifstream in(path);
  require(in.good(), "load_dataset: cannot open " + path);
  Dataset ds;
  std::unordered_map<std::string, int> law_map, charge_map;

  std::vector<std::string> article_names;
  if (!article_path.empty()) {
    ds.articles = load_articles(article_path, &article_names, opt);
    for (size_t i = 0; i < article_names.size(); ++i)
      detail::intern_label(ds.law_names, law_map, article_names[i]);
  }

  auto known_laws = [&]() {
    std::string s;
    for (const auto& n : ds.law_names) s += (s.empty() ? "" : ", ") + n;
    return s;
  };

  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      LawCase c;
      std::vector<std::string> laws, charges;
      if (schema == Schema::kGeneric) {
        if (!j.contains("fact")) throw std::runtime_error("missing field \"fact\"");
        if (!j.contains("law")) throw std::runtime_error("missing field \"law\"");
        if (!j.contains("charge")) throw std::runtime_error("missing field \"charge\"");
        if (!j.contains("penalty")) throw std::runtime_error("missing field \"penalty\"");
        c.fact = segment_fact(j.at("fact").get<std::string>(), opt.segmenter, opt.tokenizer);
        laws.push_back(detail::label_to_string(j.at("law")));
        charges.push_back(detail::label_to_string(j.at("charge")));
        c.raw_penalty = detail::parse_penalty_generic(j.at("penalty"));
      } else {
        if (!j.contains("fact")) throw std::runtime_error("missing field \"fact\"");
        if (!j.contains("meta")) throw std::runtime_error("missing field \"meta\"");
        const auto& meta = j.at("meta");
        c.fact = segment_fact(j.at("fact").get<std::string>(), opt.segmenter, opt.tokenizer);
        for (const auto& a : meta.at("relevant_articles"))
          laws.push_back(detail::label_to_string(a));
        for (const auto& a : meta.at("accusation")) charges.push_back(detail::label_to_string(a));
        c.raw_penalty = detail::parse_penalty_cail(meta);
      }
      require(!c.fact.empty(), "fact contains no sentences");
      require(!laws.empty(), "record names no law article");
      require(!charges.empty(), "record names no charge");
      for (size_t i = 0; i < laws.size(); ++i) {
        int id;
        if (!article_path.empty()) {
          auto it = law_map.find(laws[i]);
          if (it == law_map.end())
            throw std::runtime_error("unknown law label \"" + laws[i] + "\"; known labels: " +
                                     known_laws());
          id = it->second;
        } else {
          id = detail::intern_label(ds.law_names, law_map, laws[i]);
        }
        if (i == 0)
          c.law_label = id;
        else
          c.extra_law_labels.push_back(id);
      }
      for (size_t i = 0; i < charges.size(); ++i) {
        int id = detail::intern_label(ds.charge_names, charge_map, charges[i]);
        if (i == 0)
          c.charge_label = id;
        else
          c.extra_charge_labels.push_back(id);
      }
      ds.cases.push_back(std::move(c));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

struct PreprocessOptions {
  long min_tokens = 10;
  long min_label_count = 100;
  int max_sentences = 15;
  int max_tokens_per_sentence = 100;
  PenaltyBucketTable buckets = PenaltyBucketTable::standard();
};

namespace detail {

inline void truncate_fact(LawCase& c, const PreprocessOptions& o) {
  if (static_cast<int>(c.fact.size()) > o.max_sentences) c.fact.resize(o.max_sentences);
  for (auto& s : c.fact)
    if (static_cast<int>(s.size()) > o.max_tokens_per_sentence)
      s.resize(o.max_tokens_per_sentence);
}

}  // namespace detail

// Filters short / multi-label cases, drops rare labels to a fixpoint,
// re-indexes labels densely, fills penalty labels. Idempotent.
inline Dataset preprocess(const Dataset& input, const PreprocessOptions& opt = {}) {
  std::vector<LawCase> kept;
  for (LawCase c : input.cases) {
    if (!c.extra_law_labels.empty() || !c.extra_charge_labels.empty()) continue;
    detail::truncate_fact(c, opt);
    if (c.fact.empty()) continue;
    if (count_meaningful_tokens(c) < opt.min_tokens) continue;
    kept.push_back(std::move(c));
  }

  // Drop under-represented labels until stable: removing one label's cases
  // can push another label below the threshold.
  std::vector<char> law_alive(input.law_names.size(), 1);
  std::vector<char> charge_alive(input.charge_names.size(), 1);
  bool changed = true;
  while (changed) {
    changed = false;
    std::vector<long> law_count(input.law_names.size(), 0);
    std::vector<long> charge_count(input.charge_names.size(), 0);
    for (const auto& c : kept) {
      if (!law_alive[static_cast<size_t>(c.law_label)] ||
          !charge_alive[static_cast<size_t>(c.charge_label)])
        continue;
      law_count[static_cast<size_t>(c.law_label)]++;
      charge_count[static_cast<size_t>(c.charge_label)]++;
    }
    for (size_t i = 0; i < law_alive.size(); ++i)
      if (law_alive[i] && law_count[i] < opt.min_label_count) {
        law_alive[i] = 0;
        changed = true;
      }
    for (size_t i = 0; i < charge_alive.size(); ++i)
      if (charge_alive[i] && charge_count[i] < opt.min_label_count) {
        charge_alive[i] = 0;
        changed = true;
      }
  }

  Dataset out;
  out.split = input.split;
  std::vector<int> law_remap(input.law_names.size(), -1);
  std::vector<int> charge_remap(input.charge_names.size(), -1);
  for (size_t i = 0; i < law_alive.size(); ++i)
    if (law_alive[i]) {
      law_remap[i] = static_cast<int>(out.law_names.size());
      out.law_names.push_back(input.law_names[i]);
      if (i < input.articles.size()) out.articles.push_back(input.articles[i]);
    }
  for (size_t i = 0; i < charge_alive.size(); ++i)
    if (charge_alive[i]) {
      charge_remap[i] = static_cast<int>(out.charge_names.size());
      out.charge_names.push_back(input.charge_names[i]);
    }
  for (size_t i = 0; i < out.articles.size(); ++i)
    out.articles[i].article_id = static_cast<int>(i);

  for (LawCase c : kept) {
    int l = law_remap[static_cast<size_t>(c.law_label)];
    int g = charge_remap[static_cast<size_t>(c.charge_label)];
    if (l < 0 || g < 0) continue;
    c.law_label = l;
    c.charge_label = g;
    c.penalty_label = bucket_penalty(c.raw_penalty, opt.buckets);
    out.cases.push_back(std::move(c));
  }
  require(!out.cases.empty(),
          "preprocess: no cases survive filtering; lower min_tokens/min_label_count");
  return out;
}

// Label filters computed on the training split and applied to all three, so
// label indices agree across splits.
inline void preprocess_splits(Dataset& train, Dataset& valid, Dataset& test,
                              const PreprocessOptions& opt = {}) {
  Dataset ptrain = preprocess(train, opt);
  std::unordered_map<std::string, int> law_map, charge_map;
  for (size_t i = 0; i < ptrain.law_names.size(); ++i)
    law_map[ptrain.law_names[i]] = static_cast<int>(i);
  for (size_t i = 0; i < ptrain.charge_names.size(); ++i)
    charge_map[ptrain.charge_names[i]] = static_cast<int>(i);

  auto apply = [&](const Dataset& in) {
    Dataset out;
    out.split = in.split;
    out.law_names = ptrain.law_names;
    out.charge_names = ptrain.charge_names;
    out.articles = ptrain.articles;
    for (LawCase c : in.cases) {
      if (!c.extra_law_labels.empty() || !c.extra_charge_labels.empty()) continue;
      detail::truncate_fact(c, opt);
      if (c.fact.empty() || count_meaningful_tokens(c) < opt.min_tokens) continue;
      auto li = law_map.find(in.law_names[static_cast<size_t>(c.law_label)]);
      auto ci = charge_map.find(in.charge_names[static_cast<size_t>(c.charge_label)]);
      if (li == law_map.end() || ci == charge_map.end()) continue;
      c.law_label = li->second;
      c.charge_label = ci->second;
      c.penalty_label = bucket_penalty(c.raw_penalty, opt.buckets);
      out.cases.push_back(std::move(c));
    }
    return out;
  };
  valid = apply(valid);
  test = apply(test);
  train = std::move(ptrain);
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  std::vector<std::string> tokens;  // index -> token; tokens[0]="<pad>", tokens[1]="<unk>"
  std::unordered_map<std::string, int> index;
  int embedding_dim = 0;
  Mat embedding;  // initial rows, one per token; trainable copies live in the model

  int id(const std::string& tok) const {
    auto it = index.find(tok);
    return it == index.end() ? kUnk : it->second;
  }

  int size() const { return static_cast<int>(tokens.size()); }

  std::string hash() const {
    Fnv1a h;
    h.feed(static_cast<uint64_t>(tokens.size()));
    h.feed(static_cast<uint64_t>(embedding_dim));
    for (const auto& t : tokens) h.feed(t);
    return h.hex();
  }
};

namespace detail {

inline std::vector<std::pair<std::string, long>> token_frequencies(const Dataset& ds) {
  std::unordered_map<std::string, long> freq;
  for (const auto& c : ds.cases)
    for (const auto& s : c.fact)
      for (const auto& t : s) freq[t]++;
  for (const auto& a : ds.articles)
    for (const auto& t : a.text) freq[t]++;
  std::vector<std::pair<std::string, long>> out(freq.begin(), freq.end());
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return out;
}

inline Vocab vocab_skeleton(const Dataset& train, long min_frequency, int embedding_dim) {
  require(!train.cases.empty(), "build_vocab: empty training split");
  Vocab v;
  v.embedding_dim = embedding_dim;
  v.tokens = {"<pad>", "<unk>"};
  for (const auto& [tok, n] : token_frequencies(train))
    if (n >= min_frequency) v.tokens.push_back(tok);
  for (size_t i = 0; i < v.tokens.size(); ++i) v.index[v.tokens[i]] = static_cast<int>(i);
  return v;
}

}  // namespace detail

// Random-init vocabulary: rows uniform in [-0.1, 0.1]; the pad row stays zero.
inline Vocab build_vocab(const Dataset& train, long min_frequency, int embedding_dim,
                         uint64_t seed) {
  Vocab v = detail::vocab_skeleton(train, min_frequency, embedding_dim);
  std::mt19937_64 rng(seed);
  v.embedding = Mat::uniform(v.size(), embedding_dim, -0.1, 0.1, rng);
  for (int j = 0; j < embedding_dim; ++j) v.embedding(Vocab::kPad, j) = 0.0;
  return v;
}

// Imported vectors: first line "<vocab_size> <dim>", then "token v1 ... vdim".
// Tokens in the vocabulary but absent from the file get seeded random rows.
inline Vocab build_vocab_imported(const Dataset& train, long min_frequency,
                                  const std::string& path, uint64_t seed) {
  std::ifstream in(path);
  require(in.good(), "build_vocab_imported: cannot open " + path);
  std::string header;
  require(static_cast<bool>(std::getline(in, header)), "embedding file is empty");
  std::istringstream hs(header);
  long file_vocab = 0;
  int dim = 0;
  if (!(hs >> file_vocab >> dim) || dim <= 0)
    throw std::runtime_error("embedding file format error: first line must be \"<vocab_size> <dim>\"");

  Vocab v = detail::vocab_skeleton(train, min_frequency, dim);
  std::mt19937_64 rng(seed);
  v.embedding = Mat::uniform(v.size(), dim, -0.1, 0.1, rng);
  for (int j = 0; j < dim; ++j) v.embedding(Vocab::kPad, j) = 0.0;

  std::string line;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    auto it = v.index.find(tok);
    std::vector<double> row(static_cast<size_t>(dim));
    for (int j = 0; j < dim; ++j)
      if (!(ls >> row[static_cast<size_t>(j)]))
        throw std::runtime_error(path + " line " + std::to_string(lineno) +
                                 ": expected " + std::to_string(dim) + " vector components");
    if (it == v.index.end()) continue;
    for (int j = 0; j < dim; ++j) v.embedding(it->second, j) = row[static_cast<size_t>(j)];
  }
  return v;
}

// ---------------------------------------------------------------------------
// Synthetic confusable corpus
// ---------------------------------------------------------------------------

struct SynthConfig {
  int num_communities = 4;
  int articles_per_community = 3;
  int shared_tokens_per_community = 6;
  int distinguishing_tokens_per_article = 3;
  double distinguishing_token_rate = 0.9;
  double head_tail_imbalance_ratio = 20.0;
  int cases_per_head_article = 300;
  int noise_vocab_size = 30;
  uint64_t rng_seed = 42;

  void validate() const {
    require(num_communities > 0 && articles_per_community > 0, "synth: counts must be positive");
    require(shared_tokens_per_community > 0 && distinguishing_tokens_per_article > 0,
            "synth: token counts must be positive");
    require(distinguishing_token_rate > 0.0 && distinguishing_token_rate <= 1.0,
            "synth: distinguishing_token_rate must lie in (0, 1]");
    require(head_tail_imbalance_ratio >= 1.0, "synth: imbalance ratio must be >= 1");
    require(cases_per_head_article > 0 && noise_vocab_size > 0, "synth: counts must be positive");
  }
};

namespace detail {

// Head article gets the full case budget, the tail gets budget/ratio
// (rounded up, floor 8); intermediate articles follow a geometric schedule.
inline int synth_case_count(const SynthConfig& cfg, int article_in_community) {
  int a = cfg.articles_per_community;
  double head = static_cast<double>(cfg.cases_per_head_article);
  double frac = a <= 1 ? 0.0 : static_cast<double>(article_in_community) / (a - 1);
  double n = head / std::pow(cfg.head_tail_imbalance_ratio, frac);
  return std::max(8, static_cast<int>(std::ceil(n)));
}

inline RawPenalty synth_penalty_for_bucket(int bucket) {
  switch (bucket) {
    case 0: return RawPenalty::life();
    case 1: return RawPenalty::of_months(150);
    case 2: return RawPenalty::of_months(100);
    case 3: return RawPenalty::of_months(72);
    case 4: return RawPenalty::of_months(48);
    case 5: return RawPenalty::of_months(30);
    case 6: return RawPenalty::of_months(18);
    case 7: return RawPenalty::of_months(11);
    case 8: return RawPenalty::of_months(8);
    case 9: return RawPenalty::of_months(3);
    default: return RawPenalty::none();
  }
}

}  // namespace detail

// Builds a corpus of confusable article communities: members of a community
// share its common tokens in every case, and each article plants its own
// distinguishing tokens with the configured rate. Case counts inside a
// community fall from head to tail by the imbalance ratio.
inline std::pair<Dataset, std::vector<LawArticle>> generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.rng_seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  Dataset ds;
  ds.split = Split::kTrain;
  std::vector<LawArticle> articles;

  int global_article = 0;
  for (int c = 0; c < cfg.num_communities; ++c) {
    std::vector<std::string> shared;
    for (int s = 0; s < cfg.shared_tokens_per_community; ++s)
      shared.push_back("share" + std::to_string(c) + "_" + std::to_string(s));

    for (int a = 0; a < cfg.articles_per_community; ++a, ++global_article) {
      std::vector<std::string> distinct;
      for (int d = 0; d < cfg.distinguishing_tokens_per_article; ++d)
        distinct.push_back("art" + std::to_string(global_article) + "_" + std::to_string(d));

      LawArticle art;
      art.article_id = global_article;
      art.text = shared;
      art.text.insert(art.text.end(), distinct.begin(), distinct.end());
      articles.push_back(art);
      ds.law_names.push_back("article_" + std::to_string(global_article));
      ds.charge_names.push_back("charge_" + std::to_string(global_article));

      int penalty_bucket = global_article % PenaltyBucketTable::kNumClasses;
      int n_cases = detail::synth_case_count(cfg, a);
      for (int n = 0; n < n_cases; ++n) {
        std::vector<std::string> toks = shared;
        for (const auto& d : distinct)
          if (coin(rng) <= cfg.distinguishing_token_rate) toks.push_back(d);
        int n_noise = 4 + static_cast<int>(rng() % 5);
        auto noise_token = [&] {
          return "noise" + std::to_string(rng() % static_cast<uint64_t>(cfg.noise_vocab_size));
        };
        for (int k = 0; k < n_noise; ++k) toks.push_back(noise_token());
        while (static_cast<int>(toks.size()) < 12) toks.push_back(noise_token());
        std::shuffle(toks.begin(), toks.end(), rng);

        LawCase lc;
        for (size_t i = 0; i < toks.size(); i += 8)
          lc.fact.emplace_back(toks.begin() + static_cast<long>(i),
                               toks.begin() + static_cast<long>(std::min(i + 8, toks.size())));
        lc.law_label = global_article;
        lc.charge_label = global_article;
        lc.raw_penalty = detail::synth_penalty_for_bucket(penalty_bucket);
        lc.penalty_label = penalty_bucket;
        ds.cases.push_back(std::move(lc));
      }
    }
  }
  ds.articles = articles;
  return {std::move(ds), std::move(articles)};
}

// Deterministic stratified split by law label.
inline void split_dataset(const Dataset& all, double valid_frac, double test_frac, uint64_t seed,
                          Dataset& train, Dataset& valid, Dataset& test) {
  require(valid_frac >= 0 && test_frac >= 0 && valid_frac + test_frac < 1.0,
          "split_dataset: bad fractions");
  auto clone_meta = [&](Split s) {
    Dataset d;
    d.split = s;
    d.articles = all.articles;
    d.law_names = all.law_names;
    d.charge_names = all.charge_names;
    return d;
  };
  train = clone_meta(Split::kTrain);
  valid = clone_meta(Split::kValidation);
  test = clone_meta(Split::kTest);

  std::map<int, std::vector<size_t>> by_label;
  for (size_t i = 0; i < all.cases.size(); ++i) by_label[all.cases[i].law_label].push_back(i);
  std::mt19937_64 rng(seed);
  for (auto& [label, idx] : by_label) {
    std::shuffle(idx.begin(), idx.end(), rng);
    size_t n = idx.size();
    size_t n_test = std::max<size_t>(1, static_cast<size_t>(std::lround(test_frac * n)));
    size_t n_valid = std::max<size_t>(1, static_cast<size_t>(std::lround(valid_frac * n)));
    require(n_test + n_valid < n, "split_dataset: label " + std::to_string(label) +
                                      " has too few cases to split");
    for (size_t i = 0; i < n; ++i) {
      const LawCase& c = all.cases[idx[i]];
      if (i < n_test)
        test.cases.push_back(c);
      else if (i < n_test + n_valid)
        valid.cases.push_back(c);
      else
        train.cases.push_back(c);
    }
  }
}

// ---------------------------------------------------------------------------
// JSONL writers (inverse of load_dataset / load_articles)
// ---------------------------------------------------------------------------

inline std::string fact_to_text(const LawCase& c) {
  std::string s;
  for (const auto& sent : c.fact) {
    for (size_t i = 0; i < sent.size(); ++i) {
      if (!s.empty() && s.back() != ' ') s += ' ';
      s += sent[i];
    }
    s += " .";
  }
  return s;
}

inline nlohmann::json penalty_to_json(const RawPenalty& p) {
  switch (p.kind) {
    case PenaltyKind::kLife: return "life";
    case PenaltyKind::kDeath: return "death";
    case PenaltyKind::kNone: return "none";
    case PenaltyKind::kMonths: return nlohmann::json{{"months", p.months}};
  }
  return "none";
}

inline void write_cases_jsonl(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "write_cases_jsonl: cannot write " + path);
  for (const auto& c : ds.cases) {
    nlohmann::json j{{"fact", fact_to_text(c)},
                     {"law", ds.law_names[static_cast<size_t>(c.law_label)]},
                     {"charge", ds.charge_names[static_cast<size_t>(c.charge_label)]},
                     {"penalty", penalty_to_json(c.raw_penalty)}};
    out << j.dump() << "\n";
  }
}

inline void write_articles_jsonl(const std::vector<LawArticle>& articles,
                                 const std::vector<std::string>& names, const std::string& path) {
  require(articles.size() == names.size(), "write_articles_jsonl: name/article count mismatch");
  std::ofstream out(path);
  require(out.good(), "write_articles_jsonl: cannot write " + path);
  for (size_t i = 0; i < articles.size(); ++i) {
    std::string text;
    for (const auto& t : articles[i].text) {
      if (!text.empty()) text += ' ';
      text += t;
    }
    text += " .";
    nlohmann::json j{{"id", names[i]}, {"text", text}};
    out << j.dump() << "\n";
  }
}

}  // namespace dladan
