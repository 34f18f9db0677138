#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "dladan/corpus.hpp"
#include "dladan/mat.hpp"

namespace dladan {

// ---------------------------------------------------------------------------
// TF-IDF over law article texts
// ---------------------------------------------------------------------------

// Row i holds the L2-normalized tf-idf vector of article i. The vocabulary
// comes from article texts only; tf is the raw count and
// idf(t) = ln((1 + m) / (1 + df(t))) + 1.
struct TfidfMatrix {
  Mat rows;
  std::unordered_map<std::string, int> vocabulary;
};

inline TfidfMatrix compute_tfidf(const std::vector<LawArticle>& articles) {
  require(!articles.empty(), "compute_tfidf: no articles");
  TfidfMatrix t;
  std::vector<std::string> terms;
  for (const auto& a : articles) {
    require(!a.text.empty(), "compute_tfidf: empty article text");
    for (const auto& tok : a.text)
      if (!t.vocabulary.count(tok)) {
        t.vocabulary.emplace(tok, 0);
        terms.push_back(tok);
      }
  }
  std::sort(terms.begin(), terms.end());
  for (size_t i = 0; i < terms.size(); ++i) t.vocabulary[terms[i]] = static_cast<int>(i);

  int m = static_cast<int>(articles.size());
  int v = static_cast<int>(terms.size());
  std::vector<long> df(static_cast<size_t>(v), 0);
  std::vector<std::unordered_map<int, long>> tf(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    for (const auto& tok : articles[static_cast<size_t>(i)].text)
      tf[static_cast<size_t>(i)][t.vocabulary[tok]]++;
    for (const auto& [col, n] : tf[static_cast<size_t>(i)]) df[static_cast<size_t>(col)]++;
  }

  t.rows = Mat(m, v);
  for (int i = 0; i < m; ++i) {
    for (const auto& [col, n] : tf[static_cast<size_t>(i)]) {
      double idf = std::log((1.0 + m) / (1.0 + static_cast<double>(df[static_cast<size_t>(col)]))) + 1.0;
      t.rows(i, col) = static_cast<double>(n) * idf;
    }
    double norm = 0;
    for (int j = 0; j < v; ++j) norm += t.rows(i, j) * t.rows(i, j);
    norm = std::sqrt(norm);
    require(norm > 0, "compute_tfidf: article " + std::to_string(i) + " has zero tf-idf norm");
    for (int j = 0; j < v; ++j) t.rows(i, j) /= norm;
  }
  return t;
}

// ---------------------------------------------------------------------------
// Similarity graph and community partition
// ---------------------------------------------------------------------------

struct SimilarityGraph {
  Mat weights;  // m x m, symmetric, unit diagonal

  int size() const { return weights.rows; }
  double weight(int i, int j) const { return weights(i, j); }
};

inline SimilarityGraph build_similarity_graph(const TfidfMatrix& tfidf) {
  int m = tfidf.rows.rows;
  require(m >= 1, "build_similarity_graph: empty tf-idf matrix");
  for (int i = 0; i < m; ++i) {
    double n2 = 0;
    for (int j = 0; j < tfidf.rows.cols; ++j) n2 += tfidf.rows(i, j) * tfidf.rows(i, j);
    require(n2 > 0, "build_similarity_graph: zero-norm row " + std::to_string(i));
  }
  SimilarityGraph g;
  g.weights = Mat(m, m);
  for (int i = 0; i < m; ++i) {
    g.weights(i, i) = 1.0;
    for (int j = i + 1; j < m; ++j) {
      double d = 0;
      for (int k = 0; k < tfidf.rows.cols; ++k) d += tfidf.rows(i, k) * tfidf.rows(j, k);
      d = std::clamp(d, -1.0, 1.0);
      g.weights(i, j) = d;
      g.weights(j, i) = d;
    }
  }
  return g;
}

// Sentinel for the partition that ignores weights and isolates every article.
inline constexpr double kSingletonsSentinel = -1.0;

struct CommunityPartition {
  std::vector<std::vector<int>> communities;  // disjoint, cover all articles
  std::vector<int> membership;                // article -> community index
  std::vector<std::vector<int>> neighbors;    // retained edges (weight >= theta)
  double theta = 0.0;
  bool singletons = false;

  int num_articles() const { return static_cast<int>(membership.size()); }
  int num_communities() const { return static_cast<int>(communities.size()); }

  std::string hash() const {
    Fnv1a h;
    h.feed(theta);
    h.feed(static_cast<uint64_t>(singletons ? 1 : 0));
    for (const auto& c : communities) {
      h.feed(static_cast<uint64_t>(c.size()));
      for (int a : c) h.feed(static_cast<uint64_t>(a));
    }
    for (const auto& ns : neighbors) {
      h.feed(static_cast<uint64_t>(ns.size()));
      for (int a : ns) h.feed(static_cast<uint64_t>(a));
    }
    return h.hex();
  }
};

// Removes edges below theta and takes connected components. Passing the
// SINGLETONS sentinel forces one community per article regardless of weights
// (duplicate articles stay connected even at theta = 1, so independence needs
// the sentinel, not a threshold).
inline CommunityPartition partition_communities(const SimilarityGraph& graph, double theta) {
  int m = graph.size();
  CommunityPartition p;
  p.membership.assign(static_cast<size_t>(m), -1);
  p.neighbors.assign(static_cast<size_t>(m), {});
  if (theta == kSingletonsSentinel) {
    p.singletons = true;
    p.theta = 1.0;
    for (int i = 0; i < m; ++i) {
      p.communities.push_back({i});
      p.membership[static_cast<size_t>(i)] = i;
    }
    return p;
  }
  require(theta >= 0.0 && theta <= 1.0, "partition_communities: theta outside [0, 1]");
  p.theta = theta;

  std::vector<int> parent(static_cast<size_t>(m));
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int x) {
    while (parent[static_cast<size_t>(x)] != x) {
      parent[static_cast<size_t>(x)] = parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
      x = parent[static_cast<size_t>(x)];
    }
    return x;
  };
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j)
      if (graph.weight(i, j) >= theta) {
        p.neighbors[static_cast<size_t>(i)].push_back(j);
        p.neighbors[static_cast<size_t>(j)].push_back(i);
        parent[static_cast<size_t>(find(i))] = find(j);
      }

  std::map<int, int> root_to_comm;
  for (int i = 0; i < m; ++i) {
    int r = find(i);
    auto it = root_to_comm.find(r);
    int c;
    if (it == root_to_comm.end()) {
      c = static_cast<int>(p.communities.size());
      root_to_comm.emplace(r, c);
      p.communities.push_back({});
    } else {
      c = it->second;
    }
    p.communities[static_cast<size_t>(c)].push_back(i);
    p.membership[static_cast<size_t>(i)] = c;
  }
  return p;
}

// ---------------------------------------------------------------------------
// JSON export / import
// ---------------------------------------------------------------------------

// Inspection/fixture export: {"theta": t, "communities": [[ids]]}.
inline nlohmann::json partition_to_json(const CommunityPartition& p) {
  return nlohmann::json{{"theta", p.theta}, {"communities", p.communities}};
}

// Internal round-trip format: adds edges and the sentinel flag so a loaded
// partition drives the distillation stack identically.
inline nlohmann::json partition_to_json_full(const CommunityPartition& p) {
  nlohmann::json j = partition_to_json(p);
  j["singletons"] = p.singletons;
  j["neighbors"] = p.neighbors;
  return j;
}

inline CommunityPartition partition_from_json(const nlohmann::json& j) {
  CommunityPartition p;
  p.theta = j.at("theta").get<double>();
  p.communities = j.at("communities").get<std::vector<std::vector<int>>>();
  p.singletons = j.value("singletons", false);
  int m = 0;
  for (const auto& c : p.communities) m += static_cast<int>(c.size());
  p.membership.assign(static_cast<size_t>(m), -1);
  for (size_t c = 0; c < p.communities.size(); ++c)
    for (int a : p.communities[c]) p.membership.at(static_cast<size_t>(a)) = static_cast<int>(c);
  if (j.contains("neighbors"))
    p.neighbors = j.at("neighbors").get<std::vector<std::vector<int>>>();
  else
    p.neighbors.assign(static_cast<size_t>(m), {});
  return p;
}

}  // namespace dladan
