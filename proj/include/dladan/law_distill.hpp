#pragma once

#include "dladan/autodiff.hpp"
#include "dladan/prior_graph.hpp"

namespace dladan {

// ---------------------------------------------------------------------------
// Graph distillation operator
// ---------------------------------------------------------------------------

struct GdoLayerParams {
  Param phi;   // d_out x d_in       self-weighted matrix
  Param psi;   // d_out x 2 d_in     neighbor similarity extracting matrix
  Param bias;  // d_out x 1
  int d_in = 0, d_out = 0;

  void init(const std::string& prefix, int din, int dout, std::mt19937_64& rng) {
    d_in = din;
    d_out = dout;
    phi = Param(prefix + ".phi", Mat::uniform(dout, din, -0.1, 0.1, rng));
    psi = Param(prefix + ".psi", Mat::uniform(dout, 2 * din, -0.1, 0.1, rng));
    bias = Param(prefix + ".bias", Mat::uniform(dout, 1, -0.1, 0.1, rng));
  }

  void collect(std::vector<Param*>& out) {
    out.push_back(&phi);
    out.push_back(&psi);
    out.push_back(&bias);
  }
};

// A stack of H distillation layers: d_s -> d_l -> ... -> d_l. An optional
// tanh between layers exists as a knob; the default applies none.
struct GdoStack {
  std::vector<GdoLayerParams> layers;
  bool tanh_between = false;
  int d_in = 0;

  void init(const std::string& prefix, int din, int dl, int depth, std::mt19937_64& rng) {
    d_in = din;
    layers.resize(static_cast<size_t>(depth));
    for (int l = 0; l < depth; ++l)
      layers[static_cast<size_t>(l)].init(prefix + ".layer" + std::to_string(l),
                                          l == 0 ? din : dl, dl, rng);
  }

  int depth() const { return static_cast<int>(layers.size()); }
  int out_dim() const { return layers.empty() ? d_in : layers.back().d_out; }

  void collect(std::vector<Param*>& out) {
    for (auto& l : layers) l.collect(out);
  }
};

struct GdoLayerBind {
  Var phi, psi, bias;
  int d_in = 0;

  static GdoLayerBind bind(Tape& t, GdoLayerParams& p) {
    return GdoLayerBind{t.param(p.phi), t.param(p.psi), t.param(p.bias), p.d_in};
  }
};

// v_i' = phi v_i - (1/|N_i|) sum_{j in N_i} psi (v_i (+) v_j) + b, with the
// neighbor term absent for isolated nodes. Evaluated in matrix form:
// splitting psi into column blocks [psi_l | psi_r] gives
//   V' = V phi^T - mask . (V psi_l^T) - (A V) psi_r^T + 1 b^T,
// where A row i averages the neighbors of i and mask zeroes isolated rows.
inline Var gdo_layer(Tape& t, Var feats, const std::vector<std::vector<int>>& neighbors,
                     const GdoLayerBind& p) {
  int m = t.val(feats).rows;
  int d = t.val(feats).cols;
  require(d == p.d_in, "gdo_layer: feature dim " + std::to_string(d) + " != layer input dim " +
                           std::to_string(p.d_in));
  require(static_cast<int>(neighbors.size()) == m, "gdo_layer: neighbor set count mismatch");

  Var self = t.matmul(feats, t.transpose(p.phi));

  Mat avg(m, m);
  Mat mask(m, 1);
  for (int i = 0; i < m; ++i) {
    const auto& ns = neighbors[static_cast<size_t>(i)];
    if (ns.empty()) continue;
    mask(i, 0) = 1.0;
    for (int j : ns) avg(i, j) += 1.0 / static_cast<double>(ns.size());
  }
  Var psi_l = t.slice_cols(p.psi, 0, d);
  Var psi_r = t.slice_cols(p.psi, d, 2 * d);
  Var own = t.scale_rows_const(t.matmul(feats, t.transpose(psi_l)), mask);
  Var nbr = t.matmul(t.matmul(t.constant(std::move(avg)), feats), t.transpose(psi_r));
  return t.add_bias_rows(t.sub(self, t.add(own, nbr)), p.bias);
}

// H chained distillation layers with neighbor sets induced by the partition.
inline Var distill_law_articles(Tape& t, Var article_reps, const CommunityPartition& partition,
                                GdoStack& stack) {
  require(t.val(article_reps).rows == partition.num_articles(),
          "distill_law_articles: article count mismatch with partition");
  Var x = article_reps;
  for (int l = 0; l < stack.depth(); ++l) {
    x = gdo_layer(t, x, partition.neighbors, GdoLayerBind::bind(t, stack.layers[static_cast<size_t>(l)]));
    if (stack.tanh_between && l + 1 < stack.depth()) x = t.tanh_(x);
  }
  return x;
}

// beta_i = [max-pool(members) (+) min-pool(members)], a 1 x 2 d_H row.
inline Var pool_community_distinction(Tape& t, Var distilled, const std::vector<int>& community) {
  require(!community.empty(), "pool_community_distinction: empty community");
  Var members = t.gather_rows(distilled, community);
  return t.concat_cols(t.colwise_max(members), t.colwise_min(members));
}

inline Var pool_all_communities(Tape& t, Var distilled, const CommunityPartition& partition) {
  std::vector<Var> rows;
  rows.reserve(partition.communities.size());
  for (const auto& c : partition.communities)
    rows.push_back(pool_community_distinction(t, distilled, c));
  return t.stack_rows(rows);  // k x 2 d_H
}

// ---------------------------------------------------------------------------
// Prior context selection
// ---------------------------------------------------------------------------

struct PriorContextParams {
  Param Wg;  // k x d_s
  Param bg;  // k x 1

  void init(int k, int d_s, std::mt19937_64& rng) {
    Wg = Param("prior_ctx.Wg", Mat::uniform(k, d_s, -0.1, 0.1, rng));
    bg = Param("prior_ctx.bg", Mat::uniform(k, 1, -0.1, 0.1, rng));
  }

  void collect(std::vector<Param*>& out) {
    out.push_back(&Wg);
    out.push_back(&bg);
  }
};

struct PriorContextOut {
  Var logits;    // k x 1, pre-softmax community scores
  Var x_hat;     // k x 1, community probabilities
  Var beta_hat;  // 2 d_H x 1, weighted distinction vector
};

// X_hat = softmax(Wg v_b + bg); beta_hat = sum_i X_hat_i beta_i.
inline PriorContextOut select_prior_context(Tape& t, Var v_basic, Var betas, Var Wg, Var bg) {
  PriorContextOut out;
  out.logits = t.add(t.matmul(Wg, v_basic), bg);
  out.x_hat = t.softmax(out.logits);
  out.beta_hat = t.matmul(t.transpose(betas), out.x_hat);
  return out;
}

}  // namespace dladan
