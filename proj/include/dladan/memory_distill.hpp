#pragma once

#include "dladan/autodiff.hpp"
#include "dladan/law_distill.hpp"

namespace dladan {

// ---------------------------------------------------------------------------
// Revised memory
// ---------------------------------------------------------------------------

enum class MemoryTask { kLaw, kCharge };

// One vector per label, momentum-synced to the bound task's classifier
// columns. The key vectors are the layer-0 memory rows themselves, so a
// single matrix backs both and the keys can never drift from M.
struct RevisedMemory {
  Mat M;  // n_labels x d
  bool initialized = false;
  MemoryTask bound = MemoryTask::kLaw;

  int num_labels() const { return M.rows; }
  int dim() const { return M.cols; }
  const Mat& keys() const { return M; }
};

// Pairwise cosine matrix of the memory rows (diagonal = 1). The graph stays
// fully connected; the weighted layer excludes the diagonal itself.
inline Mat memory_similarity(const RevisedMemory& mem) {
  require(mem.initialized, "memory_similarity: memory not initialized");
  int n = mem.M.rows;
  std::vector<double> norms(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double s = 0;
    for (int j = 0; j < mem.M.cols; ++j) s += mem.M(i, j) * mem.M(i, j);
    norms[static_cast<size_t>(i)] = std::sqrt(s);
    require(norms[static_cast<size_t>(i)] > 0,
            "memory_similarity: zero memory row for label " + std::to_string(i));
  }
  Mat a(n, n);
  for (int i = 0; i < n; ++i) {
    a(i, i) = 1.0;
    for (int j = i + 1; j < n; ++j) {
      double d = 0;
      for (int k = 0; k < mem.M.cols; ++k) d += mem.M(i, k) * mem.M(j, k);
      d /= norms[static_cast<size_t>(i)] * norms[static_cast<size_t>(j)];
      d = std::clamp(d, -1.0, 1.0);
      a(i, j) = d;
      a(j, i) = d;
    }
  }
  return a;
}

// alpha_{i,j} = exp(a_{i,j}) / sum_{j' != i} exp(a_{i,j'}), diagonal excluded.
inline Mat similarity_softmax_weights(const Mat& a) {
  int n = a.rows;
  Mat alpha(n, n);
  for (int i = 0; i < n; ++i) {
    double denom = 0;
    for (int j = 0; j < n; ++j)
      if (j != i) denom += std::exp(a(i, j));
    for (int j = 0; j < n; ++j)
      if (j != i) alpha(i, j) = std::exp(a(i, j)) / denom;
  }
  return alpha;
}

// m_i' = phi m_i - sum_{j != i} alpha_{i,j} psi (m_i (+) m_j) + b.
// Since sum_j alpha_{i,j} = 1 this reduces to the same matrix form as the
// unweighted operator with alpha as the averaging matrix. For n = 1 the
// neighborhood is empty and the rule degenerates to m' = phi m + b.
inline Var weighted_gdo_layer(Tape& t, Var mem, const Mat& alpha, const GdoLayerBind& p) {
  int n = t.val(mem).rows;
  int d = t.val(mem).cols;
  require(d == p.d_in, "weighted_gdo_layer: dim mismatch");
  Var self = t.matmul(mem, t.transpose(p.phi));
  if (n == 1) return t.add_bias_rows(self, p.bias);
  require(alpha.rows == n && alpha.cols == n, "weighted_gdo_layer: weight matrix shape");
  Var psi_l = t.slice_cols(p.psi, 0, d);
  Var psi_r = t.slice_cols(p.psi, d, 2 * d);
  Var own = t.matmul(mem, t.transpose(psi_l));
  Var nbr = t.matmul(t.matmul(t.constant(alpha), mem), t.transpose(psi_r));
  return t.add_bias_rows(t.sub(self, t.add(own, nbr)), p.bias);
}

struct MemoryDistillOut {
  Var gamma;  // n x d_H revised distinction vectors
  Mat keys;   // n x d   layer-0 rows
};

// gamma_i = m_i^(H). The similarity graph is computed once from the raw
// layer-0 memories and reused for every layer; memory rows enter the tape as
// constants, so no gradient ever reaches M (it moves only by momentum).
inline MemoryDistillOut distill_memory(Tape& t, const RevisedMemory& mem, GdoStack& stack) {
  require(mem.initialized, "distill_memory: memory not initialized");
  MemoryDistillOut out;
  out.keys = mem.M;
  Var x = t.constant(mem.M);
  if (stack.depth() == 0) {
    out.gamma = x;
    return out;
  }
  Mat alpha = mem.M.rows > 1 ? similarity_softmax_weights(memory_similarity(mem)) : Mat();
  for (int l = 0; l < stack.depth(); ++l) {
    x = weighted_gdo_layer(t, x, alpha, GdoLayerBind::bind(t, stack.layers[static_cast<size_t>(l)]));
    if (stack.tanh_between && l + 1 < stack.depth()) x = t.tanh_(x);
  }
  out.gamma = x;
  return out;
}

// ---------------------------------------------------------------------------
// Memory matching
// ---------------------------------------------------------------------------

struct MemoryMatchOut {
  Var s_scores;   // n x 1 cosine scores (pre-softmax logits)
  Var s_hat;      // n x 1 probabilities
  Var gamma_hat;  // d_H x 1 weighted revised distinction vector
};

// S'_i = cos(Wk (v_b (+) v_p), k_i); S_hat = softmax(S'); gamma_hat = sum S_hat_i gamma_i.
// temperature divides the scores before the softmax; 1.0 leaves them as written.
inline MemoryMatchOut match_memory(Tape& t, Var v_basic, Var v_prior, const RevisedMemory& mem,
                                   Var gamma, Var Wk, double temperature = 1.0) {
  require(mem.initialized, "match_memory: memory not initialized");
  require(temperature > 0, "match_memory: temperature must be positive");
  Var query = t.matmul(Wk, t.concat_rows(v_basic, v_prior));
  require(t.val(query).norm2() > 0, "match_memory: projected query is the zero vector");
  MemoryMatchOut out;
  Var keys = t.constant(mem.keys().transposed());  // d x n
  out.s_scores = t.cosine_cols(query, keys, "match_memory");
  Var scaled = temperature == 1.0 ? out.s_scores : t.scale(out.s_scores, 1.0 / temperature);
  out.s_hat = t.softmax(scaled);
  out.gamma_hat = t.matmul(t.transpose(gamma), out.s_hat);
  return out;
}

}  // namespace dladan
