#pragma once

#include <array>
#include <optional>

#include "dladan/encoder.hpp"
#include "dladan/law_distill.hpp"
#include "dladan/memory_distill.hpp"

namespace dladan {

enum class Phase { kWarmup, kMain, kInference };

enum class Task : int { kLaw = 0, kCharge = 1, kPenalty = 2 };

struct ModelOptions {
  bool use_revised = true;            // off for the no-RM / no-All variants
  bool charge_revised_branch = false; // second revised representation from the charge memory
  double memory_temperature = 1.0;
  bool gdo_tanh = false;
};

struct ModelDims {
  int emb_dim = 200;
  int d_w = 256;
  int d_s = 256;
  int d_l = 256;
  int d_f = 256;
  int gdo_layers = 2;
};

// Per-task decoder + metric classifier. The scale is stored as rho with
// tau = exp(rho), which keeps tau positive under unconstrained updates.
struct TaskHead {
  Param Wd;   // d_f x concat_dim
  Param bd;   // d_f x 1
  Param Wp;   // d_f x C
  Param rho;  // 1 x 1

  void init(const std::string& prefix, int concat_dim, int d_f, int classes, double tau0,
            std::mt19937_64& rng) {
    Wd = Param(prefix + ".Wd", Mat::uniform(d_f, concat_dim, -0.1, 0.1, rng));
    bd = Param(prefix + ".bd", Mat::uniform(d_f, 1, -0.1, 0.1, rng));
    Wp = Param(prefix + ".Wp", Mat::uniform(d_f, classes, -0.1, 0.1, rng));
    rho = Param(prefix + ".rho", Mat::full(1, 1, std::log(tau0)));
  }

  void collect(std::vector<Param*>& out) {
    out.push_back(&Wd);
    out.push_back(&bd);
    out.push_back(&Wp);
    out.push_back(&rho);
  }
};

// All trainable state plus the frozen community partition and both revised
// memories. Memories are deliberately not in parameters(): they move only
// through the momentum rule, never by gradient.
struct ModelState {
  ModelDims dims;
  ModelOptions opts;
  CommunityPartition partition;
  int num_law = 0, num_charge = 0, num_penalty = 0;
  std::vector<std::vector<std::vector<int>>> article_ids;  // article -> sentences -> token ids

  Param embedding;
  EncoderParams basic_enc, article_enc, prior_enc;
  std::optional<EncoderParams> revised_enc;
  std::optional<EncoderParams> revised_charge_enc;
  GdoStack law_gdo, mem_gdo_law, mem_gdo_charge;
  PriorContextParams prior_ctx;
  Param Wk;  // d_f x 2 d_s, memory-matching projection
  RevisedMemory law_mem, charge_mem;

  int prior_query_dim() const { return 2 * law_gdo.out_dim(); }
  int revised_query_dim() const { return mem_gdo_law.out_dim(); }

  int concat_dim() const {
    int n = 2 + (opts.use_revised ? 1 : 0) +
            (opts.use_revised && opts.charge_revised_branch ? 1 : 0);
    return n * dims.d_s;
  }

  std::array<TaskHead, 3> heads;

  static ModelState create(const ModelDims& dims, const ModelOptions& opts,
                           CommunityPartition partition, int num_law, int num_charge,
                           int num_penalty, const Mat& embedding_init,
                           std::vector<std::vector<std::vector<int>>> article_ids, uint64_t seed) {
    require(num_law == partition.num_articles(), "ModelState: law label count != article count");
    require(static_cast<int>(article_ids.size()) == num_law,
            "ModelState: article token lists missing");
    ModelState s;
    s.dims = dims;
    s.opts = opts;
    s.partition = std::move(partition);
    s.num_law = num_law;
    s.num_charge = num_charge;
    s.num_penalty = num_penalty;
    s.article_ids = std::move(article_ids);

    std::mt19937_64 rng(seed);
    s.embedding = Param("embedding", embedding_init);
    s.basic_enc = EncoderParams::basic("basic_enc", dims.emb_dim, dims.d_w, dims.d_s, rng);
    s.article_enc = EncoderParams::basic("article_enc", dims.emb_dim, dims.d_w, dims.d_s, rng);
    s.law_gdo.init("law_gdo", dims.d_s, dims.d_l, dims.gdo_layers, rng);
    s.law_gdo.tanh_between = opts.gdo_tanh;
    s.prior_enc = EncoderParams::with_query("prior_enc", dims.emb_dim, dims.d_w, dims.d_s,
                                            s.prior_query_dim(), rng);
    s.prior_ctx.init(s.partition.num_communities(), dims.d_s, rng);

    s.mem_gdo_law.init("mem_gdo_law", dims.d_f, dims.d_l, dims.gdo_layers, rng);
    s.mem_gdo_law.tanh_between = opts.gdo_tanh;
    s.mem_gdo_charge.init("mem_gdo_charge", dims.d_f, dims.d_l, dims.gdo_layers, rng);
    s.mem_gdo_charge.tanh_between = opts.gdo_tanh;
    if (opts.use_revised) {
      s.revised_enc = EncoderParams::with_query("revised_enc", dims.emb_dim, dims.d_w, dims.d_s,
                                                s.revised_query_dim(), rng);
      if (opts.charge_revised_branch)
        s.revised_charge_enc = EncoderParams::with_query(
            "revised_charge_enc", dims.emb_dim, dims.d_w, dims.d_s, s.revised_query_dim(), rng);
      s.Wk = Param("Wk", Mat::uniform(dims.d_f, 2 * dims.d_s, -0.1, 0.1, rng));
      s.law_mem.M = Mat(num_law, dims.d_f);
      s.law_mem.bound = MemoryTask::kLaw;
      s.charge_mem.M = Mat(num_charge, dims.d_f);
      s.charge_mem.bound = MemoryTask::kCharge;
    }

    const char* names[3] = {"head_law", "head_charge", "head_penalty"};
    int classes[3] = {num_law, num_charge, num_penalty};
    for (int i = 0; i < 3; ++i)
      s.heads[static_cast<size_t>(i)].init(names[i], s.concat_dim(), dims.d_f, classes[i],
                                           /*tau0=*/10.0, rng);
    return s;
  }

  std::vector<Param*> parameters() {
    std::vector<Param*> out;
    out.push_back(&embedding);
    basic_enc.collect(out);
    article_enc.collect(out);
    prior_enc.collect(out);
    law_gdo.collect(out);
    prior_ctx.collect(out);
    if (opts.use_revised) {
      revised_enc->collect(out);
      if (revised_charge_enc) revised_charge_enc->collect(out);
      mem_gdo_law.collect(out);
      if (opts.charge_revised_branch) mem_gdo_charge.collect(out);
      out.push_back(&Wk);
    }
    for (auto& h : heads) h.collect(out);
    return out;
  }

  void zero_grads() {
    for (Param* p : parameters()) p->zero_grad();
  }
};

// ---------------------------------------------------------------------------
// Per-task ops
// ---------------------------------------------------------------------------

inline Var task_decode(Tape& t, Var concat, Var Wd, Var bd) {
  return t.tanh_(t.add(t.matmul(Wd, concat), bd));
}

// logit_c = tau * cos(feat, column_c of Wp); feat and every column non-zero.
inline Var cosine_classify_logits(Tape& t, Var feat, Var Wp, Var tau) {
  require(t.val(tau)(0, 0) > 0, "cosine_classify: scale must be positive");
  return t.mul_scalar(t.cosine_cols(feat, Wp, "cosine_classify"), tau);
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

// Everything shared across the cases of one step: parameter bindings plus the
// distilled article matrix, community distinction vectors and memory
// distillation, all recomputed once per step and reused read-only.
struct StepContext {
  Phase phase = Phase::kInference;
  Var emb;
  EncoderBind basic, article, prior;
  std::optional<EncoderBind> revised, revised_charge;
  Var Wg, bg, Wk;
  struct HeadBind {
    Var Wd, bd, Wp, tau;
  };
  std::array<HeadBind, 3> heads;
  Var article_feats;  // m x d_s
  Var distilled;      // m x d_H
  Var betas;          // k x 2 d_H
  std::optional<MemoryDistillOut> mem_law, mem_charge;
  bool revised_active = false;
};

inline StepContext build_step_context(Tape& t, ModelState& s, Phase phase) {
  StepContext ctx;
  ctx.phase = phase;
  if (phase == Phase::kWarmup && s.opts.use_revised)
    require(!s.law_mem.initialized && !s.charge_mem.initialized,
            "warm-up forward after memory initialization is forbidden");
  ctx.emb = t.param(s.embedding);
  ctx.basic = EncoderBind::bind(t, s.basic_enc);
  ctx.article = EncoderBind::bind(t, s.article_enc);
  ctx.prior = EncoderBind::bind(t, s.prior_enc);
  ctx.Wg = t.param(s.prior_ctx.Wg);
  ctx.bg = t.param(s.prior_ctx.bg);

  std::vector<Var> reps;
  reps.reserve(s.article_ids.size());
  for (const auto& ids : s.article_ids)
    reps.push_back(t.transpose(hierarchical_encode_ids(t, ids, ctx.emb, ctx.article)));
  ctx.article_feats = t.stack_rows(reps);
  ctx.distilled = distill_law_articles(t, ctx.article_feats, s.partition, s.law_gdo);
  ctx.betas = pool_all_communities(t, ctx.distilled, s.partition);

  ctx.revised_active = s.opts.use_revised && phase != Phase::kWarmup;
  if (ctx.revised_active) {
    ctx.revised = EncoderBind::bind(t, *s.revised_enc);
    ctx.Wk = t.param(s.Wk);
    ctx.mem_law = distill_memory(t, s.law_mem, s.mem_gdo_law);
    if (s.opts.charge_revised_branch) {
      ctx.revised_charge = EncoderBind::bind(t, *s.revised_charge_enc);
      ctx.mem_charge = distill_memory(t, s.charge_mem, s.mem_gdo_charge);
    }
  }
  for (int i = 0; i < 3; ++i) {
    auto& h = s.heads[static_cast<size_t>(i)];
    auto& b = ctx.heads[static_cast<size_t>(i)];
    b.Wd = t.param(h.Wd);
    b.bd = t.param(h.bd);
    b.Wp = t.param(h.Wp);
    b.tau = t.exp_(t.param(h.rho));
  }
  return ctx;
}

struct CaseForward {
  Var v_b, v_p, v_r;  // v_r invalid when the revised branch is off
  Var concat;
  std::array<Var, 3> logits;
  std::array<Var, 3> probs;
  Var x_logits, x_hat;
  std::optional<Var> s_scores_law, s_hat_law;
  std::optional<Var> s_scores_charge, s_hat_charge;
};

inline CaseForward forward_case(Tape& t, const StepContext& ctx, const ModelState& s,
                                const std::vector<std::vector<int>>& fact_ids) {
  CaseForward out;
  out.v_b = hierarchical_encode_ids(t, fact_ids, ctx.emb, ctx.basic);
  PriorContextOut prior = select_prior_context(t, out.v_b, ctx.betas, ctx.Wg, ctx.bg);
  out.x_logits = prior.logits;
  out.x_hat = prior.x_hat;
  out.v_p = hierarchical_encode_ids(t, fact_ids, ctx.emb, ctx.prior, prior.beta_hat);

  Var concat = t.concat_rows(out.v_b, out.v_p);
  if (s.opts.use_revised) {
    if (ctx.revised_active) {
      MemoryMatchOut match = match_memory(t, out.v_b, out.v_p, s.law_mem, ctx.mem_law->gamma,
                                          ctx.Wk, s.opts.memory_temperature);
      out.s_scores_law = match.s_scores;
      out.s_hat_law = match.s_hat;
      out.v_r = hierarchical_encode_ids(t, fact_ids, ctx.emb, *ctx.revised, match.gamma_hat);
      concat = t.concat_rows(concat, out.v_r);
      if (s.opts.charge_revised_branch) {
        MemoryMatchOut cm = match_memory(t, out.v_b, out.v_p, s.charge_mem,
                                         ctx.mem_charge->gamma, ctx.Wk, s.opts.memory_temperature);
        out.s_scores_charge = cm.s_scores;
        out.s_hat_charge = cm.s_hat;
        Var v_rc = hierarchical_encode_ids(t, fact_ids, ctx.emb, *ctx.revised_charge, cm.gamma_hat);
        concat = t.concat_rows(concat, v_rc);
      }
    } else {
      // warm-up: the revised representation is frozen at zero
      out.v_r = t.constant(Mat::zeros(s.dims.d_s, 1));
      concat = t.concat_rows(concat, out.v_r);
      if (s.opts.charge_revised_branch)
        concat = t.concat_rows(concat, t.constant(Mat::zeros(s.dims.d_s, 1)));
    }
  }
  out.concat = concat;

  for (int i = 0; i < 3; ++i) {
    const auto& h = ctx.heads[static_cast<size_t>(i)];
    Var decoded = task_decode(t, concat, h.Wd, h.bd);
    out.logits[static_cast<size_t>(i)] = cosine_classify_logits(t, decoded, h.Wp, h.tau);
    out.probs[static_cast<size_t>(i)] = t.softmax(out.logits[static_cast<size_t>(i)]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Public single-case forward
// ---------------------------------------------------------------------------

struct FactRepresentation {
  Mat v_b, v_p, v_r;  // v_r zero during warm-up, empty when the branch is off
  Mat concat;
};

struct Prediction {
  std::array<Mat, 3> y;  // probability vectors: law, charge, penalty
  std::array<int, 3> argmax{-1, -1, -1};
  Mat x_hat;
  std::optional<Mat> s_hat_law;
  std::optional<Mat> s_hat_charge;
};

inline int argmax_of(const Mat& v) {
  int best = 0;
  for (int i = 1; i < v.rows; ++i)
    if (v(i, 0) > v(best, 0)) best = i;
  return best;
}

inline std::pair<Prediction, FactRepresentation> forward(const LawCase& c, ModelState& s,
                                                         const Vocab& vocab, Phase phase) {
  Tape t(/*track_gradients=*/false);
  StepContext ctx = build_step_context(t, s, phase);
  CaseForward f = forward_case(t, ctx, s, fact_to_ids(c, vocab));
  Prediction pred;
  for (int i = 0; i < 3; ++i) {
    pred.y[static_cast<size_t>(i)] = t.val(f.probs[static_cast<size_t>(i)]);
    pred.argmax[static_cast<size_t>(i)] = argmax_of(pred.y[static_cast<size_t>(i)]);
  }
  pred.x_hat = t.val(f.x_hat);
  if (f.s_hat_law) pred.s_hat_law = t.val(*f.s_hat_law);
  if (f.s_hat_charge) pred.s_hat_charge = t.val(*f.s_hat_charge);
  FactRepresentation rep;
  rep.v_b = t.val(f.v_b);
  rep.v_p = t.val(f.v_p);
  if (f.v_r.valid()) rep.v_r = t.val(f.v_r);
  rep.concat = t.val(f.concat);
  return {std::move(pred), std::move(rep)};
}

// Shares one step context across the batch; agrees with per-case forward.
inline std::vector<Prediction> forward_batch(const std::vector<const LawCase*>& cases,
                                             ModelState& s, const Vocab& vocab, Phase phase) {
  Tape t(/*track_gradients=*/false);
  StepContext ctx = build_step_context(t, s, phase);
  std::vector<Prediction> out;
  out.reserve(cases.size());
  for (const LawCase* c : cases) {
    CaseForward f = forward_case(t, ctx, s, fact_to_ids(*c, vocab));
    Prediction pred;
    for (int i = 0; i < 3; ++i) {
      pred.y[static_cast<size_t>(i)] = t.val(f.probs[static_cast<size_t>(i)]);
      pred.argmax[static_cast<size_t>(i)] = argmax_of(pred.y[static_cast<size_t>(i)]);
    }
    pred.x_hat = t.val(f.x_hat);
    if (f.s_hat_law) pred.s_hat_law = t.val(*f.s_hat_law);
    if (f.s_hat_charge) pred.s_hat_charge = t.val(*f.s_hat_charge);
    out.push_back(std::move(pred));
  }
  return out;
}

}  // namespace dladan
