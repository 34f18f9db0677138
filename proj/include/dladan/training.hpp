#pragma once

#include <charconv>
#include <cstring>
#include <filesystem>

#include "dladan/metrics.hpp"
#include "dladan/model.hpp"

namespace dladan {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  require(ec == std::errc(), "format_double failed");
  return std::string(buf, p);
}

struct TrainConfig {
  double theta = 0.35;
  double lambda_momentum = 0.9;
  double lambda_c = 0.1;
  double lambda_m = 0.1;
  double lr = 0.001;
  int batch_size = 128;
  int epochs = 32;
  double warmup_epochs = 1.0;
  int d_w = 256;
  int d_s = 256;
  int d_l = 256;
  int d_f = 256;
  int gdo_layers = 2;
  long seed = 42;
  std::string ablation = "full";

  void validate() const {
    require(theta >= 0.0 && theta <= 1.0, "config: theta outside [0, 1]");
    require(lambda_momentum >= 0.0 && lambda_momentum <= 1.0,
            "config: lambda_momentum outside [0, 1]");
    require(lambda_c >= 0.0 && lambda_m >= 0.0, "config: loss weights must be non-negative");
    require(lr > 0.0, "config: lr must be positive");
    require(batch_size >= 1, "config: batch_size must be >= 1");
    require(epochs >= 0, "config: epochs must be >= 0");
    require(warmup_epochs > 0.0, "config: warm-up must cover at least one step");
    require(d_w > 0 && d_s > 0 && d_l > 0 && d_f > 0, "config: dims must be positive");
    require(d_w % 2 == 0 && d_s % 2 == 0, "config: d_w and d_s must be even");
    require(gdo_layers >= 0, "config: gdo_layers must be >= 0");
    static const std::vector<std::string> variants = {"full", "no_RM", "no_GCL", "no_GDO",
                                                      "no_All"};
    require(std::find(variants.begin(), variants.end(), ablation) != variants.end(),
            "config: ablation must be one of full/no_RM/no_GCL/no_GDO/no_All");
  }

  void set(const std::string& key, const std::string& value) {
    auto as_d = [&] { return std::stod(value); };
    auto as_i = [&] { return std::stoi(value); };
    if (key == "theta") theta = as_d();
    else if (key == "lambda_momentum") lambda_momentum = as_d();
    else if (key == "lambda_c") lambda_c = as_d();
    else if (key == "lambda_m") lambda_m = as_d();
    else if (key == "lr") lr = as_d();
    else if (key == "batch_size") batch_size = as_i();
    else if (key == "epochs") epochs = as_i();
    else if (key == "warmup_epochs") warmup_epochs = as_d();
    else if (key == "d_w") d_w = as_i();
    else if (key == "d_s") d_s = as_i();
    else if (key == "d_l") d_l = as_i();
    else if (key == "d_f") d_f = as_i();
    else if (key == "gdo_layers") gdo_layers = as_i();
    else if (key == "seed") seed = std::stol(value);
    else if (key == "ablation") ablation = value;
    else throw std::runtime_error("config: unknown key \"" + key + "\"");
  }

  std::string to_text() const {
    std::string s;
    s += "theta = " + format_double(theta) + "\n";
    s += "lambda_momentum = " + format_double(lambda_momentum) + "\n";
    s += "lambda_c = " + format_double(lambda_c) + "\n";
    s += "lambda_m = " + format_double(lambda_m) + "\n";
    s += "lr = " + format_double(lr) + "\n";
    s += "batch_size = " + std::to_string(batch_size) + "\n";
    s += "epochs = " + std::to_string(epochs) + "\n";
    s += "warmup_epochs = " + format_double(warmup_epochs) + "\n";
    s += "d_w = " + std::to_string(d_w) + "\n";
    s += "d_s = " + std::to_string(d_s) + "\n";
    s += "d_l = " + std::to_string(d_l) + "\n";
    s += "d_f = " + std::to_string(d_f) + "\n";
    s += "gdo_layers = " + std::to_string(gdo_layers) + "\n";
    s += "seed = " + std::to_string(seed) + "\n";
    s += "ablation = " + ablation + "\n";
    return s;
  }

  // Parses "key = value" lines; '#' starts a comment.
  static TrainConfig from_text(const std::string& text) {
    TrainConfig cfg;
    cfg.apply_text(text);
    return cfg;
  }

  void apply_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      auto eq = line.find('=');
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      require(eq != std::string::npos,
              "config line " + std::to_string(lineno) + ": expected key = value");
      auto trim = [](std::string s) {
        size_t a = s.find_first_not_of(" \t\r");
        size_t b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
      };
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  ModelDims model_dims(int emb_dim) const {
    ModelDims d;
    d.emb_dim = emb_dim;
    d.d_w = d_w;
    d.d_s = d_s;
    d.d_l = d_l;
    d.d_f = d_f;
    d.gdo_layers = ablation == "no_GDO" || ablation == "no_All" ? 0 : gdo_layers;
    return d;
  }

  ModelOptions model_options() const {
    ModelOptions o;
    o.use_revised = !(ablation == "no_RM" || ablation == "no_All");
    return o;
  }

  // Threshold actually used to build the partition for this variant.
  double effective_theta() const {
    if (ablation == "no_All") return kSingletonsSentinel;
    if (ablation == "no_GCL") return 0.0;
    return theta;
  }
};

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

// Cross-entropy terms computed from a finished Prediction (probability
// space); the training loop itself accumulates the same terms on the tape
// from logits. Batch reduction is the mean.
struct LossBreakdown {
  double total = 0, lp = 0, lc = 0, lm = 0;
};

inline double ce_of_prob(const Mat& probs, int target) {
  require(target >= 0 && target < probs.rows, "compute_loss: target out of range");
  double p = std::max(probs(target, 0), 1e-300);
  return -std::log(p);
}

inline LossBreakdown compute_loss(const Prediction& pred, int y_law, int y_charge, int y_penalty,
                                  const CommunityPartition& partition, const TrainConfig& cfg,
                                  Phase phase) {
  LossBreakdown out;
  out.lp = ce_of_prob(pred.y[0], y_law) + ce_of_prob(pred.y[1], y_charge) +
           ce_of_prob(pred.y[2], y_penalty);
  int community = partition.membership.at(static_cast<size_t>(y_law));
  out.lc = ce_of_prob(pred.x_hat, community);
  if (phase != Phase::kWarmup && pred.s_hat_law) {
    out.lm = ce_of_prob(*pred.s_hat_law, y_law);
    if (pred.s_hat_charge) out.lm += ce_of_prob(*pred.s_hat_charge, y_charge);
  }
  out.total = out.lp + cfg.lambda_c * out.lc +
              (phase != Phase::kWarmup ? cfg.lambda_m * out.lm : 0.0);
  return out;
}

// Batch reduction is the mean over cases.
inline LossBreakdown compute_loss(const std::vector<Prediction>& preds,
                                  const std::vector<std::array<int, 3>>& targets,
                                  const CommunityPartition& partition, const TrainConfig& cfg,
                                  Phase phase) {
  require(!preds.empty() && preds.size() == targets.size(), "compute_loss: batch size mismatch");
  LossBreakdown out;
  for (size_t i = 0; i < preds.size(); ++i) {
    auto one = compute_loss(preds[i], targets[i][0], targets[i][1], targets[i][2], partition, cfg,
                            phase);
    out.total += one.total;
    out.lp += one.lp;
    out.lc += one.lc;
    out.lm += one.lm;
  }
  double n = static_cast<double>(preds.size());
  out.total /= n;
  out.lp /= n;
  out.lc /= n;
  out.lm /= n;
  return out;
}

// ---------------------------------------------------------------------------
// Momentum memory sync
// ---------------------------------------------------------------------------

// M^(t) = lambda M^(t-1) + (1 - lambda) W^T; memory rows track classifier
// columns. Keys refresh implicitly (they are the M rows).
inline void momentum_update(RevisedMemory& mem, const Mat& classifier, double lambda) {
  require(mem.initialized, "momentum_update: memory not initialized");
  require(classifier.cols == mem.M.rows && classifier.rows == mem.M.cols,
          "momentum_update: classifier shape " + std::to_string(classifier.rows) + "x" +
              std::to_string(classifier.cols) + " does not align with memory " +
              std::to_string(mem.M.rows) + "x" + std::to_string(mem.M.cols));
  for (int i = 0; i < mem.M.rows; ++i)
    for (int j = 0; j < mem.M.cols; ++j)
      mem.M(i, j) = lambda * mem.M(i, j) + (1.0 - lambda) * classifier(j, i);
}

inline void warmup_init(RevisedMemory& mem, const Mat& classifier, long steps_done,
                        long warmup_steps) {
  require(steps_done >= warmup_steps, "warmup_init called before warm-up completed (step " +
                                          std::to_string(steps_done) + " of " +
                                          std::to_string(warmup_steps) + ")");
  require(classifier.cols == mem.M.rows && classifier.rows == mem.M.cols,
          "warmup_init: classifier/memory shape mismatch");
  mem.M = classifier.transposed();
  mem.initialized = true;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct Adam {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;

  void step(const std::vector<Param*>& params) {
    ++t;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (Param* p : params) {
      if (p->m.size() != p->value.size()) {
        p->m = Mat::zeros(p->value.rows, p->value.cols);
        p->v = Mat::zeros(p->value.rows, p->value.cols);
      }
      for (size_t i = 0; i < p->value.size(); ++i) {
        double g = p->grad.a[i];
        p->m.a[i] = beta1 * p->m.a[i] + (1.0 - beta1) * g;
        p->v.a[i] = beta2 * p->v.a[i] + (1.0 - beta2) * g * g;
        double mhat = p->m.a[i] / bc1;
        double vhat = p->v.a[i] / bc2;
        p->value.a[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }
};

inline double clip_global_norm(const std::vector<Param*>& params, double max_norm) {
  double sq = 0;
  for (Param* p : params)
    for (double g : p->grad.a) sq += g * g;
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    double s = max_norm / norm;
    for (Param* p : params)
      for (double& g : p->grad.a) g *= s;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochLog {
  int epoch = 0;
  double loss_p = 0, loss_c = 0, loss_m = 0;
  std::array<TaskMetrics, 3> val;
  double val_avg_f1 = 0;
};

struct TrainHooks {
  // Receives "forward" / "optimizer_apply" / "momentum_update" with the step id.
  std::function<void(const char*, long)> observer;
  // Stop once training accuracy on every subtask reaches this level (<0: off).
  double stop_at_train_accuracy = -1.0;
};

struct TrainResult {
  ModelState state;  // best validation snapshot
  double best_metric = 0.0;
  int best_epoch = -1;
  long steps = 0;
  std::vector<EpochLog> log;
};

namespace detail {

struct BatchLoss {
  Var loss;
  double lp = 0, lc = 0, lm = 0;
};

inline BatchLoss batch_loss(Tape& t, ModelState& s, const std::vector<const LawCase*>& batch,
                            const Vocab& vocab, const TrainConfig& cfg, Phase phase) {
  StepContext ctx = build_step_context(t, s, phase);
  std::vector<Var> case_losses;
  case_losses.reserve(batch.size());
  BatchLoss out;
  for (const LawCase* c : batch) {
    CaseForward f = forward_case(t, ctx, s, fact_to_ids(*c, vocab));
    std::vector<Var> terms;
    Var lp = t.add_n({t.ce_logits(f.logits[0], c->law_label),
                      t.ce_logits(f.logits[1], c->charge_label),
                      t.ce_logits(f.logits[2], c->penalty_label)});
    terms.push_back(lp);
    int community = s.partition.membership.at(static_cast<size_t>(c->law_label));
    Var lc = t.ce_logits(f.x_logits, community);
    terms.push_back(t.scale(lc, cfg.lambda_c));
    out.lp += t.val(lp)(0, 0);
    out.lc += t.val(lc)(0, 0);
    if (phase != Phase::kWarmup && f.s_scores_law) {
      Var lm = t.ce_logits(*f.s_scores_law, c->law_label);
      if (f.s_scores_charge)
        lm = t.add(lm, t.ce_logits(*f.s_scores_charge, c->charge_label));
      out.lm += t.val(lm)(0, 0);
      terms.push_back(t.scale(lm, cfg.lambda_m));
    }
    case_losses.push_back(t.add_n(terms));
  }
  out.loss = t.scale(t.add_n(case_losses), 1.0 / static_cast<double>(batch.size()));
  double n = static_cast<double>(batch.size());
  out.lp /= n;
  out.lc /= n;
  out.lm /= n;
  return out;
}

inline std::array<TaskMetrics, 3> evaluate_split(ModelState& s, const Vocab& vocab,
                                                 const Dataset& ds) {
  std::vector<const LawCase*> ptrs;
  ptrs.reserve(ds.cases.size());
  for (const auto& c : ds.cases) ptrs.push_back(&c);
  auto preds = forward_batch(ptrs, s, vocab, Phase::kInference);
  std::array<std::vector<int>, 3> p, g;
  for (size_t i = 0; i < preds.size(); ++i) {
    p[0].push_back(preds[i].argmax[0]);
    p[1].push_back(preds[i].argmax[1]);
    p[2].push_back(preds[i].argmax[2]);
    g[0].push_back(ds.cases[i].law_label);
    g[1].push_back(ds.cases[i].charge_label);
    g[2].push_back(ds.cases[i].penalty_label);
  }
  return {compute_metrics(p[0], g[0], s.num_law), compute_metrics(p[1], g[1], s.num_charge),
          compute_metrics(p[2], g[2], s.num_penalty)};
}

}  // namespace detail

// Builds the prior partition for the variant, then runs the two-phase
// schedule: warm-up with the revised branch frozen, memory initialization
// from the classifiers, and the main loop with the strict ordering
// gradient step -> momentum update -> next forward. Returns the snapshot
// with the best validation average macro-F1.
inline TrainResult train(const Dataset& train_ds, const Dataset& valid_ds, const Vocab& vocab,
                         const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  require(!train_ds.cases.empty(), "train: empty training split");
  require(!train_ds.articles.empty(), "train: articles are required to build the prior graph");

  CommunityPartition partition =
      partition_communities(build_similarity_graph(compute_tfidf(train_ds.articles)),
                            cfg.effective_theta());

  std::vector<std::vector<std::vector<int>>> article_ids;
  article_ids.reserve(train_ds.articles.size());
  for (const auto& a : train_ds.articles) article_ids.push_back(article_to_ids(a, vocab));

  TrainResult res;
  res.state = ModelState::create(cfg.model_dims(vocab.embedding_dim), cfg.model_options(),
                                 std::move(partition), train_ds.num_law(), train_ds.num_charge(),
                                 PenaltyBucketTable::kNumClasses, vocab.embedding, article_ids,
                                 static_cast<uint64_t>(cfg.seed));
  ModelState& s = res.state;
  auto params = s.parameters();

  Adam opt;
  opt.lr = cfg.lr;
  std::mt19937_64 shuffle_rng(static_cast<uint64_t>(cfg.seed) * 0x9E3779B97F4A7C15ull + 1);

  long n = static_cast<long>(train_ds.cases.size());
  long steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  long warmup_steps =
      std::max<long>(1, static_cast<long>(std::ceil(cfg.warmup_epochs * steps_per_epoch)));

  std::vector<size_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();  // triggers a shuffle on first use
  auto next_batch = [&]() {
    std::vector<const LawCase*> batch;
    for (int k = 0; k < cfg.batch_size; ++k) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        cursor = 0;
      }
      batch.push_back(&train_ds.cases[order[cursor++]]);
      if (batch.size() == static_cast<size_t>(cfg.batch_size)) break;
    }
    return batch;
  };

  long step = 0;
  auto notify = [&](const char* event) {
    if (hooks.observer) hooks.observer(event, step);
  };

  auto run_step = [&](Phase phase) -> detail::BatchLoss {
    ++step;
    notify("forward");
    Tape t;
    auto batch = next_batch();
    detail::BatchLoss bl = detail::batch_loss(t, s, batch, vocab, cfg, phase);
    double lv = t.val(bl.loss)(0, 0);
    if (!std::isfinite(lv))
      throw std::runtime_error("training diverged: non-finite loss at step " +
                               std::to_string(step));
    s.zero_grads();
    t.backward(bl.loss);
    clip_global_norm(params, 5.0);
    opt.step(params);
    for (auto& h : s.heads) {
      double tau = std::exp(h.rho.value(0, 0));
      if (!std::isfinite(tau) || tau <= 0.0)
        throw std::runtime_error("training diverged: classifier scale under/overflowed at step " +
                                 std::to_string(step));
    }
    notify("optimizer_apply");
    if (phase == Phase::kMain && s.opts.use_revised) {
      momentum_update(s.law_mem, s.heads[0].Wp.value, cfg.lambda_momentum);
      momentum_update(s.charge_mem, s.heads[1].Wp.value, cfg.lambda_momentum);
      notify("momentum_update");
    }
    return bl;
  };

  for (long w = 0; w < warmup_steps; ++w) run_step(Phase::kWarmup);
  if (s.opts.use_revised) {
    warmup_init(s.law_mem, s.heads[0].Wp.value, step, warmup_steps);
    warmup_init(s.charge_mem, s.heads[1].Wp.value, step, warmup_steps);
  }

  ModelState best = s;
  double best_metric = -1.0;
  int best_epoch = -1;
  auto consider = [&](int epoch, const std::array<TaskMetrics, 3>& val) {
    double avg = (val[0].macro_f1 + val[1].macro_f1 + val[2].macro_f1) / 3.0;
    if (avg > best_metric) {
      best_metric = avg;
      best_epoch = epoch;
      best = s;
    }
    return avg;
  };

  const Dataset& vds = valid_ds.cases.empty() ? train_ds : valid_ds;
  if (cfg.epochs == 0) {
    auto val = detail::evaluate_split(s, vocab, vds);
    EpochLog el;
    el.epoch = 0;
    el.val = val;
    el.val_avg_f1 = consider(0, val);
    res.log.push_back(el);
  }

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochLog el;
    el.epoch = epoch;
    for (long b = 0; b < steps_per_epoch; ++b) {
      auto bl = run_step(Phase::kMain);
      el.loss_p += bl.lp;
      el.loss_c += bl.lc;
      el.loss_m += bl.lm;
    }
    el.loss_p /= static_cast<double>(steps_per_epoch);
    el.loss_c /= static_cast<double>(steps_per_epoch);
    el.loss_m /= static_cast<double>(steps_per_epoch);
    el.val = detail::evaluate_split(s, vocab, vds);
    el.val_avg_f1 = consider(epoch, el.val);
    res.log.push_back(el);

    if (hooks.stop_at_train_accuracy >= 0.0) {
      auto tr = detail::evaluate_split(s, vocab, train_ds);
      if (tr[0].accuracy >= hooks.stop_at_train_accuracy &&
          tr[1].accuracy >= hooks.stop_at_train_accuracy &&
          tr[2].accuracy >= hooks.stop_at_train_accuracy) {
        best = s;  // overfit runs want the final state
        best_metric = el.val_avg_f1;
        best_epoch = epoch;
        break;
      }
    }
  }

  res.best_metric = best_metric;
  res.best_epoch = best_epoch;
  res.steps = step;
  res.state = std::move(best);
  return res;
}

}  // namespace dladan
