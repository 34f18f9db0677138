#pragma once

#include "dladan/checkpoint.hpp"
#include "dladan/metrics.hpp"
#include "dladan/training.hpp"

namespace dladan {

inline const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> v = {"full", "no_RM", "no_GCL", "no_GDO", "no_All"};
  return v;
}

struct EvalReport {
  std::array<TaskMetrics, 3> tasks;  // law, charge, penalty
  std::vector<StratumReport> law_tail;
  std::vector<StratumReport> charge_tail;
  std::vector<StratumReport> charge_terciles;
};

inline std::vector<long> label_frequencies(const Dataset& ds, Task task, int num_classes) {
  std::vector<long> freq(static_cast<size_t>(num_classes), 0);
  for (const auto& c : ds.cases) {
    int y = task == Task::kLaw ? c.law_label
                               : (task == Task::kCharge ? c.charge_label : c.penalty_label);
    freq[static_cast<size_t>(y)]++;
  }
  return freq;
}

inline EvalReport evaluate_model(ModelState& s, const Vocab& vocab, const Dataset& test,
                                 const std::vector<long>& train_law_freq,
                                 const std::vector<long>& train_charge_freq,
                                 long tail_threshold = 200,
                                 std::vector<Prediction>* preds_out = nullptr) {
  require(!test.cases.empty(), "evaluate_model: empty test split");
  std::vector<const LawCase*> ptrs;
  ptrs.reserve(test.cases.size());
  for (const auto& c : test.cases) ptrs.push_back(&c);
  auto preds = forward_batch(ptrs, s, vocab, Phase::kInference);
  if (preds_out) *preds_out = preds;

  std::array<std::vector<int>, 3> p, g;
  for (size_t i = 0; i < preds.size(); ++i) {
    for (int k = 0; k < 3; ++k) p[static_cast<size_t>(k)].push_back(preds[i].argmax[static_cast<size_t>(k)]);
    g[0].push_back(test.cases[i].law_label);
    g[1].push_back(test.cases[i].charge_label);
    g[2].push_back(test.cases[i].penalty_label);
  }

  EvalReport r;
  r.tasks[0] = compute_metrics(p[0], g[0], s.num_law);
  r.tasks[1] = compute_metrics(p[1], g[1], s.num_charge);
  r.tasks[2] = compute_metrics(p[2], g[2], s.num_penalty);

  StrataSpec tail;
  tail.mode = StrataMode::kTailByCount;
  tail.tail_threshold = tail_threshold;
  r.law_tail = stratified_eval(p[0], g[0], s.num_law, train_law_freq, tail);
  r.charge_tail = stratified_eval(p[1], g[1], s.num_charge, train_charge_freq, tail);
  StrataSpec terc;
  terc.mode = StrataMode::kFrequencyTerciles;
  r.charge_terciles = stratified_eval(p[1], g[1], s.num_charge, train_charge_freq, terc);
  return r;
}

struct AblationRun {
  std::string variant;
  EvalReport report;
  TrainResult trained;
};

// Trains and tests one variant with an otherwise identical config/seed.
// Variant semantics live in TrainConfig: no_RM drops the revised branch,
// no_GCL sets theta 0 (one global community), no_GDO sets H 0 for both
// stacks, no_All combines singleton communities with no_RM and no_GDO.
inline AblationRun run_ablation(const Dataset& train_ds, const Dataset& valid_ds,
                                const Dataset& test_ds, const Vocab& vocab, TrainConfig base,
                                const std::string& variant, const TrainHooks& hooks = {},
                                long tail_threshold = 200) {
  require(std::find(ablation_variants().begin(), ablation_variants().end(), variant) !=
              ablation_variants().end(),
          "run_ablation: unknown variant " + variant);
  base.ablation = variant;
  AblationRun run;
  run.variant = variant;
  run.trained = train(train_ds, valid_ds, vocab, base, hooks);
  run.report = evaluate_model(run.trained.state, vocab, test_ds,
                              label_frequencies(train_ds, Task::kLaw, train_ds.num_law()),
                              label_frequencies(train_ds, Task::kCharge, train_ds.num_charge()),
                              tail_threshold);
  return run;
}

// Side-by-side CSV, one row per variant.
inline std::string ablation_csv(const std::vector<AblationRun>& runs) {
  std::string s =
      "variant,law_acc,law_mp,law_mr,law_f1,charge_acc,charge_mp,charge_mr,charge_f1,"
      "penalty_acc,penalty_mp,penalty_mr,penalty_f1\n";
  for (const auto& r : runs) {
    s += r.variant;
    for (int k = 0; k < 3; ++k) {
      const TaskMetrics& m = r.report.tasks[static_cast<size_t>(k)];
      s += "," + format_double(m.accuracy) + "," + format_double(m.macro_precision) + "," +
           format_double(m.macro_recall) + "," + format_double(m.macro_f1);
    }
    s += "\n";
  }
  return s;
}

}  // namespace dladan
