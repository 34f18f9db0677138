#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dladan/mat.hpp"

namespace dladan {

struct ClassMetrics {
  long tp = 0;
  long fp = 0;
  long fn = 0;
  long support = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Accuracy plus macro-averaged precision/recall/F1 over a declared class set.
// Macro averages include classes with zero support (scored 0).
struct TaskMetrics {
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  long total = 0;
  std::vector<ClassMetrics> per_class;
};

inline TaskMetrics compute_metrics(const std::vector<int>& preds, const std::vector<int>& golds,
                                   int num_classes) {
  require(!preds.empty(), "compute_metrics: empty input");
  require(preds.size() == golds.size(), "compute_metrics: length mismatch");
  TaskMetrics r;
  r.total = static_cast<long>(preds.size());
  r.per_class.resize(static_cast<size_t>(num_classes));
  long correct = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    int p = preds[i], g = golds[i];
    require(p >= 0 && p < num_classes, "compute_metrics: prediction out of range");
    require(g >= 0 && g < num_classes, "compute_metrics: gold label out of range");
    r.per_class[static_cast<size_t>(g)].support++;
    if (p == g) {
      correct++;
      r.per_class[static_cast<size_t>(p)].tp++;
    } else {
      r.per_class[static_cast<size_t>(p)].fp++;
      r.per_class[static_cast<size_t>(g)].fn++;
    }
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.total);
  for (auto& c : r.per_class) {
    c.precision = (c.tp + c.fp) > 0 ? static_cast<double>(c.tp) / (c.tp + c.fp) : 0.0;
    c.recall = (c.tp + c.fn) > 0 ? static_cast<double>(c.tp) / (c.tp + c.fn) : 0.0;
    c.f1 = (c.precision + c.recall) > 0 ? 2.0 * c.precision * c.recall / (c.precision + c.recall)
                                        : 0.0;
    r.macro_precision += c.precision;
    r.macro_recall += c.recall;
    r.macro_f1 += c.f1;
  }
  r.macro_precision /= num_classes;
  r.macro_recall /= num_classes;
  r.macro_f1 /= num_classes;
  return r;
}

enum class StrataMode { kTailByCount, kFrequencyTerciles };

struct StrataSpec {
  StrataMode mode = StrataMode::kTailByCount;
  long tail_threshold = 200;  // classes with fewer training cases are "tail"
};

struct StratumReport {
  std::string name;
  std::vector<int> classes;
  std::optional<TaskMetrics> metrics;  // nullopt when the stratum is empty
};

// Metrics restricted to instances whose gold label falls in the stratum;
// macro averages run over the stratum's class set only.
inline std::optional<TaskMetrics> metrics_on_classes(const std::vector<int>& preds,
                                                     const std::vector<int>& golds,
                                                     const std::vector<int>& classes) {
  if (classes.empty()) return std::nullopt;
  std::vector<char> in_stratum;
  int max_cls = 0;
  for (size_t i = 0; i < preds.size(); ++i) max_cls = std::max({max_cls, preds[i], golds[i]});
  for (int c : classes) max_cls = std::max(max_cls, c);
  in_stratum.assign(static_cast<size_t>(max_cls) + 1, 0);
  for (int c : classes) in_stratum[static_cast<size_t>(c)] = 1;

  std::map<int, ClassMetrics> per;
  for (int c : classes) per[c] = ClassMetrics{};
  long total = 0, correct = 0;
  for (size_t i = 0; i < preds.size(); ++i) {
    if (!in_stratum[static_cast<size_t>(golds[i])]) continue;
    total++;
    per[golds[i]].support++;
    if (preds[i] == golds[i]) {
      correct++;
      per[preds[i]].tp++;
    } else {
      per[golds[i]].fn++;
      if (in_stratum[static_cast<size_t>(preds[i])]) per[preds[i]].fp++;
    }
  }
  if (total == 0) return std::nullopt;
  TaskMetrics r;
  r.total = total;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  for (auto& [cls, c] : per) {
    c.precision = (c.tp + c.fp) > 0 ? static_cast<double>(c.tp) / (c.tp + c.fp) : 0.0;
    c.recall = (c.tp + c.fn) > 0 ? static_cast<double>(c.tp) / (c.tp + c.fn) : 0.0;
    c.f1 = (c.precision + c.recall) > 0 ? 2.0 * c.precision * c.recall / (c.precision + c.recall)
                                        : 0.0;
    r.macro_precision += c.precision;
    r.macro_recall += c.recall;
    r.macro_f1 += c.f1;
    r.per_class.push_back(c);
  }
  size_t k = classes.size();
  r.macro_precision /= static_cast<double>(k);
  r.macro_recall /= static_cast<double>(k);
  r.macro_f1 /= static_cast<double>(k);
  return r;
}

// Frequency-sorted class list split into three near-equal groups; the middle
// group absorbs the remainder (149 classes -> 49/51/49).
inline std::vector<std::vector<int>> frequency_terciles(const std::vector<long>& train_freq) {
  int k = static_cast<int>(train_freq.size());
  std::vector<int> order(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) order[static_cast<size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return train_freq[static_cast<size_t>(a)] > train_freq[static_cast<size_t>(b)];
  });
  int side = k / 3;
  int mid = k - 2 * side;
  std::vector<std::vector<int>> groups(3);
  for (int i = 0; i < k; ++i) {
    int g = i < side ? 0 : (i < side + mid ? 1 : 2);
    groups[static_cast<size_t>(g)].push_back(order[static_cast<size_t>(i)]);
  }
  return groups;
}

inline std::vector<StratumReport> stratified_eval(const std::vector<int>& preds,
                                                  const std::vector<int>& golds, int num_classes,
                                                  const std::vector<long>& train_freq,
                                                  const StrataSpec& spec) {
  require(static_cast<int>(train_freq.size()) == num_classes,
          "stratified_eval: training frequency missing for some class");
  std::vector<StratumReport> out;
  if (spec.mode == StrataMode::kTailByCount) {
    StratumReport tail{"tail", {}, std::nullopt};
    StratumReport head{"head", {}, std::nullopt};
    for (int c = 0; c < num_classes; ++c) {
      if (train_freq[static_cast<size_t>(c)] < spec.tail_threshold)
        tail.classes.push_back(c);
      else
        head.classes.push_back(c);
    }
    tail.metrics = metrics_on_classes(preds, golds, tail.classes);
    head.metrics = metrics_on_classes(preds, golds, head.classes);
    out.push_back(std::move(tail));
    out.push_back(std::move(head));
  } else {
    auto groups = frequency_terciles(train_freq);
    const char* names[3] = {"high", "medium", "low"};
    for (int g = 0; g < 3; ++g) {
      StratumReport s{names[g], groups[static_cast<size_t>(g)], std::nullopt};
      s.metrics = metrics_on_classes(preds, golds, s.classes);
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace dladan
