#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <thread>

#include "dladan/ablation.hpp"

namespace dladan {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// JSON serialization of reports and run artifacts
// ---------------------------------------------------------------------------

inline nlohmann::json task_metrics_to_json(const TaskMetrics& m) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& c : m.per_class)
    per.push_back({{"precision", c.precision},
                   {"recall", c.recall},
                   {"f1", c.f1},
                   {"support", c.support}});
  return nlohmann::json{{"acc", m.accuracy}, {"mp", m.macro_precision}, {"mr", m.macro_recall},
                        {"f1", m.macro_f1},  {"total", m.total},        {"per_class", per}};
}

inline nlohmann::json strata_to_json(const std::vector<StratumReport>& strata) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& s : strata) {
    if (s.metrics) {
      nlohmann::json e = task_metrics_to_json(*s.metrics);
      e["classes"] = s.classes;
      j[s.name] = e;
    } else {
      j[s.name] = nullptr;
    }
  }
  return j;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  return nlohmann::json{
      {"law", task_metrics_to_json(r.tasks[0])},
      {"charge", task_metrics_to_json(r.tasks[1])},
      {"penalty", task_metrics_to_json(r.tasks[2])},
      {"strata",
       {{"law_tail", strata_to_json(r.law_tail)},
        {"charge_tail", strata_to_json(r.charge_tail)},
        {"charge_terciles", strata_to_json(r.charge_terciles)}}}};
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  require(out.good(), "cannot write " + path);
  out << text;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Random-init vocabularies store tokens only (training redraws the rows from
// its seed); imported vocabularies keep their rows so training sees them.
inline void write_vocab_json(const Vocab& v, const std::string& path,
                             bool store_rows = false) {
  nlohmann::json j{{"embedding_dim", v.embedding_dim}, {"tokens", v.tokens}};
  if (store_rows) {
    std::vector<std::vector<double>> rows(static_cast<size_t>(v.size()));
    for (int i = 0; i < v.size(); ++i)
      for (int c = 0; c < v.embedding_dim; ++c) rows[static_cast<size_t>(i)].push_back(v.embedding(i, c));
    j["embedding"] = rows;
  }
  write_text(path, j.dump() + "\n");
}

inline Vocab read_vocab_json(const std::string& path, uint64_t seed) {
  nlohmann::json j = nlohmann::json::parse(read_text(path));
  Vocab v;
  v.embedding_dim = j.at("embedding_dim").get<int>();
  v.tokens = j.at("tokens").get<std::vector<std::string>>();
  for (size_t i = 0; i < v.tokens.size(); ++i) v.index[v.tokens[i]] = static_cast<int>(i);
  if (j.contains("embedding")) {
    auto rows = j.at("embedding").get<std::vector<std::vector<double>>>();
    require(static_cast<int>(rows.size()) == v.size(), "vocab.json: embedding row count");
    v.embedding = Mat(v.size(), v.embedding_dim);
    for (int i = 0; i < v.size(); ++i)
      for (int c = 0; c < v.embedding_dim; ++c) v.embedding(i, c) = rows[static_cast<size_t>(i)][static_cast<size_t>(c)];
  } else {
    std::mt19937_64 rng(seed);
    v.embedding = Mat::uniform(v.size(), v.embedding_dim, -0.1, 0.1, rng);
    for (int j2 = 0; j2 < v.embedding_dim; ++j2) v.embedding(Vocab::kPad, j2) = 0.0;
  }
  return v;
}

inline void write_labels_json(const Dataset& train, const std::string& path) {
  nlohmann::json j{{"law", train.law_names},
                   {"charge", train.charge_names},
                   {"train_law_counts", label_frequencies(train, Task::kLaw, train.num_law())},
                   {"train_charge_counts",
                    label_frequencies(train, Task::kCharge, train.num_charge())},
                   {"penalty_classes", PenaltyBucketTable::kNumClasses}};
  write_text(path, j.dump() + "\n");
}

// ---------------------------------------------------------------------------
// Run-directory commands (the CLI is a thin wrapper over these)
// ---------------------------------------------------------------------------

struct SynthCmdOptions {
  SynthConfig synth;
  double valid_frac = 0.15;
  double test_frac = 0.15;
};

inline void cmd_synth(const SynthCmdOptions& opt, const std::string& out_dir) {
  fs::create_directories(out_dir);
  auto [all, articles] = generate_synthetic(opt.synth);
  Dataset train, valid, test;
  split_dataset(all, opt.valid_frac, opt.test_frac, opt.synth.rng_seed + 1, train, valid, test);
  write_articles_jsonl(articles, all.law_names, out_dir + "/articles.jsonl");
  write_cases_jsonl(train, out_dir + "/train.jsonl");
  write_cases_jsonl(valid, out_dir + "/valid.jsonl");
  write_cases_jsonl(test, out_dir + "/test.jsonl");
}

struct PreprocessCmdOptions {
  long min_tokens = 10;
  long min_label_count = 100;
  long min_frequency = 1;
  int embedding_dim = 200;
  double theta = 0.35;
  long seed = 42;
  Schema schema = Schema::kGeneric;
  std::string embeddings_path;  // pre-trained vectors; empty for random init
};

struct LoadedCorpus {
  Dataset train, valid, test;
  Vocab vocab;
  CommunityPartition partition;
};

inline LoadedCorpus preprocess_corpus(const std::string& in_dir, const PreprocessCmdOptions& opt) {
  LoadedCorpus c;
  std::string articles = in_dir + "/articles.jsonl";
  c.train = load_dataset(in_dir + "/train.jsonl", opt.schema, articles);
  c.valid = load_dataset(in_dir + "/valid.jsonl", opt.schema, articles);
  c.test = load_dataset(in_dir + "/test.jsonl", opt.schema, articles);
  c.valid.split = Split::kValidation;
  c.test.split = Split::kTest;
  PreprocessOptions popt;
  popt.min_tokens = opt.min_tokens;
  popt.min_label_count = opt.min_label_count;
  preprocess_splits(c.train, c.valid, c.test, popt);
  c.vocab = opt.embeddings_path.empty()
                ? build_vocab(c.train, opt.min_frequency, opt.embedding_dim,
                              static_cast<uint64_t>(opt.seed))
                : build_vocab_imported(c.train, opt.min_frequency, opt.embeddings_path,
                                       static_cast<uint64_t>(opt.seed));
  c.partition = partition_communities(build_similarity_graph(compute_tfidf(c.train.articles)),
                                      opt.theta);
  return c;
}

inline void cmd_preprocess(const std::string& in_dir, const PreprocessCmdOptions& opt,
                           const std::string& out_dir) {
  fs::create_directories(out_dir);
  LoadedCorpus c = preprocess_corpus(in_dir, opt);
  write_articles_jsonl(c.train.articles, c.train.law_names, out_dir + "/articles.jsonl");
  write_cases_jsonl(c.train, out_dir + "/train.jsonl");
  write_cases_jsonl(c.valid, out_dir + "/valid.jsonl");
  write_cases_jsonl(c.test, out_dir + "/test.jsonl");
  write_vocab_json(c.vocab, out_dir + "/vocab.json", /*store_rows=*/!opt.embeddings_path.empty());
  write_labels_json(c.train, out_dir + "/labels.json");
  write_text(out_dir + "/partition.json", partition_to_json(c.partition).dump(2) + "\n");
}

// Re-reads a preprocessed directory; label filtering is already done, so
// thresholds drop to zero. Label ids are re-pinned to the labels.json order
// (loading interns charges by first appearance, which need not match).
inline LoadedCorpus load_preprocessed(const std::string& data_dir, uint64_t vocab_seed) {
  LoadedCorpus c;
  std::string articles = data_dir + "/articles.jsonl";
  c.train = load_dataset(data_dir + "/train.jsonl", Schema::kGeneric, articles);
  c.valid = load_dataset(data_dir + "/valid.jsonl", Schema::kGeneric, articles);
  c.test = load_dataset(data_dir + "/test.jsonl", Schema::kGeneric, articles);
  c.valid.split = Split::kValidation;
  c.test.split = Split::kTest;
  PreprocessOptions popt;
  popt.min_tokens = 0;
  popt.min_label_count = 0;
  preprocess_splits(c.train, c.valid, c.test, popt);

  nlohmann::json labels = nlohmann::json::parse(read_text(data_dir + "/labels.json"));
  auto law_ref = labels.at("law").get<std::vector<std::string>>();
  auto charge_ref = labels.at("charge").get<std::vector<std::string>>();
  auto remap_to = [](const std::vector<std::string>& ref, const std::vector<std::string>& cur) {
    std::unordered_map<std::string, int> idx;
    for (size_t i = 0; i < ref.size(); ++i) idx[ref[i]] = static_cast<int>(i);
    std::vector<int> map(cur.size(), -1);
    for (size_t i = 0; i < cur.size(); ++i) {
      auto it = idx.find(cur[i]);
      require(it != idx.end(), "load_preprocessed: label " + cur[i] + " missing from labels.json");
      map[i] = it->second;
    }
    return map;
  };
  auto law_map = remap_to(law_ref, c.train.law_names);
  auto charge_map = remap_to(charge_ref, c.train.charge_names);
  std::vector<LawArticle> articles_ref(law_ref.size());
  for (size_t i = 0; i < c.train.articles.size(); ++i) {
    LawArticle a = c.train.articles[i];
    a.article_id = law_map[i];
    articles_ref[static_cast<size_t>(law_map[i])] = std::move(a);
  }
  for (Dataset* ds : {&c.train, &c.valid, &c.test}) {
    for (auto& lc : ds->cases) {
      lc.law_label = law_map[static_cast<size_t>(lc.law_label)];
      lc.charge_label = charge_map[static_cast<size_t>(lc.charge_label)];
    }
    ds->law_names = law_ref;
    ds->charge_names = charge_ref;
    ds->articles = articles_ref;
  }
  c.vocab = read_vocab_json(data_dir + "/vocab.json", vocab_seed);
  return c;
}

struct EpochLogWriter {
  static std::string line(const EpochLog& el) {
    nlohmann::json j{{"epoch", el.epoch},
                     {"loss_p", el.loss_p},
                     {"loss_c", el.loss_c},
                     {"loss_m", el.loss_m}};
    const char* names[3] = {"law", "charge", "penalty"};
    for (int k = 0; k < 3; ++k) {
      const TaskMetrics& m = el.val[static_cast<size_t>(k)];
      j[std::string("val_") + names[k]] =
          {{"acc", m.accuracy}, {"mp", m.macro_precision}, {"mr", m.macro_recall},
           {"f1", m.macro_f1}};
    }
    return j.dump();
  }
};

inline void cmd_train(const std::string& data_dir, const TrainConfig& cfg,
                      const std::string& out_dir, const TrainHooks& hooks = {}) {
  fs::create_directories(out_dir);
  LoadedCorpus c = load_preprocessed(data_dir, static_cast<uint64_t>(cfg.seed));
  TrainResult res = train(c.train, c.valid, c.vocab, cfg, hooks);

  CheckpointMeta meta;
  meta.config = cfg;
  meta.vocab_hash = c.vocab.hash();
  meta.partition_hash = res.state.partition.hash();
  meta.step = res.steps;
  meta.best_metric = res.best_metric;
  save_checkpoint(out_dir + "/checkpoint", res.state, meta);
  fs::copy_file(data_dir + "/vocab.json", out_dir + "/checkpoint/vocab.json",
                fs::copy_options::overwrite_existing);
  fs::copy_file(data_dir + "/labels.json", out_dir + "/checkpoint/labels.json",
                fs::copy_options::overwrite_existing);

  std::string log;
  for (const auto& el : res.log) log += EpochLogWriter::line(el) + "\n";
  write_text(out_dir + "/train_log.jsonl", log);
}

inline nlohmann::json prediction_to_json(const Prediction& p, bool include_probs) {
  nlohmann::json j{{"law", p.argmax[0]}, {"charge", p.argmax[1]}, {"penalty", p.argmax[2]}};
  if (include_probs) {
    j["probs"] = {{"law", p.y[0].a}, {"charge", p.y[1].a}, {"penalty", p.y[2].a}};
  }
  return j;
}

// Evaluates a checkpoint on a raw test JSONL. When data_dir is given, its
// vocabulary hash must match the checkpoint manifest. Besides the metrics
// file, per-case predictions go to predictions.jsonl next to it.
inline EvalReport cmd_eval(const std::string& ckpt_dir, const std::string& test_file,
                           const std::string& out_file, const std::string& data_dir = "",
                           bool include_probs = false) {
  LoadedCheckpoint lc = load_checkpoint(ckpt_dir);
  Vocab vocab = read_vocab_json(ckpt_dir + "/vocab.json",
                                static_cast<uint64_t>(lc.meta.config.seed));
  require(vocab.hash() == lc.meta.vocab_hash,
          "vocab mismatch: checkpoint manifest does not match its vocab.json");
  if (!data_dir.empty()) {
    Vocab dv = read_vocab_json(data_dir + "/vocab.json", 0);
    require(dv.hash() == lc.meta.vocab_hash,
            "vocab mismatch: dataset vocabulary differs from the checkpoint's");
  }

  nlohmann::json labels = nlohmann::json::parse(read_text(ckpt_dir + "/labels.json"));
  auto law_names = labels.at("law").get<std::vector<std::string>>();
  auto charge_names = labels.at("charge").get<std::vector<std::string>>();
  auto law_freq = labels.at("train_law_counts").get<std::vector<long>>();
  auto charge_freq = labels.at("train_charge_counts").get<std::vector<long>>();

  Dataset test = load_dataset(test_file, Schema::kGeneric);
  // remap loaded label ids onto the checkpoint's label order
  std::unordered_map<std::string, int> law_map, charge_map;
  for (size_t i = 0; i < law_names.size(); ++i) law_map[law_names[i]] = static_cast<int>(i);
  for (size_t i = 0; i < charge_names.size(); ++i)
    charge_map[charge_names[i]] = static_cast<int>(i);
  Dataset mapped;
  mapped.split = Split::kTest;
  mapped.law_names = law_names;
  mapped.charge_names = charge_names;
  PenaltyBucketTable buckets;
  for (LawCase c : test.cases) {
    auto li = law_map.find(test.law_names[static_cast<size_t>(c.law_label)]);
    auto ci = charge_map.find(test.charge_names[static_cast<size_t>(c.charge_label)]);
    if (li == law_map.end() || ci == charge_map.end()) continue;
    c.law_label = li->second;
    c.charge_label = ci->second;
    c.penalty_label = bucket_penalty(c.raw_penalty, buckets);
    mapped.cases.push_back(std::move(c));
  }
  require(!mapped.cases.empty(), "eval: no test case carries labels known to the checkpoint");

  std::vector<Prediction> preds;
  EvalReport r = evaluate_model(lc.state, vocab, mapped, law_freq, charge_freq, 200, &preds);
  if (!out_file.empty()) {
    write_text(out_file, report_to_json(r).dump(2) + "\n");
    std::string lines;
    for (const auto& p : preds) lines += prediction_to_json(p, include_probs).dump() + "\n";
    write_text((fs::path(out_file).parent_path() / "predictions.jsonl").string(), lines);
  }
  return r;
}

inline int env_thread_cap() {
  const char* env = std::getenv("DLADAN_THREADS");
  if (!env) return 1;
  int n = std::atoi(env);
  return n < 1 ? 1 : n;
}

// Trains and evaluates all five variants; runs land in distinct directories
// and may execute in parallel up to DLADAN_THREADS workers.
inline std::vector<AblationRun> cmd_ablate(const std::string& data_dir, const TrainConfig& cfg,
                                           const std::string& out_dir, long tail_threshold = 200) {
  fs::create_directories(out_dir);
  LoadedCorpus c = load_preprocessed(data_dir, static_cast<uint64_t>(cfg.seed));

  const auto& variants = ablation_variants();
  std::vector<AblationRun> runs(variants.size());
  std::vector<std::exception_ptr> errors(variants.size());
  int cap = env_thread_cap();

  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= variants.size()) return;
      try {
        runs[i] = run_ablation(c.train, c.valid, c.test, c.vocab, cfg, variants[i], {},
                               tail_threshold);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (cap <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < std::min<int>(cap, static_cast<int>(variants.size())); ++i)
      pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (auto& run : runs) {
    std::string vdir = out_dir + "/" + run.variant;
    fs::create_directories(vdir);
    CheckpointMeta meta;
    meta.config = cfg;
    meta.config.ablation = run.variant;
    meta.vocab_hash = c.vocab.hash();
    meta.partition_hash = run.trained.state.partition.hash();
    meta.step = run.trained.steps;
    meta.best_metric = run.trained.best_metric;
    save_checkpoint(vdir + "/checkpoint", run.trained.state, meta);
    write_text(out_dir + "/metrics_" + run.variant + ".json",
               report_to_json(run.report).dump(2) + "\n");
  }
  write_text(out_dir + "/ablation.csv", ablation_csv(runs));
  return runs;
}

}  // namespace dladan
