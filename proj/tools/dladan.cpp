// dladan: synthesize, preprocess, train, evaluate and ablate confusable
// legal-judgment corpora from one binary. Every command is deterministic
// given its config and seed, and writes only under --out.

#include <CLI11.hpp>

#include <iostream>

#include "dladan/pipeline.hpp"

namespace {

using dladan::require;

std::vector<std::pair<std::string, std::string>> parse_kv_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto eq = line.find('=');
    require(eq != std::string::npos,
            "config line " + std::to_string(lineno) + ": expected key = value");
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t\r");
      size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> gather_settings(const std::string& config_path,
                                                                 const std::vector<std::string>& sets) {
  std::vector<std::pair<std::string, std::string>> kv;
  if (!config_path.empty()) kv = parse_kv_text(dladan::read_text(config_path));
  for (const auto& s : sets) {
    auto eq = s.find('=');
    require(eq != std::string::npos, "--set expects KEY=VALUE, got \"" + s + "\"");
    kv.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  return kv;
}

void apply_synth_setting(dladan::SynthCmdOptions& o, const std::string& k, const std::string& v) {
  if (k == "num_communities") o.synth.num_communities = std::stoi(v);
  else if (k == "articles_per_community") o.synth.articles_per_community = std::stoi(v);
  else if (k == "shared_tokens_per_community") o.synth.shared_tokens_per_community = std::stoi(v);
  else if (k == "distinguishing_tokens_per_article")
    o.synth.distinguishing_tokens_per_article = std::stoi(v);
  else if (k == "distinguishing_token_rate") o.synth.distinguishing_token_rate = std::stod(v);
  else if (k == "head_tail_imbalance_ratio") o.synth.head_tail_imbalance_ratio = std::stod(v);
  else if (k == "cases_per_head_article") o.synth.cases_per_head_article = std::stoi(v);
  else if (k == "noise_vocab_size") o.synth.noise_vocab_size = std::stoi(v);
  else if (k == "valid_frac") o.valid_frac = std::stod(v);
  else if (k == "test_frac") o.test_frac = std::stod(v);
  else if (k == "seed") o.synth.rng_seed = static_cast<uint64_t>(std::stol(v));
  else throw std::runtime_error("synth: unknown config key \"" + k + "\"");
}

void apply_preprocess_setting(dladan::PreprocessCmdOptions& o, const std::string& k,
                              const std::string& v) {
  if (k == "min_tokens") o.min_tokens = std::stol(v);
  else if (k == "min_label_count") o.min_label_count = std::stol(v);
  else if (k == "min_frequency") o.min_frequency = std::stol(v);
  else if (k == "embedding_dim") o.embedding_dim = std::stoi(v);
  else if (k == "embeddings_path") o.embeddings_path = v;
  else if (k == "theta") o.theta = std::stod(v);
  else if (k == "seed") o.seed = std::stol(v);
  else if (k == "schema") {
    if (v == "cail") o.schema = dladan::Schema::kCail;
    else if (v == "generic") o.schema = dladan::Schema::kGeneric;
    else throw std::runtime_error("schema must be cail or generic");
  } else {
    throw std::runtime_error("preprocess: unknown config key \"" + k + "\"");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"confusable law-article judgment prediction pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_dir, in_dir, data_dir, ckpt_dir, test_file;
  std::vector<std::string> sets;
  long seed_flag = -1;
  bool seed_given = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key = value config file");
    cmd->add_option("--out", out_dir, "output directory")->required();
    cmd->add_option("--set", sets, "KEY=VALUE override, repeatable");
    cmd->add_option("--seed", seed_flag, "seed override")->each([&](const std::string&) {
      seed_given = true;
    });
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic confusable corpus");
  add_common(synth);

  CLI::App* preprocess = app.add_subcommand("preprocess", "filter, bucket and index a corpus");
  add_common(preprocess);
  preprocess->add_option("--in", in_dir, "directory with train/valid/test/articles JSONL")
      ->required();

  CLI::App* train = app.add_subcommand("train", "train on a preprocessed corpus");
  add_common(train);
  train->add_option("--data", data_dir, "preprocessed corpus directory")->required();

  bool eval_probs = false;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a test file");
  add_common(eval);
  eval->add_option("--checkpoint", ckpt_dir, "checkpoint directory")->required();
  eval->add_option("--test", test_file, "test JSONL file")->required();
  eval->add_option("--data", data_dir, "optional preprocessed dir for a vocab cross-check");
  eval->add_flag("--probs", eval_probs, "include probability arrays in predictions.jsonl");

  CLI::App* ablate = app.add_subcommand("ablate", "train and compare all ablation variants");
  add_common(ablate);
  ablate->add_option("--data", data_dir, "preprocessed corpus directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    auto kv = gather_settings(config_path, sets);
    if (synth->parsed()) {
      dladan::SynthCmdOptions o;
      for (auto& [k, v] : kv) apply_synth_setting(o, k, v);
      if (seed_given) o.synth.rng_seed = static_cast<uint64_t>(seed_flag);
      dladan::cmd_synth(o, out_dir);
    } else if (preprocess->parsed()) {
      dladan::PreprocessCmdOptions o;
      for (auto& [k, v] : kv) apply_preprocess_setting(o, k, v);
      if (seed_given) o.seed = seed_flag;
      dladan::cmd_preprocess(in_dir, o, out_dir);
    } else if (train->parsed()) {
      dladan::TrainConfig cfg;
      for (auto& [k, v] : kv) cfg.set(k, v);
      if (seed_given) cfg.seed = seed_flag;
      cfg.validate();
      dladan::cmd_train(data_dir, cfg, out_dir);
    } else if (eval->parsed()) {
      std::filesystem::create_directories(out_dir);
      dladan::cmd_eval(ckpt_dir, test_file, out_dir + "/metrics.json", data_dir, eval_probs);
    } else if (ablate->parsed()) {
      dladan::TrainConfig cfg;
      for (auto& [k, v] : kv) cfg.set(k, v);
      if (seed_given) cfg.seed = seed_flag;
      cfg.validate();
      dladan::cmd_ablate(data_dir, cfg, out_dir);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
