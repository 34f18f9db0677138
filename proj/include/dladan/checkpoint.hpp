#pragma once

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "dladan/training.hpp"

namespace dladan {

// Checkpoint directory layout:
//   manifest.json  config snapshot, model shape, hashes, step, best metric
//   tensors.bin    named raw-double archive (parameters + memory matrices)
//   partition.json community partition incl. retained edges
// Raw doubles round-trip bit-identically, so a reloaded model's forward
// outputs match the saved one exactly.

namespace detail {

constexpr char kTensorMagic[8] = {'D', 'L', 'D', 'N', 'T', 'N', 'S', '1'};

inline void write_u32(std::ostream& o, uint32_t v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline uint32_t read_u32(std::istream& i) {
  uint32_t v = 0;
  i.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

inline void write_tensor(std::ostream& o, const std::string& name, const Mat& m) {
  write_u32(o, static_cast<uint32_t>(name.size()));
  o.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(o, static_cast<uint32_t>(m.rows));
  write_u32(o, static_cast<uint32_t>(m.cols));
  o.write(reinterpret_cast<const char*>(m.a.data()),
          static_cast<std::streamsize>(m.size() * sizeof(double)));
}

inline std::map<std::string, Mat> read_tensor_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  require(in.good() && std::memcmp(magic, kTensorMagic, 8) == 0,
          "checkpoint: bad tensor archive magic");
  uint32_t count = read_u32(in);
  std::map<std::string, Mat> out;
  for (uint32_t k = 0; k < count; ++k) {
    uint32_t len = read_u32(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    uint32_t rows = read_u32(in), cols = read_u32(in);
    Mat m(static_cast<int>(rows), static_cast<int>(cols));
    in.read(reinterpret_cast<char*>(m.a.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
    require(in.good(), "checkpoint: truncated tensor archive at " + name);
    out.emplace(std::move(name), std::move(m));
  }
  return out;
}

}  // namespace detail

inline nlohmann::json config_to_json(const TrainConfig& cfg) {
  return nlohmann::json{{"theta", cfg.theta},
                        {"lambda_momentum", cfg.lambda_momentum},
                        {"lambda_c", cfg.lambda_c},
                        {"lambda_m", cfg.lambda_m},
                        {"lr", cfg.lr},
                        {"batch_size", cfg.batch_size},
                        {"epochs", cfg.epochs},
                        {"warmup_epochs", cfg.warmup_epochs},
                        {"d_w", cfg.d_w},
                        {"d_s", cfg.d_s},
                        {"d_l", cfg.d_l},
                        {"d_f", cfg.d_f},
                        {"gdo_layers", cfg.gdo_layers},
                        {"seed", cfg.seed},
                        {"ablation", cfg.ablation}};
}

struct CheckpointMeta {
  TrainConfig config;
  std::string vocab_hash;
  std::string partition_hash;
  long step = 0;
  double best_metric = 0.0;
};

inline void save_checkpoint(const std::string& dir, ModelState& s, const CheckpointMeta& meta) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  std::vector<std::pair<std::string, const Mat*>> tensors;
  for (Param* p : s.parameters()) tensors.emplace_back(p->name, &p->value);
  if (s.opts.use_revised) {
    tensors.emplace_back("memory.law", &s.law_mem.M);
    tensors.emplace_back("memory.charge", &s.charge_mem.M);
  }
  {
    std::ofstream out(dir + "/tensors.bin", std::ios::binary);
    require(out.good(), "checkpoint: cannot write " + dir + "/tensors.bin");
    out.write(detail::kTensorMagic, 8);
    detail::write_u32(out, static_cast<uint32_t>(tensors.size()));
    for (auto& [name, m] : tensors) detail::write_tensor(out, name, *m);
  }
  {
    std::ofstream out(dir + "/partition.json");
    out << partition_to_json_full(s.partition).dump(2) << "\n";
  }
  nlohmann::json j;
  j["config"] = config_to_json(meta.config);
  j["vocab_hash"] = meta.vocab_hash;
  j["partition_hash"] = meta.partition_hash;
  j["step"] = meta.step;
  j["best_metric"] = meta.best_metric;
  j["model"] = {{"num_law", s.num_law},
                {"num_charge", s.num_charge},
                {"num_penalty", s.num_penalty},
                {"emb_dim", s.dims.emb_dim},
                {"vocab_size", s.embedding.value.rows},
                {"memories_initialized", s.opts.use_revised && s.law_mem.initialized},
                {"article_token_ids", s.article_ids}};
  std::ofstream out(dir + "/manifest.json");
  require(out.good(), "checkpoint: cannot write " + dir + "/manifest.json");
  out << j.dump(2) << "\n";
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.theta = j.at("theta").get<double>();
  cfg.lambda_momentum = j.at("lambda_momentum").get<double>();
  cfg.lambda_c = j.at("lambda_c").get<double>();
  cfg.lambda_m = j.at("lambda_m").get<double>();
  cfg.lr = j.at("lr").get<double>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.epochs = j.at("epochs").get<int>();
  cfg.warmup_epochs = j.at("warmup_epochs").get<double>();
  cfg.d_w = j.at("d_w").get<int>();
  cfg.d_s = j.at("d_s").get<int>();
  cfg.d_l = j.at("d_l").get<int>();
  cfg.d_f = j.at("d_f").get<int>();
  cfg.gdo_layers = j.at("gdo_layers").get<int>();
  cfg.seed = j.at("seed").get<long>();
  cfg.ablation = j.at("ablation").get<std::string>();
  return cfg;
}

struct LoadedCheckpoint {
  ModelState state;
  CheckpointMeta meta;
};

inline LoadedCheckpoint load_checkpoint(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.json");
  require(mf.good(), "checkpoint: cannot open " + dir + "/manifest.json");
  nlohmann::json j = nlohmann::json::parse(mf);

  LoadedCheckpoint lc;
  lc.meta.config = config_from_json(j.at("config"));
  lc.meta.vocab_hash = j.at("vocab_hash").get<std::string>();
  lc.meta.partition_hash = j.at("partition_hash").get<std::string>();
  lc.meta.step = j.at("step").get<long>();
  lc.meta.best_metric = j.at("best_metric").get<double>();

  std::ifstream pf(dir + "/partition.json");
  require(pf.good(), "checkpoint: cannot open " + dir + "/partition.json");
  CommunityPartition partition = partition_from_json(nlohmann::json::parse(pf));

  const auto& model = j.at("model");
  int vocab_size = model.at("vocab_size").get<int>();
  int emb_dim = model.at("emb_dim").get<int>();
  auto article_ids =
      model.at("article_token_ids").get<std::vector<std::vector<std::vector<int>>>>();

  lc.state = ModelState::create(
      lc.meta.config.model_dims(emb_dim), lc.meta.config.model_options(), std::move(partition),
      model.at("num_law").get<int>(), model.at("num_charge").get<int>(),
      model.at("num_penalty").get<int>(), Mat::zeros(vocab_size, emb_dim),
      std::move(article_ids), static_cast<uint64_t>(lc.meta.config.seed));

  auto archive = detail::read_tensor_archive(dir + "/tensors.bin");
  auto fill = [&](const std::string& name, Mat& dst) {
    auto it = archive.find(name);
    require(it != archive.end(), "checkpoint: tensor \"" + name + "\" missing");
    require(it->second.same_shape(dst), "checkpoint: tensor \"" + name + "\" shape mismatch");
    dst = it->second;
  };
  for (Param* p : lc.state.parameters()) fill(p->name, p->value);
  if (lc.state.opts.use_revised) {
    fill("memory.law", lc.state.law_mem.M);
    fill("memory.charge", lc.state.charge_mem.M);
    bool inited = model.at("memories_initialized").get<bool>();
    lc.state.law_mem.initialized = inited;
    lc.state.charge_mem.initialized = inited;
  }
  return lc;
}

}  // namespace dladan
