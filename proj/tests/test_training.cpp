#include <doctest.h>

#include <filesystem>

#include "dladan/checkpoint.hpp"
#include "dladan/training.hpp"
#include "testutil.hpp"

using namespace dladan;
using testutil::random_mat;

namespace {

std::pair<Dataset, Vocab> overfit_corpus(uint64_t seed, int cases_per_article = 16) {
  SynthConfig cfg;
  cfg.num_communities = 2;
  cfg.articles_per_community = 2;
  cfg.shared_tokens_per_community = 4;
  cfg.distinguishing_tokens_per_article = 2;
  cfg.distinguishing_token_rate = 1.0;
  cfg.head_tail_imbalance_ratio = 1.0;
  cfg.cases_per_head_article = cases_per_article;
  cfg.noise_vocab_size = 8;
  cfg.rng_seed = seed;
  auto [ds, articles] = generate_synthetic(cfg);
  Vocab vocab = build_vocab(ds, 1, 8, seed + 1);
  return {std::move(ds), std::move(vocab)};
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.d_w = 8;
  cfg.d_s = 8;
  cfg.d_l = 8;
  cfg.d_f = 8;
  cfg.batch_size = 16;
  cfg.epochs = 2;
  cfg.lr = 0.01;
  cfg.seed = 5;
  return cfg;
}

Prediction fake_prediction(int n_law, int n_charge, int k, int y_l, int y_c, int y_t) {
  Prediction p;
  p.y[0] = Mat::full(n_law, 1, 0.0);
  p.y[0](y_l, 0) = 1.0;
  p.y[1] = Mat::full(n_charge, 1, 0.0);
  p.y[1](y_c, 0) = 1.0;
  p.y[2] = Mat::full(11, 1, 0.0);
  p.y[2](y_t, 0) = 1.0;
  p.x_hat = Mat::zeros(k, 1);
  return p;
}

}  // namespace

TEST_CASE("perfect one-hot predictions give zero loss") {
  CommunityPartition part;
  part.communities = {{0, 1}};
  part.membership = {0, 0};
  part.neighbors = {{1}, {0}};
  Prediction p = fake_prediction(2, 2, 1, 1, 0, 3);
  p.x_hat(0, 0) = 1.0;
  p.s_hat_law = Mat::zeros(2, 1);
  (*p.s_hat_law)(1, 0) = 1.0;
  TrainConfig cfg;
  auto l = compute_loss(p, 1, 0, 3, part, cfg, Phase::kMain);
  CHECK(l.total == doctest::Approx(0.0));
  CHECK(l.lp == doctest::Approx(0.0));
}

TEST_CASE("zero loss weights reduce the total to the prediction loss") {
  CommunityPartition part;
  part.communities = {{0}, {1}};
  part.membership = {0, 1};
  part.neighbors = {{}, {}};
  Prediction p = fake_prediction(2, 2, 2, 0, 0, 0);
  p.y[0].fill(0.5);
  p.y[1].fill(0.5);
  p.y[2].fill(1.0 / 11);
  p.x_hat.fill(0.5);
  p.s_hat_law = Mat::full(2, 1, 0.5);
  TrainConfig cfg;
  cfg.lambda_c = 0.0;
  cfg.lambda_m = 0.0;
  auto l = compute_loss(p, 0, 0, 0, part, cfg, Phase::kMain);
  CHECK(l.total == doctest::Approx(l.lp));
}

TEST_CASE("hand-built half-half predictions give 3 ln 2 prediction loss") {
  CommunityPartition part;
  part.communities = {{0, 1}};
  part.membership = {0, 0};
  part.neighbors = {{1}, {0}};
  Prediction p = fake_prediction(2, 2, 1, 0, 0, 0);
  p.y[0].fill(0.5);
  p.y[1].fill(0.5);
  p.y[2].fill(0.5);  // treat penalty as 2-class for the hand computation
  p.y[2] = Mat::full(2, 1, 0.5);
  p.x_hat = Mat::full(1, 1, 1.0);
  TrainConfig cfg;
  auto l = compute_loss(p, 0, 0, 0, part, cfg, Phase::kWarmup);
  CHECK(l.lp == doctest::Approx(3.0 * std::log(2.0)));
  CHECK(l.lc == doctest::Approx(0.0));
  CHECK(l.total == doctest::Approx(3.0 * std::log(2.0)));
}

TEST_CASE("warm-up loss excludes the matching term") {
  CommunityPartition part;
  part.communities = {{0}, {1}};
  part.membership = {0, 1};
  part.neighbors = {{}, {}};
  Prediction p = fake_prediction(2, 2, 2, 0, 0, 0);
  p.y[0].fill(0.5);
  p.y[1].fill(0.5);
  p.y[2].fill(0.5);
  p.x_hat = Mat::full(2, 1, 0.5);
  p.s_hat_law = Mat::full(2, 1, 0.5);  // present but must be ignored
  TrainConfig cfg;
  auto warm = compute_loss(p, 0, 0, 0, part, cfg, Phase::kWarmup);
  auto main = compute_loss(p, 0, 0, 0, part, cfg, Phase::kMain);
  CHECK(warm.lm == 0.0);
  CHECK(main.lm > 0.0);
  CHECK(main.total == doctest::Approx(warm.total + cfg.lambda_m * main.lm));
}

TEST_CASE("batch loss is the mean of the per-case losses") {
  CommunityPartition part;
  part.communities = {{0, 1}};
  part.membership = {0, 0};
  part.neighbors = {{1}, {0}};
  TrainConfig cfg;
  Prediction perfect = fake_prediction(2, 2, 1, 0, 0, 0);
  perfect.x_hat(0, 0) = 1.0;
  Prediction half = fake_prediction(2, 2, 1, 0, 0, 0);
  half.y[0].fill(0.5);
  half.y[1].fill(0.5);
  half.y[2].fill(1.0 / 11);
  half.x_hat(0, 0) = 1.0;
  auto l1 = compute_loss(perfect, 0, 0, 0, part, cfg, Phase::kWarmup);
  auto l2 = compute_loss(half, 0, 0, 0, part, cfg, Phase::kWarmup);
  auto batch = compute_loss({perfect, half}, {{0, 0, 0}, {0, 0, 0}}, part, cfg, Phase::kWarmup);
  CHECK(batch.total == doctest::Approx((l1.total + l2.total) / 2.0));
  CHECK(batch.lp == doctest::Approx((l1.lp + l2.lp) / 2.0));
}

TEST_CASE("loss is non-negative and zero only when every term vanishes") {
  std::mt19937_64 rng(31);
  CommunityPartition part;
  part.communities = {{0, 1}};
  part.membership = {0, 0};
  part.neighbors = {{1}, {0}};
  TrainConfig cfg;
  for (int trial = 0; trial < 50; ++trial) {
    Prediction p = fake_prediction(2, 2, 1, 0, 0, 0);
    auto randomize = [&](Mat& m) {
      double sum = 0;
      for (auto& v : m.a) {
        v = 0.05 + 0.95 * std::uniform_real_distribution<double>(0, 1)(rng);
        sum += v;
      }
      for (auto& v : m.a) v /= sum;
    };
    randomize(p.y[0]);
    randomize(p.y[1]);
    randomize(p.y[2]);
    p.x_hat = Mat::full(1, 1, 1.0);
    auto l = compute_loss(p, 0, 0, 0, part, cfg, Phase::kWarmup);
    CHECK(l.total >= 0.0);
  }
}

TEST_CASE("momentum update boundary coefficients") {
  RevisedMemory mem;
  mem.M = random_mat(3, 4, 41);
  mem.initialized = true;
  Mat W = random_mat(4, 3, 42);  // classifier d x C

  Mat before = mem.M;
  momentum_update(mem, W, 1.0);
  CHECK(mem.M.a == before.a);  // lambda 1 keeps M

  momentum_update(mem, W, 0.0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) CHECK(mem.M(i, j) == W(j, i));  // lambda 0 copies W^T
}

TEST_CASE("momentum update arithmetic at lambda 0.9") {
  RevisedMemory mem;
  mem.M = Mat::full(2, 3, 1.0);
  mem.initialized = true;
  Mat W = Mat::zeros(3, 2);
  momentum_update(mem, W, 0.9);
  for (double v : mem.M.a) CHECK(v == doctest::Approx(0.9));
}

TEST_CASE("momentum update rejects shape mismatches") {
  RevisedMemory mem;
  mem.M = Mat::zeros(3, 4);
  mem.initialized = true;
  CHECK_THROWS(momentum_update(mem, Mat::zeros(4, 2), 0.9));
}

TEST_CASE("warmup_init copies the classifier exactly and is a momentum fixed point") {
  RevisedMemory mem;
  mem.M = Mat::zeros(3, 4);
  Mat W = random_mat(4, 3, 43);
  warmup_init(mem, W, 10, 10);
  CHECK(mem.initialized);
  double max_diff = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) max_diff = std::max(max_diff, std::abs(mem.M(i, j) - W(j, i)));
  CHECK(max_diff == 0.0);

  momentum_update(mem, W, 0.9);  // lambda M + (1-lambda) M = M
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) CHECK(mem.M(i, j) == doctest::Approx(W(j, i)));
}

TEST_CASE("warmup_init before the configured steps is an error") {
  RevisedMemory mem;
  mem.M = Mat::zeros(2, 2);
  CHECK_THROWS_WITH_AS(warmup_init(mem, Mat::zeros(2, 2), 5, 10),
                       doctest::Contains("before warm-up completed"), std::runtime_error);
}

TEST_CASE("frozen classifier contracts the memory geometrically") {
  RevisedMemory mem;
  mem.M = Mat::zeros(2, 3);
  Mat W = random_mat(3, 2, 44);
  warmup_init(mem, W, 1, 1);
  // move the memory away, then track |M - W^T| under a frozen W
  Mat offset = random_mat(2, 3, 45);
  for (size_t i = 0; i < mem.M.size(); ++i) mem.M.a[i] += offset.a[i];
  double d0 = 0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) d0 = std::max(d0, std::abs(mem.M(i, j) - W(j, i)));
  for (int t = 1; t <= 20; ++t) {
    momentum_update(mem, W, 0.9);
    double dt = 0;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 3; ++j) dt = std::max(dt, std::abs(mem.M(i, j) - W(j, i)));
    CHECK(std::abs(dt - std::pow(0.9, t) * d0) < 1e-10);
  }
}

TEST_CASE("config defaults snapshot and round trip") {
  TrainConfig cfg;
  std::string text = cfg.to_text();
  TrainConfig back = TrainConfig::from_text(text);
  CHECK(back.to_text() == text);
  CHECK_THROWS_WITH_AS(cfg.set("not_a_key", "1"), doctest::Contains("unknown key"),
                       std::runtime_error);
}

TEST_CASE("train reaches full training accuracy on a small synthetic corpus") {
  auto [ds, vocab] = overfit_corpus(50);
  TrainConfig cfg = tiny_config();
  cfg.epochs = 60;
  cfg.lr = 0.02;
  TrainHooks hooks;
  hooks.stop_at_train_accuracy = 1.0;
  TrainResult res = train(ds, ds, vocab, cfg, hooks);
  auto metrics = detail::evaluate_split(res.state, vocab, ds);
  CHECK(metrics[0].accuracy == doctest::Approx(1.0));
  CHECK(metrics[1].accuracy == doctest::Approx(1.0));
  CHECK(metrics[2].accuracy == doctest::Approx(1.0));
}

TEST_CASE("epochs zero returns a warm-up-only model with initialized memories") {
  auto [ds, vocab] = overfit_corpus(51, 8);
  TrainConfig cfg = tiny_config();
  cfg.epochs = 0;
  TrainResult res = train(ds, ds, vocab, cfg);
  CHECK(res.state.law_mem.initialized);
  CHECK(res.state.charge_mem.initialized);
  CHECK(res.steps >= 1);
  // memory equals the classifier transpose exactly right after init
  const Mat& W = res.state.heads[0].Wp.value;
  for (int i = 0; i < res.state.law_mem.M.rows; ++i)
    for (int j = 0; j < res.state.law_mem.M.cols; ++j)
      CHECK(res.state.law_mem.M(i, j) == W(j, i));
}

TEST_CASE("training is deterministic given the seed") {
  auto [ds, vocab] = overfit_corpus(52, 8);
  TrainConfig cfg = tiny_config();
  cfg.epochs = 2;
  TrainResult a = train(ds, ds, vocab, cfg);
  TrainResult b = train(ds, ds, vocab, cfg);
  REQUIRE(a.log.size() == b.log.size());
  for (size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].loss_p == b.log[i].loss_p);
    CHECK(a.log[i].val_avg_f1 == b.log[i].val_avg_f1);
  }
  CHECK(a.best_metric == b.best_metric);
}

TEST_CASE("step ordering is gradient apply, then momentum update, then next forward") {
  auto [ds, vocab] = overfit_corpus(53, 8);
  TrainConfig cfg = tiny_config();
  cfg.epochs = 2;
  std::vector<std::pair<std::string, long>> events;
  TrainHooks hooks;
  hooks.observer = [&](const char* e, long s) { events.emplace_back(e, s); };
  train(ds, ds, vocab, cfg, hooks);
  long main_steps_seen = 0;
  for (size_t i = 0; i < events.size(); ++i) {
    if (events[i].first == "momentum_update") {
      ++main_steps_seen;
      REQUIRE(i >= 1);
      CHECK(events[i - 1].first == "optimizer_apply");
      CHECK(events[i - 1].second == events[i].second);
      if (i + 1 < events.size()) {
        CHECK(events[i + 1].first == "forward");
        CHECK(events[i + 1].second == events[i].second + 1);
      }
    }
  }
  CHECK(main_steps_seen > 0);
}

TEST_CASE("warm-up steps never emit momentum updates") {
  auto [ds, vocab] = overfit_corpus(54, 8);
  TrainConfig cfg = tiny_config();
  cfg.epochs = 1;
  cfg.warmup_epochs = 2.0;
  std::vector<std::pair<std::string, long>> events;
  TrainHooks hooks;
  hooks.observer = [&](const char* e, long s) { events.emplace_back(e, s); };
  TrainResult res = train(ds, ds, vocab, cfg, hooks);
  long steps_per_epoch = (static_cast<long>(ds.cases.size()) + cfg.batch_size - 1) / cfg.batch_size;
  long warmup_steps = 2 * steps_per_epoch;
  for (const auto& [e, s] : events)
    if (e == "momentum_update") CHECK(s > warmup_steps);
}

TEST_CASE("diverging training aborts naming the step") {
  auto [ds, vocab] = overfit_corpus(55, 8);
  TrainConfig cfg = tiny_config();
  cfg.epochs = 3;
  cfg.lr = 1e5;  // explodes the classifier scale: exp(rho) overflows
  try {
    train(ds, ds, vocab, cfg);
    FAIL("expected divergence");
  } catch (const std::exception& e) {
    std::string msg = e.what();
    CHECK(msg.find("diverged") != std::string::npos);
    CHECK(msg.find("step") != std::string::npos);
  }
}

TEST_CASE("no-revised variant trains without any memory machinery") {
  auto [ds, vocab] = overfit_corpus(56, 8);
  TrainConfig cfg = tiny_config();
  cfg.epochs = 1;
  cfg.ablation = "no_RM";
  TrainResult res = train(ds, ds, vocab, cfg);
  CHECK_FALSE(res.state.opts.use_revised);
  CHECK_FALSE(res.state.law_mem.initialized);
}

TEST_CASE("checkpoint round trip reproduces forward outputs bit-identically") {
  auto [ds, vocab] = overfit_corpus(57, 8);
  TrainConfig cfg = tiny_config();
  cfg.epochs = 1;
  TrainResult res = train(ds, ds, vocab, cfg);

  std::string dir =
      (std::filesystem::temp_directory_path() / "dladan_ckpt_roundtrip").string();
  std::filesystem::remove_all(dir);
  CheckpointMeta meta;
  meta.config = cfg;
  meta.vocab_hash = vocab.hash();
  meta.partition_hash = res.state.partition.hash();
  meta.step = res.steps;
  meta.best_metric = res.best_metric;
  save_checkpoint(dir, res.state, meta);

  LoadedCheckpoint lc = load_checkpoint(dir);
  CHECK(lc.meta.vocab_hash == meta.vocab_hash);
  CHECK(lc.meta.partition_hash == lc.state.partition.hash());
  auto [p1, r1] = forward(ds.cases[2], res.state, vocab, Phase::kInference);
  auto [p2, r2] = forward(ds.cases[2], lc.state, vocab, Phase::kInference);
  for (int k = 0; k < 3; ++k) CHECK(p1.y[static_cast<size_t>(k)].a == p2.y[static_cast<size_t>(k)].a);
  CHECK(r1.concat.a == r2.concat.a);
}

TEST_CASE("the no-revised checkpoint stores no memory tensors") {
  auto [ds, vocab] = overfit_corpus(58, 8);
  TrainConfig cfg = tiny_config();
  cfg.epochs = 1;
  cfg.ablation = "no_RM";
  TrainResult res = train(ds, ds, vocab, cfg);
  std::string dir = (std::filesystem::temp_directory_path() / "dladan_ckpt_norm").string();
  std::filesystem::remove_all(dir);
  CheckpointMeta meta;
  meta.config = cfg;
  save_checkpoint(dir, res.state, meta);
  auto archive = detail::read_tensor_archive(dir + "/tensors.bin");
  CHECK(archive.count("memory.law") == 0);
  CHECK(archive.count("memory.charge") == 0);
  // manifest records the variant
  nlohmann::json j = nlohmann::json::parse(std::ifstream(dir + "/manifest.json"));
  CHECK(j.at("config").at("ablation") == "no_RM");
}

TEST_CASE("adam updates decrease a simple quadratic") {
  Param p("p", Mat::full(1, 1, 5.0));
  Adam opt;
  opt.lr = 0.1;
  for (int i = 0; i < 200; ++i) {
    p.zero_grad();
    p.grad(0, 0) = 2.0 * p.value(0, 0);  // d/dx x^2
    opt.step({&p});
  }
  CHECK(std::abs(p.value(0, 0)) < 0.5);
}

TEST_CASE("global norm clipping rescales only above the threshold") {
  Param a("a", Mat::full(1, 1, 0.0));
  a.grad(0, 0) = 3.0;
  Param b("b", Mat::full(1, 1, 0.0));
  b.grad(0, 0) = 4.0;
  double norm = clip_global_norm({&a, &b}, 5.0);
  CHECK(norm == doctest::Approx(5.0));
  CHECK(a.grad(0, 0) == doctest::Approx(3.0));  // exactly at the limit: untouched
  a.grad(0, 0) = 30.0;
  b.grad(0, 0) = 40.0;
  clip_global_norm({&a, &b}, 5.0);
  CHECK(a.grad(0, 0) == doctest::Approx(3.0));
  CHECK(b.grad(0, 0) == doctest::Approx(4.0));
}
