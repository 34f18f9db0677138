#include <doctest.h>

#include "dladan/memory_distill.hpp"
#include "testutil.hpp"

using namespace dladan;
using testutil::check_gradients;
using testutil::random_mat;

namespace {

RevisedMemory memory_of(Mat m, MemoryTask task = MemoryTask::kLaw) {
  RevisedMemory mem;
  mem.M = std::move(m);
  mem.initialized = true;
  mem.bound = task;
  return mem;
}

}  // namespace

TEST_CASE("memory_similarity of identical rows is the all-ones matrix") {
  Mat m(3, 4);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) m(i, j) = 0.5 * (j + 1);
  Mat a = memory_similarity(memory_of(m));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(a(i, j) == doctest::Approx(1.0));
}

TEST_CASE("memory_similarity of orthogonal rows has zero off-diagonal") {
  Mat m = Mat::from_rows({{1, 0}, {0, 2}});
  Mat a = memory_similarity(memory_of(m));
  CHECK(a(0, 0) == 1.0);
  CHECK(a(1, 1) == 1.0);
  CHECK(a(0, 1) == doctest::Approx(0.0));
}

TEST_CASE("memory_similarity matches a brute-force oracle on random rows") {
  Mat m = random_mat(3, 5, 7);
  Mat a = memory_similarity(memory_of(m));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double d = 0, ni = 0, nj = 0;
      for (int k = 0; k < 5; ++k) {
        d += m(i, k) * m(j, k);
        ni += m(i, k) * m(i, k);
        nj += m(j, k) * m(j, k);
      }
      CHECK(a(i, j) == doctest::Approx(d / std::sqrt(ni * nj)));
      CHECK(a(i, j) == doctest::Approx(a(j, i)));
    }
}

TEST_CASE("memory_similarity errors on a zero row naming the label") {
  Mat m = Mat::from_rows({{1, 2}, {0, 0}});
  CHECK_THROWS_WITH_AS(memory_similarity(memory_of(m)), doctest::Contains("label 1"),
                       std::runtime_error);
}

TEST_CASE("similarity softmax weights exclude self and sum to one") {
  Mat m = random_mat(4, 3, 9);
  Mat alpha = similarity_softmax_weights(memory_similarity(memory_of(m)));
  for (int i = 0; i < 4; ++i) {
    CHECK(alpha(i, i) == 0.0);
    double sum = 0;
    for (int j = 0; j < 4; ++j) sum += alpha(i, j);
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("two memories weight each other with exactly one") {
  Mat m = random_mat(2, 3, 11);
  Mat alpha = similarity_softmax_weights(memory_similarity(memory_of(m)));
  CHECK(alpha(0, 1) == doctest::Approx(1.0));
  CHECK(alpha(1, 0) == doctest::Approx(1.0));
}

TEST_CASE("cosine similarity is invariant to positive row rescaling") {
  Mat m = random_mat(4, 3, 13);
  Mat scaled = m;
  for (auto& x : scaled.a) x *= 3.7;
  Mat a = memory_similarity(memory_of(m));
  Mat b = memory_similarity(memory_of(scaled));
  for (size_t i = 0; i < a.size(); ++i) CHECK(a.a[i] == doctest::Approx(b.a[i]).epsilon(1e-12));
}

TEST_CASE("weighted gdo with identity phi and zero psi/bias is the identity") {
  std::mt19937_64 rng(15);
  Mat phi = Mat::zeros(3, 3);
  for (int i = 0; i < 3; ++i) phi(i, i) = 1.0;
  GdoLayerParams p;
  p.phi = Param("phi", phi);
  p.psi = Param("psi", Mat::zeros(3, 6));
  p.bias = Param("b", Mat::zeros(3, 1));
  p.d_in = 3;
  p.d_out = 3;
  Mat m = random_mat(4, 3, 16);
  Mat alpha = similarity_softmax_weights(memory_similarity(memory_of(m)));
  Tape t;
  Mat out = t.val(weighted_gdo_layer(t, t.constant(m), alpha, GdoLayerBind::bind(t, p)));
  for (size_t i = 0; i < m.size(); ++i) CHECK(out.a[i] == doctest::Approx(m.a[i]));
}

TEST_CASE("weighted gdo output and parameter gradients match a dense oracle") {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    Mat m = random_mat(3, 2, seed * 40 + 1);
    Mat alpha = similarity_softmax_weights(memory_similarity(memory_of(m)));
    GdoLayerParams p;
    p.phi = Param("phi", random_mat(2, 2, seed * 40 + 2));
    p.psi = Param("psi", random_mat(2, 4, seed * 40 + 3));
    p.bias = Param("b", random_mat(2, 1, seed * 40 + 4));
    p.d_in = 2;
    p.d_out = 2;

    Tape t;
    Mat got = t.val(weighted_gdo_layer(t, t.constant(m), alpha, GdoLayerBind::bind(t, p)));
    // dense per-node oracle
    for (int i = 0; i < 3; ++i) {
      for (int r = 0; r < 2; ++r) {
        double v = p.bias.value(r, 0);
        for (int c = 0; c < 2; ++c) v += p.phi.value(r, c) * m(i, c);
        for (int j = 0; j < 3; ++j) {
          if (j == i) continue;
          double s = 0;
          for (int c = 0; c < 2; ++c) s += p.psi.value(r, c) * m(i, c);
          for (int c = 0; c < 2; ++c) s += p.psi.value(r, 2 + c) * m(j, c);
          v -= alpha(i, j) * s;
        }
        CHECK(got(i, r) == doctest::Approx(v).epsilon(1e-12));
      }
    }

    auto build = [&](Tape& tt) {
      Var out = weighted_gdo_layer(tt, tt.constant(m), alpha, GdoLayerBind::bind(tt, p));
      return tt.sum_all(tt.hadamard(out, out));
    };
    auto r = check_gradients({&p.phi, &p.psi, &p.bias}, build);
    CHECK_MESSAGE(r.max_rel_err < 1e-4, r.worst);
  }
}

TEST_CASE("single-label memory degenerates to an affine rule") {
  std::mt19937_64 rng(17);
  GdoLayerParams p;
  p.phi = Param("phi", random_mat(2, 2, 18));
  p.psi = Param("psi", random_mat(2, 4, 19));
  p.bias = Param("b", random_mat(2, 1, 20));
  p.d_in = 2;
  p.d_out = 2;
  Mat m = random_mat(1, 2, 21);
  Tape t;
  Mat out = t.val(weighted_gdo_layer(t, t.constant(m), Mat(), GdoLayerBind::bind(t, p)));
  for (int r = 0; r < 2; ++r) {
    double v = p.bias.value(r, 0);
    for (int c = 0; c < 2; ++c) v += p.phi.value(r, c) * m(0, c);
    CHECK(out(0, r) == doctest::Approx(v));
  }
}

TEST_CASE("distill_memory with an empty stack returns the memories and keys") {
  std::mt19937_64 rng(23);
  GdoStack stack;
  stack.init("mem", 3, 3, 0, rng);
  auto mem = memory_of(random_mat(4, 3, 24));
  Tape t;
  auto out = distill_memory(t, mem, stack);
  CHECK(t.val(out.gamma).a == mem.M.a);
  CHECK(out.keys.a == mem.M.a);
}

TEST_CASE("identical memories distill to zero under the block-sum identity") {
  std::mt19937_64 rng(25);
  Mat psi = Mat::uniform(3, 6, -1, 1, rng);
  Mat phi(3, 3);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) phi(r, c) = psi(r, c) + psi(r, 3 + c);
  GdoLayerParams p;
  p.phi = Param("phi", phi);
  p.psi = Param("psi", psi);
  p.bias = Param("b", Mat::zeros(3, 1));
  p.d_in = 3;
  p.d_out = 3;
  Mat row = random_mat(1, 3, 26);
  Mat m(2, 3);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) m(i, j) = row(0, j);
  Mat alpha = similarity_softmax_weights(memory_similarity(memory_of(m)));
  Tape t;
  Mat out = t.val(weighted_gdo_layer(t, t.constant(m), alpha, GdoLayerBind::bind(t, p)));
  for (double v : out.a) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("four random memories, H = 2, match a chained dense oracle") {
  std::mt19937_64 rng(27);
  GdoStack stack;
  stack.init("mem", 3, 3, 2, rng);
  auto mem = memory_of(random_mat(4, 3, 28));
  Mat alpha = similarity_softmax_weights(memory_similarity(mem));
  Tape t;
  Mat got = t.val(distill_memory(t, mem, stack).gamma);

  Mat x = mem.M;
  for (const auto& lay : stack.layers) {
    Mat nx(4, 3);
    for (int i = 0; i < 4; ++i)
      for (int r = 0; r < 3; ++r) {
        double v = lay.bias.value(r, 0);
        for (int c = 0; c < 3; ++c) v += lay.phi.value(r, c) * x(i, c);
        for (int j = 0; j < 4; ++j) {
          if (j == i) continue;
          double s = 0;
          for (int c = 0; c < 3; ++c) s += lay.psi.value(r, c) * x(i, c);
          for (int c = 0; c < 3; ++c) s += lay.psi.value(r, 3 + c) * x(j, c);
          v -= alpha(i, j) * s;  // graph fixed from the raw layer-0 memories
        }
        nx(i, r) = v;
      }
    x = nx;
  }
  for (size_t i = 0; i < x.size(); ++i) CHECK(got.a[i] == doctest::Approx(x.a[i]).epsilon(1e-12));
}

TEST_CASE("match_memory with one label gives probability one and gamma_1") {
  std::mt19937_64 rng(29);
  auto mem = memory_of(random_mat(1, 3, 30));
  Tape t;
  Var gamma = t.constant(random_mat(1, 4, 31));
  auto out = match_memory(t, t.constant(random_mat(3, 1, 32)), t.constant(random_mat(3, 1, 33)),
                          mem, gamma, t.constant(random_mat(3, 6, 34)));
  CHECK(t.val(out.s_hat)(0, 0) == doctest::Approx(1.0));
  for (int i = 0; i < 4; ++i)
    CHECK(t.val(out.gamma_hat)(i, 0) == doctest::Approx(t.val(gamma)(0, i)));
}

TEST_CASE("query orthogonal to every key gives uniform matching and the mean gamma") {
  // keys e1, e2; projected query e3 is orthogonal to both
  Mat keys = Mat::from_rows({{1, 0, 0}, {0, 1, 0}});
  auto mem = memory_of(keys);
  Tape t;
  Mat Wk = Mat::zeros(3, 2);  // query = Wk (v_b + v_p) picks e3
  Wk(2, 0) = 1.0;
  Mat gamma = Mat::from_rows({{2, 4}, {6, 8}});
  auto out = match_memory(t, t.constant(Mat::from_rows({{1.0}})),
                          t.constant(Mat::from_rows({{1.0}})), mem, t.constant(gamma),
                          t.constant(Wk));
  CHECK(t.val(out.s_hat)(0, 0) == doctest::Approx(0.5));
  CHECK(t.val(out.s_hat)(1, 0) == doctest::Approx(0.5));
  CHECK(t.val(out.gamma_hat)(0, 0) == doctest::Approx(4.0));
  CHECK(t.val(out.gamma_hat)(1, 0) == doctest::Approx(6.0));
}

TEST_CASE("match_memory rejects a zero projected query") {
  auto mem = memory_of(random_mat(2, 3, 37));
  Tape t;
  CHECK_THROWS_WITH_AS(
      match_memory(t, t.constant(random_mat(2, 1, 38)), t.constant(random_mat(2, 1, 39)), mem,
                   t.constant(random_mat(2, 2, 40)), t.constant(Mat::zeros(3, 4))),
      doctest::Contains("zero"), std::runtime_error);
}

TEST_CASE("match_memory gradients wrt Wk and encoder inputs match finite differences") {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    auto mem = memory_of(random_mat(3, 4, seed * 50 + 1));
    Param Wk("Wk", random_mat(4, 6, seed * 50 + 2));
    Param vb("vb", random_mat(3, 1, seed * 50 + 3));
    Param vp("vp", random_mat(3, 1, seed * 50 + 4));
    Mat gamma = random_mat(3, 2, seed * 50 + 5);
    auto build = [&](Tape& t) {
      auto out = match_memory(t, t.param(vb), t.param(vp), mem, t.constant(gamma), t.param(Wk));
      Var gscore = t.sum_all(t.hadamard(out.gamma_hat, out.gamma_hat));
      return t.add(gscore, t.ce_logits(out.s_scores, 1));
    };
    auto r = check_gradients({&Wk, &vb, &vp}, build);
    CHECK_MESSAGE(r.max_rel_err < 1e-4, r.worst);
  }
}

TEST_CASE("gamma_hat stays in the convex hull of the gammas") {
  std::mt19937_64 rng(61);
  auto mem = memory_of(Mat::uniform(4, 3, -1, 1, rng));
  Mat gamma = Mat::uniform(4, 5, -2, 2, rng);
  Tape t;
  auto out = match_memory(t, t.constant(Mat::uniform(3, 1, -1, 1, rng)),
                          t.constant(Mat::uniform(3, 1, -1, 1, rng)), mem, t.constant(gamma),
                          t.constant(Mat::uniform(3, 6, -1, 1, rng)));
  Mat gh = t.val(out.gamma_hat);
  for (int c = 0; c < 5; ++c) {
    double lo = gamma(0, c), hi = gamma(0, c);
    for (int i = 1; i < 4; ++i) {
      lo = std::min(lo, gamma(i, c));
      hi = std::max(hi, gamma(i, c));
    }
    CHECK(gh(c, 0) >= lo - 1e-12);
    CHECK(gh(c, 0) <= hi + 1e-12);
  }
}

TEST_CASE("memory rows are gradient constants while the distillation params are not") {
  std::mt19937_64 rng(63);
  GdoStack stack;
  stack.init("mem", 3, 3, 1, rng);
  auto mem = memory_of(random_mat(3, 3, 64));
  Param vb("vb", random_mat(2, 1, 65));
  Param vp("vp", random_mat(2, 1, 66));
  Param Wk("Wk", random_mat(3, 4, 67));
  // route the memory through the real path and register a shadow gradient
  // buffer for M to observe that nothing reaches it
  Param shadow("shadow_mem", mem.M);
  shadow.zero_grad();
  Tape t;
  auto dist = distill_memory(t, mem, stack);
  auto out = match_memory(t, t.param(vb), t.param(vp), mem, dist.gamma, t.param(Wk));
  Var loss = t.add(t.ce_logits(out.s_scores, 0), t.sum_all(t.hadamard(out.gamma_hat, out.gamma_hat)));
  for (auto* p : {&stack.layers[0].phi, &stack.layers[0].psi, &stack.layers[0].bias, &Wk, &vb, &vp})
    p->zero_grad();
  t.backward(loss);
  CHECK(shadow.grad.max_abs() == 0.0);  // untouched by construction
  CHECK(stack.layers[0].phi.grad.max_abs() > 0.0);
  CHECK(stack.layers[0].psi.grad.max_abs() > 0.0);
  CHECK(Wk.grad.max_abs() > 0.0);
  CHECK(vb.grad.max_abs() > 0.0);
}
