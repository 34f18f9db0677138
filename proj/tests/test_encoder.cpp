#include <doctest.h>

#include "dladan/encoder.hpp"
#include "testutil.hpp"

using namespace dladan;
using testutil::check_gradients;
using testutil::random_mat;

namespace {

std::vector<Var> const_states(Tape& t, const std::vector<Mat>& ms) {
  std::vector<Var> out;
  for (const auto& m : ms) out.push_back(t.constant(m));
  return out;
}

}  // namespace

TEST_CASE("attention_pool over identical states returns that state with uniform weights") {
  Tape t;
  Mat h = random_mat(4, 1, 3);
  auto states = const_states(t, {h, h, h});
  Var W = t.constant(random_mat(4, 4, 4));
  Var q = t.constant(random_mat(4, 1, 5));
  Mat out = t.val(attention_pool(t, states, W, q));
  for (int i = 0; i < 4; ++i) CHECK(out(i, 0) == doctest::Approx(h(i, 0)));
}

TEST_CASE("attention_pool with a single state returns it with weight one") {
  Tape t;
  Mat h = random_mat(3, 1, 6);
  Var W = t.constant(random_mat(3, 3, 7));
  Var q = t.constant(random_mat(3, 1, 8));
  Mat out = t.val(attention_pool(t, {t.constant(h)}, W, q));
  for (int i = 0; i < 3; ++i) CHECK(out(i, 0) == doctest::Approx(h(i, 0)));
}

TEST_CASE("attention_pool rejects an empty sequence") {
  Tape t;
  Var W = t.constant(random_mat(3, 3, 9));
  Var q = t.constant(random_mat(3, 1, 10));
  CHECK_THROWS(attention_pool(t, {}, W, q));
}

TEST_CASE("attention_pool output lies in the convex hull of the states") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tape t;
    int n = 2 + static_cast<int>(rng() % 5), d = 3;
    std::vector<Mat> hs;
    for (int i = 0; i < n; ++i) hs.push_back(Mat::uniform(d, 1, -2, 2, rng));
    Var W = t.constant(Mat::uniform(d, d, -1, 1, rng));
    Var q = t.constant(Mat::uniform(d, 1, -1, 1, rng));
    Mat out = t.val(attention_pool(t, const_states(t, hs), W, q));
    for (int c = 0; c < d; ++c) {
      double lo = hs[0](c, 0), hi = hs[0](c, 0);
      for (const auto& h : hs) {
        lo = std::min(lo, h(c, 0));
        hi = std::max(hi, h(c, 0));
      }
      CHECK(out(c, 0) >= lo - 1e-12);
      CHECK(out(c, 0) <= hi + 1e-12);
    }
  }
}

TEST_CASE("attention_pool gradients match finite differences") {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    Param W("W", random_mat(4, 4, seed * 100 + 1));
    Param q("q", random_mat(4, 1, seed * 100 + 2));
    Param h0("h0", random_mat(4, 1, seed * 100 + 3));
    Param h1("h1", random_mat(4, 1, seed * 100 + 4));
    Param h2("h2", random_mat(4, 1, seed * 100 + 5));
    auto build = [&](Tape& t) {
      std::vector<Var> states = {t.param(h0), t.param(h1), t.param(h2)};
      Var out = attention_pool(t, states, t.param(W), t.param(q));
      return t.ce_logits(out, 1);
    };
    auto r = check_gradients({&W, &q, &h0, &h1, &h2}, build);
    CHECK_MESSAGE(r.max_rel_err < 1e-4, r.worst);
  }
}

TEST_CASE("masked attention equals attention over the unpadded prefix") {
  Tape t;
  std::mt19937_64 rng(21);
  int d = 4;
  std::vector<Mat> hs;
  for (int i = 0; i < 3; ++i) hs.push_back(Mat::uniform(d, 1, -1, 1, rng));
  Mat pad = Mat::zeros(d, 1);
  Var W = t.constant(Mat::uniform(d, d, -1, 1, rng));
  Var q = t.constant(Mat::uniform(d, 1, -1, 1, rng));
  Mat full = t.val(attention_pool(t, const_states(t, hs), W, q));
  Mat padded = t.val(attention_pool(t, const_states(t, {hs[0], hs[1], hs[2], pad, pad}), W, q,
                                    {1, 1, 1, 0, 0}));
  for (int i = 0; i < d; ++i) CHECK(full(i, 0) == doctest::Approx(padded(i, 0)));
}

namespace {

struct TinyEncoder {
  EncoderParams params;
  Param emb;
  std::vector<std::vector<int>> fact;

  static TinyEncoder make(uint64_t seed, bool learned_query, int query_dim = 0) {
    std::mt19937_64 rng(seed);
    TinyEncoder e{learned_query
                      ? EncoderParams::basic("enc", 3, 4, 4, rng)
                      : EncoderParams::with_query("enc", 3, 4, 4, query_dim, rng),
                  Param("emb", Mat::uniform(6, 3, -0.5, 0.5, rng)),
                  {{0, 1, 2}, {3, 4, 5}}};
    return e;
  }

  std::vector<Param*> parameters() {
    std::vector<Param*> ps;
    params.collect(ps);
    ps.push_back(&emb);
    return ps;
  }
};

}  // namespace

TEST_CASE("hierarchical_encode is deterministic and d_s-dimensional") {
  auto e = TinyEncoder::make(31, true);
  Tape t1, t2;
  Mat a = t1.val(hierarchical_encode_ids(t1, {{2}}, t1.param(e.emb),
                                         EncoderBind::bind(t1, e.params)));
  Mat b = t2.val(hierarchical_encode_ids(t2, {{2}}, t2.param(e.emb),
                                         EncoderBind::bind(t2, e.params)));
  CHECK(a.rows == 4);
  CHECK(a.cols == 1);
  CHECK(a.a == b.a);
}

TEST_CASE("hierarchical_encode output dim is d_s for any shape of fact") {
  auto e = TinyEncoder::make(37, true);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::vector<int>> fact(1 + rng() % 4);
    for (auto& s : fact) {
      s.resize(1 + rng() % 5);
      for (auto& id : s) id = static_cast<int>(rng() % 6);
    }
    Tape t;
    Mat v = t.val(hierarchical_encode_ids(t, fact, t.param(e.emb),
                                          EncoderBind::bind(t, e.params)));
    CHECK(v.rows == 4);
    CHECK(v.cols == 1);
  }
}

TEST_CASE("permuting sentences changes the encoding in general") {
  auto e = TinyEncoder::make(41, true);
  Tape t;
  Var emb = t.param(e.emb);
  auto enc = EncoderBind::bind(t, e.params);
  Mat fwd = t.val(hierarchical_encode_ids(t, {{0, 1}, {3, 4}}, emb, enc));
  Mat rev = t.val(hierarchical_encode_ids(t, {{3, 4}, {0, 1}}, emb, enc));
  double diff = 0;
  for (size_t i = 0; i < fwd.size(); ++i) diff += std::abs(fwd.a[i] - rev.a[i]);
  CHECK(diff > 1e-8);
}

TEST_CASE("hierarchical_encode rejects an empty fact") {
  auto e = TinyEncoder::make(43, true);
  Tape t;
  CHECK_THROWS(hierarchical_encode_ids(t, {}, t.param(e.emb), EncoderBind::bind(t, e.params)));
}

TEST_CASE("hierarchical_encode full gradient check, learned query") {
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    auto e = TinyEncoder::make(seed * 1000 + 47, true);
    auto build = [&](Tape& t) {
      Var v = hierarchical_encode_ids(t, e.fact, t.param(e.emb), EncoderBind::bind(t, e.params));
      return t.ce_logits(v, 0);
    };
    auto r = check_gradients(e.parameters(), build);
    CHECK_MESSAGE(r.max_rel_err < 1e-4, r.worst);
  }
}

TEST_CASE("hierarchical_encode full gradient check, projected external query") {
  for (uint64_t seed = 1; seed <= 3; ++seed) {
    auto e = TinyEncoder::make(seed * 1000 + 53, false, /*query_dim=*/5);
    Param query("query", random_mat(5, 1, seed * 1000 + 54));
    auto build = [&](Tape& t) {
      Var v = hierarchical_encode_ids(t, e.fact, t.param(e.emb), EncoderBind::bind(t, e.params),
                                      t.param(query));
      return t.ce_logits(v, 2);
    };
    auto ps = e.parameters();
    ps.push_back(&query);
    auto r = check_gradients(ps, build);
    CHECK_MESSAGE(r.max_rel_err < 1e-4, r.worst);
  }
}

TEST_CASE("independent encoder instances share no parameters") {
  std::mt19937_64 rng(61);
  EncoderParams basic = EncoderParams::basic("basic", 3, 4, 4, rng);
  EncoderParams prior = EncoderParams::with_query("prior", 3, 4, 4, 6, rng);
  EncoderParams revised = EncoderParams::with_query("revised", 3, 4, 4, 3, rng);
  std::vector<Param*> pb, pp, pr;
  basic.collect(pb);
  prior.collect(pp);
  revised.collect(pr);
  std::unordered_set<const Param*> seen;
  for (auto* lst : {&pb, &pp, &pr})
    for (Param* p : *lst) CHECK(seen.insert(p).second);
  std::unordered_set<std::string> names;
  for (auto* lst : {&pb, &pp, &pr})
    for (Param* p : *lst) CHECK(names.insert(p->name).second);
}
