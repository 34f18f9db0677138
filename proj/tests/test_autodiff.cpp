#include <doctest.h>

#include "dladan/autodiff.hpp"
#include "testutil.hpp"

using namespace dladan;
using testutil::check_gradients;
using testutil::random_mat;

TEST_CASE("matmul forward matches hand computation") {
  Tape t;
  Var a = t.constant(Mat::from_rows({{1, 2}, {3, 4}}));
  Var b = t.constant(Mat::from_rows({{5, 6}, {7, 8}}));
  Mat c = t.val(t.matmul(a, b));
  CHECK(c(0, 0) == doctest::Approx(19));
  CHECK(c(0, 1) == doctest::Approx(22));
  CHECK(c(1, 0) == doctest::Approx(43));
  CHECK(c(1, 1) == doctest::Approx(50));
}

TEST_CASE("softmax is a probability vector and uniform on equal scores") {
  Tape t;
  Var z = t.constant(Mat::full(4, 1, 2.5));
  Mat s = t.val(t.softmax(z));
  double sum = 0;
  for (int i = 0; i < 4; ++i) {
    CHECK(s(i, 0) == doctest::Approx(0.25));
    sum += s(i, 0);
  }
  CHECK(sum == doctest::Approx(1.0));
}

TEST_CASE("masked softmax zeroes masked entries exactly") {
  Tape t;
  Var z = t.constant(Mat::from_rows({{1.0}, {2.0}, {3.0}}));
  Mat s = t.val(t.softmax(z, {1, 0, 1}));
  CHECK(s(1, 0) == 0.0);
  CHECK(s(0, 0) + s(2, 0) == doctest::Approx(1.0));
}

TEST_CASE("ce_logits equals -log softmax at the target") {
  Tape t;
  Mat zm = Mat::from_rows({{0.3}, {-1.2}, {2.0}});
  Var z = t.constant(zm);
  double lse = 0;
  for (int i = 0; i < 3; ++i) lse += std::exp(zm(i, 0));
  double expect = std::log(lse) - zm(2, 0);
  CHECK(t.val(t.ce_logits(z, 2))(0, 0) == doctest::Approx(expect));
}

TEST_CASE("cosine of identical and orthogonal vectors") {
  Tape t;
  Var a = t.constant(Mat::from_rows({{1}, {0}, {2}}));
  Var b = t.constant(Mat::from_rows({{0}, {3}, {0}}));
  CHECK(t.val(t.cosine(a, a))(0, 0) == doctest::Approx(1.0));
  CHECK(t.val(t.cosine(a, b))(0, 0) == doctest::Approx(0.0));
}

TEST_CASE("cosine rejects zero vectors") {
  Tape t;
  Var a = t.constant(Mat::zeros(3, 1));
  Var b = t.constant(Mat::full(3, 1, 1.0));
  CHECK_THROWS(t.cosine(a, b));
}

TEST_CASE("gradients of a composite expression match finite differences") {
  Param W("W", random_mat(3, 4, 11));
  Param b("b", random_mat(3, 1, 12));
  Param x("x", random_mat(4, 1, 13));
  auto build = [&](Tape& t) {
    Var y = t.tanh_(t.add(t.matmul(t.param(W), t.param(x)), t.param(b)));
    return t.ce_logits(t.scale(y, 2.0), 1);
  };
  auto r = check_gradients({&W, &b, &x}, build);
  CHECK_MESSAGE(r.max_rel_err < 1e-4, r.worst);
}

TEST_CASE("gradients flow through softmax, hadamard, sigmoid and dot") {
  Param a("a", random_mat(5, 1, 21));
  Param b("b", random_mat(5, 1, 22));
  auto build = [&](Tape& t) {
    Var s = t.softmax(t.param(a));
    Var y = t.hadamard(s, t.sigmoid(t.param(b)));
    return t.dot_(y, y);
  };
  auto r = check_gradients({&a, &b}, build);
  CHECK_MESSAGE(r.max_rel_err < 1e-4, r.worst);
}

TEST_CASE("gradients flow through cosine_cols, mul_scalar and exp_") {
  Param f("f", random_mat(4, 1, 31));
  Param W("W", random_mat(4, 3, 32));
  Param rho("rho", Mat::full(1, 1, 0.7));
  auto build = [&](Tape& t) {
    Var logits = t.mul_scalar(t.cosine_cols(t.param(f), t.param(W)), t.exp_(t.param(rho)));
    return t.ce_logits(logits, 0);
  };
  auto r = check_gradients({&f, &W, &rho}, build);
  CHECK_MESSAGE(r.max_rel_err < 1e-4, r.worst);
}

TEST_CASE("gradients flow through shape ops") {
  Param a("a", random_mat(2, 3, 41));
  Param b("b", random_mat(2, 3, 42));
  Param bias("bias", random_mat(3, 1, 43));
  auto build = [&](Tape& t) {
    Var va = t.param(a);
    Var vb = t.param(b);
    Var cat = t.concat_rows(va, vb);                    // 4 x 3
    Var sl = t.slice_cols(cat, 1, 3);                   // 4 x 2
    Var g = t.gather_rows(cat, {0, 3, 2});              // 3 x 3
    Var biased = t.add_bias_rows(g, t.param(bias));     // 3 x 3
    Var pooled = t.concat_cols(t.colwise_max(biased), t.colwise_min(sl));  // 1 x 5
    Var m = t.scale_rows_const(pooled, Mat::full(1, 1, 1.5));
    return t.sum_all(t.hadamard(m, m));
  };
  auto r = check_gradients({&a, &b, &bias}, build);
  CHECK_MESSAGE(r.max_rel_err < 1e-4, r.worst);
}

TEST_CASE("gradients flow through stacking ops and transpose") {
  Param a("a", random_mat(1, 4, 51));
  Param b("b", random_mat(1, 4, 52));
  auto build = [&](Tape& t) {
    Var ra = t.param(a);
    Var rb = t.param(b);
    Var m = t.stack_rows({ra, rb, ra});  // 3 x 4
    Var cols = t.stack_cols({t.transpose(ra), t.transpose(rb)});  // 4 x 2
    Var s1 = t.sum_all(t.matmul(m, cols));
    Var s2 = t.sum_all(t.stack_scalars({s1, t.dot_(ra, rb)}));
    return s2;
  };
  auto r = check_gradients({&a, &b}, build);
  CHECK_MESSAGE(r.max_rel_err < 1e-4, r.worst);
}

TEST_CASE("constants do not accumulate gradients and add_n fans out") {
  Param a("a", random_mat(3, 1, 61));
  auto build = [&](Tape& t) {
    Var va = t.param(a);
    Var c = t.constant(Mat::full(3, 1, 2.0));
    Var y = t.add_n({va, c, va});
    return t.sum_all(y);
  };
  auto r = check_gradients({&a}, build);
  CHECK_MESSAGE(r.max_rel_err < 1e-4, r.worst);
  // after check_gradients the stored gradient is d(sum(2a + c))/da = 2
  for (size_t i = 0; i < a.grad.size(); ++i) CHECK(a.grad.a[i] == doctest::Approx(2.0));
}

TEST_CASE("backward refuses a second run and non-scalar losses") {
  Tape t;
  Param a("a", random_mat(2, 2, 71));
  Var v = t.param(a);
  CHECK_THROWS(t.backward(v));  // not scalar
  Var s = t.sum_all(v);
  t.backward(s);
  CHECK_THROWS(t.backward(s));
}

TEST_CASE("untracked tape treats parameters as constants") {
  Tape t(false);
  Param a("a", random_mat(2, 2, 81));
  Var v = t.param(a);
  Var s = t.sum_all(v);
  CHECK_THROWS(t.backward(s));  // nothing requires gradients
}
