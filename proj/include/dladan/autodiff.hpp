#pragma once

#include <functional>
#include <utility>

#include "dladan/mat.hpp"

namespace dladan {

// A named trainable tensor. Gradients accumulate into `grad` when a Tape
// using this parameter runs backward; `m`/`v` are optimizer moments.
struct Param {
  std::string name;
  Mat value;
  Mat grad;
  Mat m;
  Mat v;

  Param() = default;
  Param(std::string n, Mat init) : name(std::move(n)), value(std::move(init)) {
    grad = Mat::zeros(value.rows, value.cols);
  }

  void zero_grad() { grad.fill(0.0); }
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Nodes are created in forward order; backward() walks
// them in reverse. Nodes whose inputs carry no gradient are folded into
// constants so the memory branch (entered via constant()) costs nothing.
class Tape {
 public:
  struct Node {
    Mat val;
    Mat grad;
    std::function<void()> back;
    bool needs_grad = false;
  };

  // Pass false for pure inference: parameters enter as constants and no
  // backward structure is recorded.
  explicit Tape(bool track_gradients = true) : track_(track_gradients) {}

  const Mat& val(Var v) const { return node(v).val; }

  const Mat& grad(Var v) const {
    require(node(v).needs_grad, "Tape::grad: node does not track gradients");
    return node(v).grad;
  }

  size_t size() const { return nodes_.size(); }

  Var constant(Mat m) { return push(std::move(m), false); }

  // A gradient-tracking input that is not an external Param (used by tests).
  Var leaf(Mat m) { return push(std::move(m), true); }

  Var param(Param& p) {
    if (!track_) return push(p.value, false);
    Var v = push(p.value, true);
    hooks_.emplace_back(v.id, &p);
    return v;
  }

  // ---- elementwise / linear ops -------------------------------------------

  Var add(Var a, Var b) {
    require(val(a).same_shape(val(b)), "add: shape mismatch");
    Mat out = val(a);
    for (size_t i = 0; i < out.size(); ++i) out.a[i] += val(b).a[i];
    Var r = push(std::move(out), needs(a) || needs(b));
    if (node(r).needs_grad)
      node(r).back = [this, a, b, r] {
        acc(a, node(r).grad);
        acc(b, node(r).grad);
      };
    return r;
  }

  Var sub(Var a, Var b) {
    require(val(a).same_shape(val(b)), "sub: shape mismatch");
    Mat out = val(a);
    for (size_t i = 0; i < out.size(); ++i) out.a[i] -= val(b).a[i];
    Var r = push(std::move(out), needs(a) || needs(b));
    if (node(r).needs_grad)
      node(r).back = [this, a, b, r] {
        acc(a, node(r).grad);
        if (needs(b)) {
          Mat g = node(r).grad;
          for (auto& x : g.a) x = -x;
          acc(b, g);
        }
      };
    return r;
  }

  Var neg(Var a) { return scale(a, -1.0); }

  Var scale(Var a, double c) {
    Mat out = val(a);
    for (auto& x : out.a) x *= c;
    Var r = push(std::move(out), needs(a));
    if (node(r).needs_grad)
      node(r).back = [this, a, r, c] {
        Mat g = node(r).grad;
        for (auto& x : g.a) x *= c;
        acc(a, g);
      };
    return r;
  }

  Var add_const(Var a, double c) {
    Mat out = val(a);
    for (auto& x : out.a) x += c;
    Var r = push(std::move(out), needs(a));
    if (node(r).needs_grad)
      node(r).back = [this, a, r] { acc(a, node(r).grad); };
    return r;
  }

  Var hadamard(Var a, Var b) {
    require(val(a).same_shape(val(b)), "hadamard: shape mismatch");
    Mat out = val(a);
    for (size_t i = 0; i < out.size(); ++i) out.a[i] *= val(b).a[i];
    Var r = push(std::move(out), needs(a) || needs(b));
    if (node(r).needs_grad)
      node(r).back = [this, a, b, r] {
        if (needs(a)) {
          Mat g = node(r).grad;
          for (size_t i = 0; i < g.size(); ++i) g.a[i] *= val(b).a[i];
          acc(a, g);
        }
        if (needs(b)) {
          Mat g = node(r).grad;
          for (size_t i = 0; i < g.size(); ++i) g.a[i] *= val(a).a[i];
          acc(b, g);
        }
      };
    return r;
  }

  // Sums any number of same-shaped vars in one node.
  Var add_n(const std::vector<Var>& xs) {
    require(!xs.empty(), "add_n: empty input");
    Mat out = val(xs[0]);
    bool ng = needs(xs[0]);
    for (size_t k = 1; k < xs.size(); ++k) {
      require(val(xs[k]).same_shape(out), "add_n: shape mismatch");
      for (size_t i = 0; i < out.size(); ++i) out.a[i] += val(xs[k]).a[i];
      ng = ng || needs(xs[k]);
    }
    Var r = push(std::move(out), ng);
    if (node(r).needs_grad)
      node(r).back = [this, xs, r] {
        for (Var x : xs) acc(x, node(r).grad);
      };
    return r;
  }

  Var matmul(Var a, Var b) {
    Mat out = dladan::matmul(val(a), val(b));
    Var r = push(std::move(out), needs(a) || needs(b));
    if (node(r).needs_grad)
      node(r).back = [this, a, b, r] {
        if (needs(a)) acc(a, dladan::matmul(node(r).grad, val(b).transposed()));
        if (needs(b)) acc(b, dladan::matmul(val(a).transposed(), node(r).grad));
      };
    return r;
  }

  Var transpose(Var a) {
    Var r = push(val(a).transposed(), needs(a));
    if (node(r).needs_grad)
      node(r).back = [this, a, r] { acc(a, node(r).grad.transposed()); };
    return r;
  }

  // out = a * s where s is a 1x1 var (e.g. a trainable temperature).
  Var mul_scalar(Var a, Var s) {
    require(val(s).rows == 1 && val(s).cols == 1, "mul_scalar: s must be 1x1");
    double sv = val(s)(0, 0);
    Mat out = val(a);
    for (auto& x : out.a) x *= sv;
    Var r = push(std::move(out), needs(a) || needs(s));
    if (node(r).needs_grad)
      node(r).back = [this, a, s, r, sv] {
        if (needs(a)) {
          Mat g = node(r).grad;
          for (auto& x : g.a) x *= sv;
          acc(a, g);
        }
        if (needs(s)) {
          double gs = 0;
          for (size_t i = 0; i < node(r).grad.size(); ++i) gs += node(r).grad.a[i] * val(a).a[i];
          Mat g(1, 1);
          g(0, 0) = gs;
          acc(s, g);
        }
      };
    return r;
  }

  // ---- nonlinearities ------------------------------------------------------

  Var tanh_(Var a) {
    Mat out = val(a);
    for (auto& x : out.a) x = std::tanh(x);
    Var r = push(std::move(out), needs(a));
    if (node(r).needs_grad)
      node(r).back = [this, a, r] {
        Mat g = node(r).grad;
        for (size_t i = 0; i < g.size(); ++i) {
          double t = node(r).val.a[i];
          g.a[i] *= 1.0 - t * t;
        }
        acc(a, g);
      };
    return r;
  }

  Var sigmoid(Var a) {
    Mat out = val(a);
    for (auto& x : out.a) x = 1.0 / (1.0 + std::exp(-x));
    Var r = push(std::move(out), needs(a));
    if (node(r).needs_grad)
      node(r).back = [this, a, r] {
        Mat g = node(r).grad;
        for (size_t i = 0; i < g.size(); ++i) {
          double s = node(r).val.a[i];
          g.a[i] *= s * (1.0 - s);
        }
        acc(a, g);
      };
    return r;
  }

  Var exp_(Var a) {
    Mat out = val(a);
    for (auto& x : out.a) x = std::exp(x);
    Var r = push(std::move(out), needs(a));
    if (node(r).needs_grad)
      node(r).back = [this, a, r] {
        Mat g = node(r).grad;
        for (size_t i = 0; i < g.size(); ++i) g.a[i] *= node(r).val.a[i];
        acc(a, g);
      };
    return r;
  }

  // ---- shape ops -----------------------------------------------------------

  Var concat_rows(Var a, Var b) {
    require(val(a).cols == val(b).cols, "concat_rows: column mismatch");
    Mat out(val(a).rows + val(b).rows, val(a).cols);
    std::copy(val(a).a.begin(), val(a).a.end(), out.a.begin());
    std::copy(val(b).a.begin(), val(b).a.end(), out.a.begin() + val(a).size());
    Var r = push(std::move(out), needs(a) || needs(b));
    if (node(r).needs_grad)
      node(r).back = [this, a, b, r] {
        const Mat& g = node(r).grad;
        if (needs(a)) {
          Mat ga(val(a).rows, val(a).cols);
          std::copy(g.a.begin(), g.a.begin() + ga.size(), ga.a.begin());
          acc(a, ga);
        }
        if (needs(b)) {
          Mat gb(val(b).rows, val(b).cols);
          std::copy(g.a.begin() + val(a).size(), g.a.end(), gb.a.begin());
          acc(b, gb);
        }
      };
    return r;
  }

  Var concat_cols(Var a, Var b) {
    require(val(a).rows == val(b).rows, "concat_cols: row mismatch");
    Mat out(val(a).rows, val(a).cols + val(b).cols);
    for (int i = 0; i < out.rows; ++i) {
      for (int j = 0; j < val(a).cols; ++j) out(i, j) = val(a)(i, j);
      for (int j = 0; j < val(b).cols; ++j) out(i, val(a).cols + j) = val(b)(i, j);
    }
    Var r = push(std::move(out), needs(a) || needs(b));
    if (node(r).needs_grad)
      node(r).back = [this, a, b, r] {
        const Mat& g = node(r).grad;
        int ca = val(a).cols;
        if (needs(a)) {
          Mat ga(val(a).rows, ca);
          for (int i = 0; i < ga.rows; ++i)
            for (int j = 0; j < ca; ++j) ga(i, j) = g(i, j);
          acc(a, ga);
        }
        if (needs(b)) {
          Mat gb(val(b).rows, val(b).cols);
          for (int i = 0; i < gb.rows; ++i)
            for (int j = 0; j < gb.cols; ++j) gb(i, j) = g(i, ca + j);
          acc(b, gb);
        }
      };
    return r;
  }

  // Stacks n row vectors (1 x d) into an n x d matrix.
  Var stack_rows(const std::vector<Var>& rows) {
    require(!rows.empty(), "stack_rows: empty input");
    int d = val(rows[0]).cols;
    Mat out(static_cast<int>(rows.size()), d);
    bool ng = false;
    for (size_t i = 0; i < rows.size(); ++i) {
      require(val(rows[i]).rows == 1 && val(rows[i]).cols == d, "stack_rows: need 1 x d rows");
      for (int j = 0; j < d; ++j) out(static_cast<int>(i), j) = val(rows[i])(0, j);
      ng = ng || needs(rows[i]);
    }
    Var r = push(std::move(out), ng);
    if (node(r).needs_grad)
      node(r).back = [this, rows, r] {
        const Mat& g = node(r).grad;
        for (size_t i = 0; i < rows.size(); ++i) {
          if (!needs(rows[i])) continue;
          Mat gi(1, g.cols);
          for (int j = 0; j < g.cols; ++j) gi(0, j) = g(static_cast<int>(i), j);
          acc(rows[i], gi);
        }
      };
    return r;
  }

  // Stacks n column vectors (d x 1) into a d x n matrix.
  Var stack_cols(const std::vector<Var>& cols) {
    require(!cols.empty(), "stack_cols: empty input");
    int d = val(cols[0]).rows;
    Mat out(d, static_cast<int>(cols.size()));
    bool ng = false;
    for (size_t j = 0; j < cols.size(); ++j) {
      require(val(cols[j]).cols == 1 && val(cols[j]).rows == d, "stack_cols: need d x 1 cols");
      for (int i = 0; i < d; ++i) out(i, static_cast<int>(j)) = val(cols[j])(i, 0);
      ng = ng || needs(cols[j]);
    }
    Var r = push(std::move(out), ng);
    if (node(r).needs_grad)
      node(r).back = [this, cols, r] {
        const Mat& g = node(r).grad;
        for (size_t j = 0; j < cols.size(); ++j) {
          if (!needs(cols[j])) continue;
          Mat gj(g.rows, 1);
          for (int i = 0; i < g.rows; ++i) gj(i, 0) = g(i, static_cast<int>(j));
          acc(cols[j], gj);
        }
      };
    return r;
  }

  // Stacks n scalars (1 x 1) into an n x 1 vector.
  Var stack_scalars(const std::vector<Var>& xs) {
    require(!xs.empty(), "stack_scalars: empty input");
    Mat out(static_cast<int>(xs.size()), 1);
    bool ng = false;
    for (size_t i = 0; i < xs.size(); ++i) {
      require(val(xs[i]).size() == 1, "stack_scalars: need 1 x 1 inputs");
      out(static_cast<int>(i), 0) = val(xs[i])(0, 0);
      ng = ng || needs(xs[i]);
    }
    Var r = push(std::move(out), ng);
    if (node(r).needs_grad)
      node(r).back = [this, xs, r] {
        for (size_t i = 0; i < xs.size(); ++i) {
          if (!needs(xs[i])) continue;
          Mat g(1, 1);
          g(0, 0) = node(r).grad(static_cast<int>(i), 0);
          acc(xs[i], g);
        }
      };
    return r;
  }

  // Columns [c0, c1) as a new matrix.
  Var slice_cols(Var a, int c0, int c1) {
    require(0 <= c0 && c0 < c1 && c1 <= val(a).cols, "slice_cols: bad range");
    Mat out(val(a).rows, c1 - c0);
    for (int i = 0; i < out.rows; ++i)
      for (int j = 0; j < out.cols; ++j) out(i, j) = val(a)(i, c0 + j);
    Var r = push(std::move(out), needs(a));
    if (node(r).needs_grad)
      node(r).back = [this, a, r, c0] {
        Mat g(val(a).rows, val(a).cols);
        const Mat& gr = node(r).grad;
        for (int i = 0; i < gr.rows; ++i)
          for (int j = 0; j < gr.cols; ++j) g(i, c0 + j) = gr(i, j);
        acc(a, g);
      };
    return r;
  }

  Var row(Var a, int i) {
    require(i >= 0 && i < val(a).rows, "row: index out of range");
    Mat out(1, val(a).cols);
    for (int j = 0; j < out.cols; ++j) out(0, j) = val(a)(i, j);
    Var r = push(std::move(out), needs(a));
    if (node(r).needs_grad)
      node(r).back = [this, a, r, i] {
        Mat g(val(a).rows, val(a).cols);
        for (int j = 0; j < g.cols; ++j) g(i, j) = node(r).grad(0, j);
        acc(a, g);
      };
    return r;
  }

  Var gather_rows(Var a, std::vector<int> idx) {
    Mat out(static_cast<int>(idx.size()), val(a).cols);
    for (size_t i = 0; i < idx.size(); ++i) {
      require(idx[i] >= 0 && idx[i] < val(a).rows, "gather_rows: index out of range");
      for (int j = 0; j < out.cols; ++j) out(static_cast<int>(i), j) = val(a)(idx[i], j);
    }
    Var r = push(std::move(out), needs(a));
    if (node(r).needs_grad)
      node(r).back = [this, a, r, idx = std::move(idx)] {
        Mat g(val(a).rows, val(a).cols);
        for (size_t i = 0; i < idx.size(); ++i)
          for (int j = 0; j < g.cols; ++j) g(idx[i], j) += node(r).grad(static_cast<int>(i), j);
        acc(a, g);
      };
    return r;
  }

  // out(i, j) = M(i, j) + b(j); bias is a (cols x 1) vector.
  Var add_bias_rows(Var m, Var b) {
    require(val(b).cols == 1 && val(b).rows == val(m).cols, "add_bias_rows: bias shape");
    Mat out = val(m);
    for (int i = 0; i < out.rows; ++i)
      for (int j = 0; j < out.cols; ++j) out(i, j) += val(b)(j, 0);
    Var r = push(std::move(out), needs(m) || needs(b));
    if (node(r).needs_grad)
      node(r).back = [this, m, b, r] {
        acc(m, node(r).grad);
        if (needs(b)) {
          Mat g(val(b).rows, 1);
          for (int i = 0; i < node(r).grad.rows; ++i)
            for (int j = 0; j < node(r).grad.cols; ++j) g(j, 0) += node(r).grad(i, j);
          acc(b, g);
        }
      };
    return r;
  }

  // Scales row i of a by the constant factor s(i, 0).
  Var scale_rows_const(Var a, Mat s) {
    require(s.cols == 1 && s.rows == val(a).rows, "scale_rows_const: factor shape");
    Mat out = val(a);
    for (int i = 0; i < out.rows; ++i)
      for (int j = 0; j < out.cols; ++j) out(i, j) *= s(i, 0);
    Var r = push(std::move(out), needs(a));
    if (node(r).needs_grad)
      node(r).back = [this, a, r, s = std::move(s)] {
        Mat g = node(r).grad;
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < g.cols; ++j) g(i, j) *= s(i, 0);
        acc(a, g);
      };
    return r;
  }

  // ---- reductions ----------------------------------------------------------

  Var sum_all(Var a) {
    Mat out(1, 1);
    for (double x : val(a).a) out(0, 0) += x;
    Var r = push(std::move(out), needs(a));
    if (node(r).needs_grad)
      node(r).back = [this, a, r] {
        acc(a, Mat::full(val(a).rows, val(a).cols, node(r).grad(0, 0)));
      };
    return r;
  }

  Var dot_(Var a, Var b) {
    require(val(a).same_shape(val(b)), "dot_: shape mismatch");
    Mat out(1, 1);
    out(0, 0) = dladan::dot(val(a), val(b));
    Var r = push(std::move(out), needs(a) || needs(b));
    if (node(r).needs_grad)
      node(r).back = [this, a, b, r] {
        double g = node(r).grad(0, 0);
        if (needs(a)) {
          Mat ga = val(b);
          for (auto& x : ga.a) x *= g;
          acc(a, ga);
        }
        if (needs(b)) {
          Mat gb = val(a);
          for (auto& x : gb.a) x *= g;
          acc(b, gb);
        }
      };
    return r;
  }

  // Column-wise max over rows: (m x d) -> (1 x d). Gradient flows to the
  // first argmax row per column (subgradient at ties).
  Var colwise_max(Var a) { return colwise_extreme(a, /*take_max=*/true); }
  Var colwise_min(Var a) { return colwise_extreme(a, /*take_max=*/false); }

  // ---- softmax / losses ----------------------------------------------------

  // Stable softmax over an (n x 1) score vector. Entries with mask[i]==0 get
  // probability exactly 0 (score treated as -inf); mask may be empty.
  Var softmax(Var z, const std::vector<char>& mask = {}) {
    const Mat& zv = val(z);
    require(zv.cols == 1 && zv.rows >= 1, "softmax: need n x 1 scores");
    require(mask.empty() || static_cast<int>(mask.size()) == zv.rows, "softmax: mask size");
    int n = zv.rows;
    auto live = [&](int i) { return mask.empty() || mask[i]; };
    double mx = -1e300;
    int nlive = 0;
    for (int i = 0; i < n; ++i)
      if (live(i)) {
        mx = std::max(mx, zv(i, 0));
        ++nlive;
      }
    require(nlive > 0, "softmax: all entries masked");
    Mat out(n, 1);
    double denom = 0;
    for (int i = 0; i < n; ++i)
      if (live(i)) {
        out(i, 0) = std::exp(zv(i, 0) - mx);
        denom += out(i, 0);
      }
    for (int i = 0; i < n; ++i) out(i, 0) = live(i) ? out(i, 0) / denom : 0.0;
    Var r = push(std::move(out), needs(z));
    if (node(r).needs_grad)
      node(r).back = [this, z, r] {
        const Mat& s = node(r).val;
        const Mat& g = node(r).grad;
        double sg = 0;
        for (int i = 0; i < s.rows; ++i) sg += s(i, 0) * g(i, 0);
        Mat gz(s.rows, 1);
        for (int i = 0; i < s.rows; ++i) gz(i, 0) = s(i, 0) * (g(i, 0) - sg);
        acc(z, gz);
      };
    return r;
  }

  // Cross-entropy of softmax(z) against a one-hot target, via log-sum-exp.
  Var ce_logits(Var z, int target) {
    const Mat& zv = val(z);
    require(zv.cols == 1, "ce_logits: need n x 1 logits");
    require(target >= 0 && target < zv.rows, "ce_logits: target out of range");
    double mx = zv.a[0];
    for (double x : zv.a) mx = std::max(mx, x);
    double denom = 0;
    for (double x : zv.a) denom += std::exp(x - mx);
    Mat out(1, 1);
    out(0, 0) = mx + std::log(denom) - zv(target, 0);
    Var r = push(std::move(out), needs(z));
    if (node(r).needs_grad)
      node(r).back = [this, z, r, target, mx, denom] {
        double g = node(r).grad(0, 0);
        const Mat& zv2 = val(z);
        Mat gz(zv2.rows, 1);
        for (int i = 0; i < zv2.rows; ++i) {
          double p = std::exp(zv2(i, 0) - mx) / denom;
          gz(i, 0) = g * (p - (i == target ? 1.0 : 0.0));
        }
        acc(z, gz);
      };
    return r;
  }

  // cos(a, b) for vectors of equal shape; errors on zero norms.
  Var cosine(Var a, Var b, const char* who = "cosine") {
    require(val(a).same_shape(val(b)), "cosine: shape mismatch");
    double na = val(a).norm2(), nb = val(b).norm2();
    require(na > 0.0, std::string(who) + ": zero-norm left vector");
    require(nb > 0.0, std::string(who) + ": zero-norm right vector");
    double c = dladan::dot(val(a), val(b)) / (na * nb);
    Mat out(1, 1);
    out(0, 0) = c;
    Var r = push(std::move(out), needs(a) || needs(b));
    if (node(r).needs_grad)
      node(r).back = [this, a, b, r, na, nb, c] {
        double g = node(r).grad(0, 0);
        if (needs(a)) {
          Mat ga = val(a);
          for (size_t i = 0; i < ga.size(); ++i)
            ga.a[i] = g * (val(b).a[i] / (na * nb) - c * val(a).a[i] / (na * na));
          acc(a, ga);
        }
        if (needs(b)) {
          Mat gb = val(b);
          for (size_t i = 0; i < gb.size(); ++i)
            gb.a[i] = g * (val(a).a[i] / (na * nb) - c * val(b).a[i] / (nb * nb));
          acc(b, gb);
        }
      };
    return r;
  }

  // Cosine of a (d x 1) query against every column of a (d x C) matrix.
  Var cosine_cols(Var f, Var w, const char* who = "cosine_cols") {
    const Mat& fv = val(f);
    const Mat& wv = val(w);
    require(fv.cols == 1 && fv.rows == wv.rows, "cosine_cols: shape mismatch");
    double nf = fv.norm2();
    require(nf > 0.0, std::string(who) + ": zero-norm query vector");
    int C = wv.cols;
    std::vector<double> ncol(C);
    Mat out(C, 1);
    for (int c = 0; c < C; ++c) {
      double n2 = 0, d = 0;
      for (int i = 0; i < wv.rows; ++i) {
        n2 += wv(i, c) * wv(i, c);
        d += wv(i, c) * fv(i, 0);
      }
      ncol[c] = std::sqrt(n2);
      require(ncol[c] > 0.0, std::string(who) + ": zero-norm column " + std::to_string(c));
      out(c, 0) = d / (nf * ncol[c]);
    }
    Var r = push(std::move(out), needs(f) || needs(w));
    if (node(r).needs_grad)
      node(r).back = [this, f, w, r, nf, ncol = std::move(ncol)] {
        const Mat& fv2 = val(f);
        const Mat& wv2 = val(w);
        const Mat& cv = node(r).val;
        const Mat& g = node(r).grad;
        if (needs(f)) {
          Mat gf(fv2.rows, 1);
          for (int c = 0; c < wv2.cols; ++c) {
            double gc = g(c, 0);
            if (gc == 0.0) continue;
            for (int i = 0; i < fv2.rows; ++i)
              gf(i, 0) += gc * (wv2(i, c) / (nf * ncol[c]) - cv(c, 0) * fv2(i, 0) / (nf * nf));
          }
          acc(f, gf);
        }
        if (needs(w)) {
          Mat gw(wv2.rows, wv2.cols);
          for (int c = 0; c < wv2.cols; ++c) {
            double gc = g(c, 0);
            if (gc == 0.0) continue;
            for (int i = 0; i < wv2.rows; ++i)
              gw(i, c) = gc * (fv2(i, 0) / (nf * ncol[c]) - cv(c, 0) * wv2(i, c) / (ncol[c] * ncol[c]));
          }
          acc(w, gw);
        }
      };
    return r;
  }

  // ---- backward ------------------------------------------------------------

  void backward(Var loss) {
    require(!ran_backward_, "backward: tape already consumed");
    require(val(loss).rows == 1 && val(loss).cols == 1, "backward: loss must be scalar");
    require(node(loss).needs_grad, "backward: loss does not depend on any parameter");
    ran_backward_ = true;
    node(loss).grad(0, 0) = 1.0;
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.needs_grad && n.back) n.back();
    }
    for (auto& [id, p] : hooks_) {
      const Mat& g = nodes_[static_cast<size_t>(id)].grad;
      for (size_t i = 0; i < g.size(); ++i) p->grad.a[i] += g.a[i];
    }
  }

 private:
  std::vector<Node> nodes_;
  std::vector<std::pair<int, Param*>> hooks_;
  bool track_ = true;
  bool ran_backward_ = false;

  Node& node(Var v) { return nodes_.at(static_cast<size_t>(v.id)); }
  const Node& node(Var v) const { return nodes_.at(static_cast<size_t>(v.id)); }
  bool needs(Var v) const { return node(v).needs_grad; }

  Var push(Mat m, bool ng) {
    Node n;
    n.val = std::move(m);
    n.needs_grad = ng;
    if (ng) n.grad = Mat::zeros(n.val.rows, n.val.cols);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void acc(Var v, const Mat& g) {
    if (!needs(v)) return;
    Mat& dst = node(v).grad;
    require(dst.same_shape(g), "acc: gradient shape mismatch");
    for (size_t i = 0; i < g.size(); ++i) dst.a[i] += g.a[i];
  }

  Var colwise_extreme(Var a, bool take_max) {
    const Mat& av = val(a);
    require(av.rows >= 1, "colwise pooling: empty input");
    Mat out(1, av.cols);
    std::vector<int> arg(static_cast<size_t>(av.cols), 0);
    for (int j = 0; j < av.cols; ++j) {
      double best = av(0, j);
      for (int i = 1; i < av.rows; ++i) {
        double x = av(i, j);
        if (take_max ? (x > best) : (x < best)) {
          best = x;
          arg[static_cast<size_t>(j)] = i;
        }
      }
      out(0, j) = best;
    }
    Var r = push(std::move(out), needs(a));
    if (node(r).needs_grad)
      node(r).back = [this, a, r, arg = std::move(arg)] {
        Mat g(val(a).rows, val(a).cols);
        for (int j = 0; j < g.cols; ++j) g(arg[static_cast<size_t>(j)], j) += node(r).grad(0, j);
        acc(a, g);
      };
    return r;
  }
};

}  // namespace dladan
