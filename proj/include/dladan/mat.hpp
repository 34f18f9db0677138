#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace dladan {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

// Dense row-major matrix of doubles. Column vectors are (n x 1).
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {
    require(r >= 0 && c >= 0, "Mat: negative shape");
  }

  double& operator()(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }

  size_t size() const { return a.size(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  static Mat zeros(int r, int c) { return Mat(r, c); }

  static Mat full(int r, int c, double v) {
    Mat m(r, c);
    for (auto& x : m.a) x = v;
    return m;
  }

  static Mat uniform(int r, int c, double lo, double hi, std::mt19937_64& rng) {
    Mat m(r, c);
    std::uniform_real_distribution<double> d(lo, hi);
    for (auto& x : m.a) x = d(rng);
    return m;
  }

  static Mat from_rows(const std::vector<std::vector<double>>& rows_in) {
    if (rows_in.empty()) return Mat();
    Mat m(static_cast<int>(rows_in.size()), static_cast<int>(rows_in[0].size()));
    for (int i = 0; i < m.rows; ++i) {
      require(static_cast<int>(rows_in[i].size()) == m.cols, "from_rows: ragged input");
      for (int j = 0; j < m.cols; ++j) m(i, j) = rows_in[i][j];
    }
    return m;
  }

  static Mat col(const std::vector<double>& v) {
    Mat m(static_cast<int>(v.size()), 1);
    m.a = v;
    return m;
  }

  void fill(double v) {
    for (auto& x : a) x = v;
  }

  Mat transposed() const {
    Mat t(cols, rows);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  double norm2() const {
    double s = 0;
    for (double x : a) s += x * x;
    return std::sqrt(s);
  }

  double max_abs() const {
    double s = 0;
    for (double x : a) s = std::max(s, std::abs(x));
    return s;
  }
};

inline Mat matmul(const Mat& x, const Mat& y) {
  require(x.cols == y.rows, "matmul: inner dims disagree");
  Mat out(x.rows, y.cols);
  for (int i = 0; i < x.rows; ++i) {
    for (int k = 0; k < x.cols; ++k) {
      double xv = x(i, k);
      if (xv == 0.0) continue;
      const double* yr = &y.a[static_cast<size_t>(k) * y.cols];
      double* or_ = &out.a[static_cast<size_t>(i) * out.cols];
      for (int j = 0; j < y.cols; ++j) or_[j] += xv * yr[j];
    }
  }
  return out;
}

inline double dot(const Mat& x, const Mat& y) {
  require(x.size() == y.size(), "dot: size mismatch");
  double s = 0;
  for (size_t i = 0; i < x.size(); ++i) s += x.a[i] * y.a[i];
  return s;
}

// 64-bit FNV-1a, used for reproducibility hashes of vocabularies and partitions.
struct Fnv1a {
  uint64_t h = 1469598103934665603ull;
  void feed(const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  }
  void feed(const std::string& s) {
    feed(s.data(), s.size());
    unsigned char z = 0;
    feed(&z, 1);
  }
  void feed(uint64_t v) { feed(&v, sizeof v); }
  void feed(double v) { feed(&v, sizeof v); }
  std::string hex() const {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    uint64_t v = h;
    for (int i = 15; i >= 0; --i) {
      s[i] = digits[v & 0xf];
      v >>= 4;
    }
    return s;
  }
};

}  // namespace dladan
