#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "mgcnn/errors.hpp"

namespace mgcnn {

// Row-major dense matrix of doubles. Small sizes throughout (nodes x channels,
// channels x channels), so no blocking or vectorization tricks.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0) : rows(r), cols(c), a(static_cast<size_t>(r) * c, fill) {}

  double& operator()(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }

  double* row(int i) { return a.data() + static_cast<size_t>(i) * cols; }
  const double* row(int i) const { return a.data() + static_cast<size_t>(i) * cols; }

  void zero() { std::fill(a.begin(), a.end(), 0.0); }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (double v : a)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline void require_shape(const Matrix& m, int rows, int cols, const std::string& what) {
  if (m.rows != rows || m.cols != cols)
    throw shape_error(what + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                      ", got " + std::to_string(m.rows) + "x" + std::to_string(m.cols));
}

// y += x * w   with x (n x in), w (in x out), y (n x out)
inline void matmul_accumulate(const Matrix& x, const Matrix& w, Matrix& y) {
  if (x.cols != w.rows || y.rows != x.rows || y.cols != w.cols)
    throw shape_error("matmul_accumulate: incompatible shapes");
  for (int i = 0; i < x.rows; ++i) {
    const double* xi = x.row(i);
    double* yi = y.row(i);
    for (int k = 0; k < x.cols; ++k) {
      const double xik = xi[k];
      if (xik == 0.0) continue;
      const double* wk = w.row(k);
      for (int j = 0; j < w.cols; ++j) yi[j] += xik * wk[j];
    }
  }
}

inline Matrix matmul(const Matrix& x, const Matrix& w) {
  Matrix y(x.rows, w.cols);
  matmul_accumulate(x, w, y);
  return y;
}

// Deterministic RNG. std::mt19937_64 for the stream, hand-rolled conversions so
// draws are identical across standard-library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal, Box-Muller with a cached spare
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * M_PI * u2;
    spare_ = r * std::sin(th);
    has_spare_ = true;
    return r * std::cos(th);
  }

  // uniform integer in [lo, hi] inclusive, rejection sampled
  int64_t uniform_int(int64_t lo, int64_t hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    const uint64_t limit = std::numeric_limits<uint64_t>::max() - std::numeric_limits<uint64_t>::max() % span;
    uint64_t v = eng_();
    while (v >= limit) v = eng_();
    return lo + static_cast<int64_t>(v % span);
  }

  // Fisher-Yates partial shuffle helper: k distinct indices from [0, n)
  std::vector<int> sample_without_replacement(int n, int k) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = 0; i < k; ++i) {
      const int j = static_cast<int>(uniform_int(i, n - 1));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
  }

  void shuffle(std::vector<int>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      const int j = static_cast<int>(uniform_int(0, i));
      std::swap(v[i], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// splitmix64 step, used to derive independent per-item seeds from a base seed
inline uint64_t mix_seed(uint64_t base, uint64_t stream) {
  uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Glorot-style uniform fill: U(-L, L) with L = sqrt(6 / (fan_in + fan_out)).
inline void glorot_fill(Matrix& w, int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : w.a) v = rng.uniform(-limit, limit);
}

}  // namespace mgcnn
