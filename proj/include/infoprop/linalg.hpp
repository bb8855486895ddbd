#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "infoprop/errors.hpp"

namespace infoprop {

using Vec = std::vector<double>;

/// Dense row-major matrix. Scope is limited to what the Gaussian machinery
/// needs: products, transpose, and SPD factor/solve/inverse.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

  double& operator()(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }

  static Mat identity(int n) {
    Mat m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  bool operator==(const Mat& o) const { return rows == o.rows && cols == o.cols && a == o.a; }
};

inline Mat transpose(const Mat& m) {
  Mat t(m.cols, m.rows);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
  return t;
}

inline Mat matmul(const Mat& x, const Mat& y) {
  if (x.cols != y.rows) throw DimensionMismatch("matmul: inner dimensions disagree");
  Mat r(x.rows, y.cols);
  for (int i = 0; i < x.rows; ++i)
    for (int k = 0; k < x.cols; ++k) {
      const double v = x(i, k);
      if (v == 0.0) continue;
      for (int j = 0; j < y.cols; ++j) r(i, j) += v * y(k, j);
    }
  return r;
}

inline Vec matvec(const Mat& m, const Vec& v) {
  if (m.cols != static_cast<int>(v.size()))
    throw DimensionMismatch("matvec: dimensions disagree");
  Vec r(m.rows, 0.0);
  for (int i = 0; i < m.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < m.cols; ++j) s += m(i, j) * v[j];
    r[i] = s;
  }
  return r;
}

inline Mat add(const Mat& x, const Mat& y) {
  if (x.rows != y.rows || x.cols != y.cols) throw DimensionMismatch("add: shapes disagree");
  Mat r = x;
  for (size_t i = 0; i < r.a.size(); ++i) r.a[i] += y.a[i];
  return r;
}

inline Mat sub(const Mat& x, const Mat& y) {
  if (x.rows != y.rows || x.cols != y.cols) throw DimensionMismatch("sub: shapes disagree");
  Mat r = x;
  for (size_t i = 0; i < r.a.size(); ++i) r.a[i] -= y.a[i];
  return r;
}

inline double max_abs(const Mat& m) {
  double r = 0.0;
  for (double v : m.a) r = std::max(r, std::abs(v));
  return r;
}

/// Lower-triangular Cholesky factor of a symmetric PSD matrix.
/// Exactly singular directions are tolerated (zero pivot with a zero column);
/// an indefinite input raises NotPsd.
inline Mat cholesky_lower(const Mat& spd) {
  if (spd.rows != spd.cols) throw DimensionMismatch("cholesky: matrix not square");
  const int n = spd.rows;
  const double scale = std::max(1.0, max_abs(spd));
  const double tol = 1e-14 * scale;
  Mat l(n, n);
  for (int j = 0; j < n; ++j) {
    double d = spd(j, j);
    for (int k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (d < -tol) throw NotPsd("cholesky: negative pivot");
    if (d <= tol) {
      // singular direction: the rest of the column must vanish too
      l(j, j) = 0.0;
      for (int i = j + 1; i < n; ++i) {
        double s = spd(i, j);
        for (int k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
        if (std::abs(s) > 1e-7 * scale) throw NotPsd("cholesky: rank-deficient pivot with nonzero column");
        l(i, j) = 0.0;
      }
      continue;
    }
    const double lj = std::sqrt(d);
    l(j, j) = lj;
    for (int i = j + 1; i < n; ++i) {
      double s = spd(i, j);
      for (int k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / lj;
    }
  }
  return l;
}

/// Solve L·Lᵀ·x = b given the lower Cholesky factor L.
inline Vec chol_solve(const Mat& l, const Vec& b) {
  const int n = l.rows;
  if (static_cast<int>(b.size()) != n) throw DimensionMismatch("chol_solve: rhs size");
  Vec y(n);
  for (int i = 0; i < n; ++i) {
    double s = b[i];
    for (int k = 0; k < i; ++k) s -= l(i, k) * y[k];
    if (l(i, i) == 0.0) throw SingularPrecision("chol_solve: zero pivot");
    y[i] = s / l(i, i);
  }
  Vec x(n);
  for (int i = n - 1; i >= 0; --i) {
    double s = y[i];
    for (int k = i + 1; k < n; ++k) s -= l(k, i) * x[k];
    x[i] = s / l(i, i);
  }
  return x;
}

/// Solve L·Lᵀ·X = B columnwise.
inline Mat chol_solve_mat(const Mat& l, const Mat& b) {
  if (l.rows != b.rows) throw DimensionMismatch("chol_solve_mat: shapes disagree");
  Mat x(b.rows, b.cols);
  Vec col(b.rows);
  for (int j = 0; j < b.cols; ++j) {
    for (int i = 0; i < b.rows; ++i) col[i] = b(i, j);
    Vec sol = chol_solve(l, col);
    for (int i = 0; i < b.rows; ++i) x(i, j) = sol[i];
  }
  return x;
}

inline Mat spd_inverse(const Mat& spd) {
  Mat l = cholesky_lower(spd);
  return chol_solve_mat(l, Mat::identity(spd.rows));
}

/// Sum with the addends sorted first, so the result does not depend on the
/// order the caller collected them in.
inline double sorted_sum(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  return std::accumulate(xs.begin(), xs.end(), 0.0);
}

}  // namespace infoprop
