#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "infoprop/errors.hpp"
#include "infoprop/linalg.hpp"

namespace infoprop {

/// Variance floor applied to every covariance diagonal before factorization
/// and entropy. A perfect prediction drives the differential entropy to -inf;
/// the floor keeps entropies finite and threshold comparisons well defined.
inline constexpr double kVarianceFloor = 1e-12;

/// log2(2*pi*e)
inline const double kLog2TwoPiE = std::log2(2.0 * std::numbers::pi * std::numbers::e);

enum class CovMode { Dense, Diagonal };

/// Symmetric PSD covariance, stored either as a diagonal (the default
/// convention: cross-correlations between state dimensions are neglected) or
/// as a dense matrix. The lower Cholesky factor is computed at construction.
class Cov {
 public:
  static Cov diagonal(Vec var, bool floor = true) {
    Cov c;
    c.mode_ = CovMode::Diagonal;
    if (floor)
      for (double& v : var) v = std::max(v, kVarianceFloor);
    for (double v : var)
      if (v < 0.0) throw NotPsd("Cov: negative diagonal variance");
    c.diag_ = std::move(var);
    c.chol_diag_.resize(c.diag_.size());
    for (size_t i = 0; i < c.diag_.size(); ++i) c.chol_diag_[i] = std::sqrt(c.diag_[i]);
    return c;
  }

  /// Dense construction symmetrizes as (C + Cᵀ)/2 first; round-off from fusion
  /// arithmetic accumulates in the off-diagonal halves. Asymmetry beyond
  /// 1e-10 relative is treated as a corrupted input.
  static Cov dense(Mat cov, bool floor = true) {
    if (cov.rows != cov.cols) throw DimensionMismatch("Cov: matrix not square");
    const double scale = 1.0 + max_abs(cov);
    for (int i = 0; i < cov.rows; ++i)
      for (int j = i + 1; j < cov.cols; ++j) {
        if (std::abs(cov(i, j) - cov(j, i)) > 1e-10 * scale)
          throw NotSymmetric("Cov: input matrix is not symmetric");
        const double m = 0.5 * (cov(i, j) + cov(j, i));
        cov(i, j) = m;
        cov(j, i) = m;
      }
    if (floor)
      for (int i = 0; i < cov.rows; ++i) cov(i, i) = std::max(cov(i, i), kVarianceFloor);
    Cov c;
    c.mode_ = CovMode::Dense;
    c.chol_ = cholesky_lower(cov);
    c.dense_ = std::move(cov);
    c.diag_.resize(c.dense_.rows);
    for (int i = 0; i < c.dense_.rows; ++i) c.diag_[i] = c.dense_(i, i);
    return c;
  }

  CovMode mode() const { return mode_; }
  int dim() const { return static_cast<int>(diag_.size()); }

  /// Marginal variances (the diagonal), available in both modes.
  const Vec& diag() const { return diag_; }

  const Mat& dense_matrix() const {
    if (mode_ != CovMode::Dense) throw Error("Cov: dense_matrix() on diagonal covariance");
    return dense_;
  }

  const Mat& chol() const {
    if (mode_ != CovMode::Dense) throw Error("Cov: chol() on diagonal covariance");
    return chol_;
  }

  const Vec& chol_diag() const {
    if (mode_ != CovMode::Diagonal) throw Error("Cov: chol_diag() on dense covariance");
    return chol_diag_;
  }

  /// L * noise
  Vec correlate(const Vec& noise) const {
    if (static_cast<int>(noise.size()) != dim())
      throw DimensionMismatch("Cov: noise dimension disagrees");
    if (mode_ == CovMode::Diagonal) {
      Vec r(noise.size());
      for (size_t i = 0; i < noise.size(); ++i) r[i] = chol_diag_[i] * noise[i];
      return r;
    }
    return matvec(chol_, noise);
  }

  /// log2 |Sigma|
  double logdet2() const {
    double s = 0.0;
    if (mode_ == CovMode::Diagonal) {
      for (double v : diag_) s += std::log2(v);
      return s;
    }
    for (int i = 0; i < chol_.rows; ++i) s += std::log2(chol_(i, i));
    return 2.0 * s;
  }

  bool operator==(const Cov& o) const {
    return mode_ == o.mode_ && diag_ == o.diag_ && dense_ == o.dense_;
  }

 private:
  CovMode mode_ = CovMode::Diagonal;
  Vec diag_;
  Vec chol_diag_;
  Mat dense_;
  Mat chol_;
};

/// Discretization step per state dimension; turns differential entropy into
/// quantized entropy in bits.
struct QuantizationSpec {
  Vec delta_z;

  explicit QuantizationSpec(Vec dz) : delta_z(std::move(dz)) {
    for (double d : delta_z)
      if (!(d > 0.0)) throw InvalidConfig("QuantizationSpec: delta_z entries must be positive");
  }

  static QuantizationSpec uniform(int dim, double dz = 1e-6) {
    return QuantizationSpec(Vec(dim, dz));
  }

  int dim() const { return static_cast<int>(delta_z.size()); }
};

/// Entropy of a variance-floored dimension: the finite stand-in for the -inf
/// of a perfect prediction.
inline double floor_entropy_bits(double delta_z) {
  return 0.5 * std::log2(2.0 * std::numbers::pi * std::numbers::e * kVarianceFloor) -
         std::log2(delta_z);
}

inline Vec floor_entropy_bits(const QuantizationSpec& q) {
  Vec f(q.dim());
  for (int k = 0; k < q.dim(); ++k) f[k] = floor_entropy_bits(q.delta_z[k]);
  return f;
}

/// Multivariate Gaussian belief: mean + covariance with the Cholesky factor
/// cached. Immutable after construction.
class GaussianBelief {
 public:
  GaussianBelief(Vec mean, Cov cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
    if (static_cast<int>(mean_.size()) != cov_.dim())
      throw DimensionMismatch("GaussianBelief: mean/cov dimensions disagree");
  }

  static GaussianBelief diagonal(Vec mean, Vec var) {
    return GaussianBelief(std::move(mean), Cov::diagonal(std::move(var)));
  }

  static GaussianBelief dense(Vec mean, Mat cov) {
    return GaussianBelief(std::move(mean), Cov::dense(std::move(cov)));
  }

  int dim() const { return static_cast<int>(mean_.size()); }
  CovMode mode() const { return cov_.mode(); }
  const Vec& mean() const { return mean_; }
  const Cov& cov() const { return cov_; }
  const Vec& var_diag() const { return cov_.diag(); }

  /// mean + L*noise; deterministic given the noise vector.
  Vec sample(const Vec& noise) const {
    Vec r = cov_.correlate(noise);
    for (int i = 0; i < dim(); ++i) r[i] += mean_[i];
    return r;
  }

  bool operator==(const GaussianBelief& o) const { return mean_ == o.mean_ && cov_ == o.cov_; }

 private:
  Vec mean_;
  Cov cov_;
};

/// Quantized entropy in bits:
///   H = 1/2 log2((2 pi e)^n |Sigma|) - sum_k log2(dz_k).
/// May be negative for quantization steps coarser than the distribution.
inline double quantized_entropy(const Cov& cov, const QuantizationSpec& q) {
  if (cov.dim() != q.dim()) throw DimensionMismatch("quantized_entropy: dimensions disagree");
  double h = 0.5 * (cov.dim() * kLog2TwoPiE + cov.logdet2());
  for (double dz : q.delta_z) h -= std::log2(dz);
  return h;
}

inline double quantized_entropy(const GaussianBelief& b, const QuantizationSpec& q) {
  return quantized_entropy(b.cov(), q);
}

/// Per-dimension quantized entropies from the marginal variances.
inline Vec quantized_entropy_per_dim(const Cov& cov, const QuantizationSpec& q) {
  if (cov.dim() != q.dim())
    throw DimensionMismatch("quantized_entropy_per_dim: dimensions disagree");
  Vec h(cov.dim());
  for (int k = 0; k < cov.dim(); ++k)
    h[k] = 0.5 * std::log2(2.0 * std::numbers::pi * std::numbers::e * cov.diag()[k]) -
           std::log2(q.delta_z[k]);
  return h;
}

/// W1 distance between two one-dimensional empirical distributions: mean
/// absolute difference of order statistics. Unequal sample counts are
/// handled by linear interpolation of the empirical quantile functions.
inline double wasserstein1_1d(Vec samples_a, Vec samples_b) {
  if (samples_a.empty() || samples_b.empty())
    throw EmptyInput("wasserstein1_1d: empty sample set");
  std::sort(samples_a.begin(), samples_a.end());
  std::sort(samples_b.begin(), samples_b.end());
  if (samples_a.size() == samples_b.size()) {
    double s = 0.0;
    for (size_t i = 0; i < samples_a.size(); ++i) s += std::abs(samples_a[i] - samples_b[i]);
    return s / static_cast<double>(samples_a.size());
  }
  // evaluate both quantile functions at the midpoints of a common grid
  const size_t n = std::max(samples_a.size(), samples_b.size());
  auto quantile_at = [](const Vec& s, double u) {
    const double pos = u * static_cast<double>(s.size()) - 0.5;
    if (pos <= 0.0) return s.front();
    if (pos >= static_cast<double>(s.size() - 1)) return s.back();
    const size_t lo = static_cast<size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    return s[lo] + frac * (s[lo + 1] - s[lo]);
  };
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    s += std::abs(quantile_at(samples_a, u) - quantile_at(samples_b, u));
  }
  return s / static_cast<double>(n);
}

}  // namespace infoprop
