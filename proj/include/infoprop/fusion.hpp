#pragma once

#include <algorithm>
#include <utility>
#include <vector>

#include "infoprop/gaussian.hpp"

namespace infoprop {

/// Per-member predictive Gaussians at a single (state, action). All members
/// must share dimension and covariance mode.
struct EnsemblePredictions {
  std::vector<GaussianBelief> members;

  explicit EnsemblePredictions(std::vector<GaussianBelief> m) : members(std::move(m)) {
    if (members.empty()) throw EmptyInput("EnsemblePredictions: no members");
    for (const auto& b : members) {
      if (b.dim() != members.front().dim())
        throw DimensionMismatch("EnsemblePredictions: members disagree on dimension");
      if (b.mode() != members.front().mode())
        throw DimensionMismatch("EnsemblePredictions: members disagree on covariance mode");
    }
  }

  int size() const { return static_cast<int>(members.size()); }
  int dim() const { return members.front().dim(); }
  CovMode mode() const { return members.front().mode(); }
};

/// Signal/noise decomposition of the ensemble's predictive spread: the fused
/// environment estimate (mu_bar, sigma_bar) and the epistemic variance
/// sigma_delta. Member means are retained for member-level sampling and
/// diagnostics.
struct FusedPrediction {
  Vec mu_bar;
  Cov sigma_bar;
  Cov sigma_delta;  // unfloored; exactly zero when members agree
  std::vector<Vec> member_means;

  int dim() const { return static_cast<int>(mu_bar.size()); }
  CovMode mode() const { return sigma_bar.mode(); }
  GaussianBelief bar_belief() const { return GaussianBelief(mu_bar, sigma_bar); }
};

namespace detail {

inline bool all_members_identical(const EnsemblePredictions& preds) {
  for (int e = 1; e < preds.size(); ++e)
    if (!(preds.members[e] == preds.members[0])) return false;
  return true;
}

}  // namespace detail

/// Covariance intersection fusion with uniform weights 1/E:
///   sigma_bar = (mean_e prec_e)^-1,  mu_bar = sigma_bar * mean_e(prec_e mu_e).
/// Member sums are accumulated in sorted order, so any reordering of members
/// produces bitwise-identical output; agreeing members fuse to themselves
/// exactly.
inline std::pair<Vec, Cov> ci_fuse(const EnsemblePredictions& preds) {
  const int e_count = preds.size();
  const int n = preds.dim();

  if (detail::all_members_identical(preds)) {
    const auto& m = preds.members.front();
    return {m.mean(), m.cov()};
  }

  if (preds.mode() == CovMode::Diagonal) {
    Vec var(n), mu(n);
    std::vector<double> precs(e_count), weighted(e_count);
    for (int k = 0; k < n; ++k) {
      for (int e = 0; e < e_count; ++e) {
        const double p = 1.0 / preds.members[e].var_diag()[k];
        precs[e] = p;
        weighted[e] = p * preds.members[e].mean()[k];
      }
      const double mean_prec = sorted_sum(precs) / e_count;
      if (!(mean_prec > 0.0)) throw SingularPrecision("ci_fuse: non-positive mean precision");
      var[k] = 1.0 / mean_prec;
      mu[k] = (sorted_sum(weighted) / e_count) / mean_prec;
    }
    return {std::move(mu), Cov::diagonal(std::move(var))};
  }

  // dense: mean precision matrix and precision-weighted means, entrywise
  Mat mean_prec(n, n);
  Vec rhs(n, 0.0);
  std::vector<Mat> member_prec(e_count);
  std::vector<Vec> member_pm(e_count);
  for (int e = 0; e < e_count; ++e) {
    member_prec[e] = spd_inverse(preds.members[e].cov().dense_matrix());
    member_pm[e] = matvec(member_prec[e], preds.members[e].mean());
  }
  std::vector<double> terms(e_count);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      for (int e = 0; e < e_count; ++e) terms[e] = member_prec[e](i, j);
      mean_prec(i, j) = sorted_sum(terms) / e_count;
    }
    for (int e = 0; e < e_count; ++e) terms[e] = member_pm[e][i];
    rhs[i] = sorted_sum(terms) / e_count;
  }
  Mat prec_chol = cholesky_lower(mean_prec);
  Vec mu = chol_solve(prec_chol, rhs);
  Mat sigma = chol_solve_mat(prec_chol, Mat::identity(n));
  return {std::move(mu), Cov::dense(std::move(sigma))};
}

/// Maximum-likelihood epistemic variance: the mean outer product of member
/// mean deviations about the fused mean. Not floored; identical members give
/// exactly zero.
inline Cov epistemic_variance(const EnsemblePredictions& preds, const Vec& mu_bar) {
  const int e_count = preds.size();
  const int n = preds.dim();
  if (static_cast<int>(mu_bar.size()) != n)
    throw DimensionMismatch("epistemic_variance: mu_bar dimension disagrees");
  std::vector<double> terms(e_count);
  if (preds.mode() == CovMode::Diagonal) {
    Vec var(n);
    for (int k = 0; k < n; ++k) {
      for (int e = 0; e < e_count; ++e) {
        const double d = preds.members[e].mean()[k] - mu_bar[k];
        terms[e] = d * d;
      }
      var[k] = sorted_sum(terms) / e_count;
    }
    return Cov::diagonal(std::move(var), /*floor=*/false);
  }
  Mat m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      for (int e = 0; e < e_count; ++e) {
        const Vec& mean = preds.members[e].mean();
        terms[e] = (mean[i] - mu_bar[i]) * (mean[j] - mu_bar[j]);
      }
      m(i, j) = sorted_sum(terms) / e_count;
    }
  return Cov::dense(std::move(m), /*floor=*/false);
}

/// One fuse per rollout step: CI fusion followed by the epistemic estimate.
inline FusedPrediction fuse(const EnsemblePredictions& preds) {
  auto [mu, sigma] = ci_fuse(preds);
  Cov delta = epistemic_variance(preds, mu);
  std::vector<Vec> means;
  means.reserve(preds.size());
  for (const auto& b : preds.members) means.push_back(b.mean());
  return FusedPrediction{std::move(mu), std::move(sigma), std::move(delta), std::move(means)};
}

}  // namespace infoprop
