#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "infoprop/calibration.hpp"
#include "infoprop/rollout.hpp"

namespace infoprop {

/// Closed-form ensemble stand-in for oracle and test rollouts: any callable
/// producing per-member predictive Gaussians at (s, a).
struct SyntheticEnsembleModel {
  int members = 0;
  std::function<EnsemblePredictions(const Vec&, const Vec&)> fn;

  EnsemblePredictions predict(const Vec& s, const Vec& a) const { return fn(s, a); }
  int ensemble_size() const { return members; }
};

namespace oracle_detail {

// The oracle side computes with its own primitives: local factorization,
// local sampling, local W1. It never routes through the conditioning path it
// is checking.

inline Mat local_cholesky(const Mat& spd) {
  const int n = spd.rows;
  Mat l(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = spd(i, j);
      for (int k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      if (i == j) {
        if (s <= 0.0) throw SingularJoint("oracle cholesky: non-positive pivot");
        l(i, i) = std::sqrt(s);
      } else {
        l(i, j) = s / l(j, j);
      }
    }
  }
  return l;
}

inline Vec local_chol_solve(const Mat& l, Vec b) {
  const int n = l.rows;
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < i; ++k) b[i] -= l(i, k) * b[k];
    b[i] /= l(i, i);
  }
  for (int i = n - 1; i >= 0; --i) {
    for (int k = i + 1; k < n; ++k) b[i] -= l(k, i) * b[k];
    b[i] /= l(i, i);
  }
  return b;
}

inline double local_w1(Vec a, Vec b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

/// Draw from the fused estimate N(mu_bar, sigma_bar) directly.
inline Vec direct_bar_sample(const FusedPrediction& fused, const Mat* dense_chol, Rng& rng) {
  const int n = fused.dim();
  Vec w = rng.normal_vec(n);
  Vec s(n);
  if (fused.mode() == CovMode::Diagonal) {
    for (int k = 0; k < n; ++k) s[k] = fused.mu_bar[k] + std::sqrt(fused.sigma_bar.diag()[k]) * w[k];
  } else {
    for (int i = 0; i < n; ++i) {
      double acc = fused.mu_bar[i];
      for (int j = 0; j <= i; ++j) acc += (*dense_chol)(i, j) * w[j];
      s[i] = acc;
    }
  }
  return s;
}

/// One Algorithm-style inner step with the innovation gain scaled in the mean
/// update — the deliberately broken conditioner for the oracle's power test.
/// Reimplemented locally so the check stays independent of the kernel.
inline Vec mutated_tilde_sample(const FusedPrediction& fused, const EnsemblePredictions& preds,
                                double gain_scale, Rng& rng) {
  const int n = fused.dim();
  const int e = static_cast<int>(rng.uniform_index(preds.size()));
  const Vec w = rng.normal_vec(n);
  Vec s_hat(n);
  if (preds.mode() == CovMode::Diagonal) {
    for (int k = 0; k < n; ++k)
      s_hat[k] = preds.members[e].mean()[k] + std::sqrt(preds.members[e].var_diag()[k]) * w[k];
  } else {
    const Mat l = local_cholesky(preds.members[e].cov().dense_matrix());
    for (int i = 0; i < n; ++i) {
      double acc = preds.members[e].mean()[i];
      for (int j = 0; j <= i; ++j) acc += l(i, j) * w[j];
      s_hat[i] = acc;
    }
  }
  const Vec u = rng.normal_vec(n);
  Vec out(n);
  if (fused.mode() == CovMode::Diagonal) {
    for (int k = 0; k < n; ++k) {
      const double sb = fused.sigma_bar.diag()[k];
      const double sd = fused.sigma_delta.diag()[k];
      const double gain = sb / (sb + sd);
      const double tilde_var = std::max((1.0 - gain) * sb, kVarianceFloor);
      out[k] = fused.mu_bar[k] + gain_scale * gain * (s_hat[k] - fused.mu_bar[k]) +
               std::sqrt(tilde_var) * u[k];
    }
    return out;
  }
  const Mat& sb = fused.sigma_bar.dense_matrix();
  Mat s_cov = add(sb, fused.sigma_delta.dense_matrix());
  const Mat s_chol = local_cholesky(s_cov);
  Mat gain(n, n);  // K^T columns via solves
  for (int j = 0; j < n; ++j) {
    Vec col(n);
    for (int i = 0; i < n; ++i) col[i] = sb(i, j);
    Vec x = local_chol_solve(s_chol, col);
    for (int i = 0; i < n; ++i) gain(j, i) = x[i];  // K = (S^-1 sigma_bar)^T
  }
  Mat tilde = sub(sb, matmul(gain, sb));
  for (int i = 0; i < n; ++i) tilde(i, i) = std::max(tilde(i, i), kVarianceFloor);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double m = 0.5 * (tilde(i, j) + tilde(j, i));
      tilde(i, j) = m;
      tilde(j, i) = m;
    }
  const Mat tilde_chol = local_cholesky(tilde);
  Vec diff(n);
  for (int i = 0; i < n; ++i) diff[i] = s_hat[i] - fused.mu_bar[i];
  const Vec corr = matvec(gain, diff);
  for (int i = 0; i < n; ++i) {
    double acc = fused.mu_bar[i] + gain_scale * corr[i];
    for (int j = 0; j <= i; ++j) acc += tilde_chol(i, j) * u[j];
    out[i] = acc;
  }
  return out;
}

}  // namespace oracle_detail

struct Theorem1Report {
  Vec w1_per_dim;
  Vec bound_per_dim;
  int samples = 0;
  double gain_scale = 1.0;
  bool pass = false;

  nlohmann::ordered_json to_json() const {
    return {{"oracle", "theorem1_distribution"},
            {"samples", samples},
            {"gain_scale", gain_scale},
            {"w1_per_dim", w1_per_dim},
            {"bound_per_dim", bound_per_dim},
            {"pass", pass}};
  }
};

/// Distribution identity check: N propagated samples obtained by
/// marginalizing the conditioned state over model samples, against N direct
/// draws from the fused estimate. Per-dimension W1 must stay below
/// 8 * sigma_bar_k / sqrt(N). gain_scale != 1 routes the propagated side
/// through the broken conditioner instead, which must push W1 past the bound.
inline Theorem1Report oracle_theorem1_distribution(const FusedPrediction& fused,
                                                   const EnsemblePredictions& preds, int n_samples,
                                                   Rng& rng, double gain_scale = 1.0) {
  if (n_samples < 10000) throw InvalidConfig("oracle_theorem1_distribution: need N >= 1e4");
  const int n = fused.dim();
  std::vector<Vec> tilde(n, Vec(n_samples)), bar(n, Vec(n_samples));
  Mat dense_chol;
  if (fused.mode() == CovMode::Dense)
    dense_chol = oracle_detail::local_cholesky(fused.sigma_bar.dense_matrix());
  for (int i = 0; i < n_samples; ++i) {
    const Vec t = gain_scale == 1.0
                      ? marginal_tilde_sampler(fused, preds, rng)
                      : oracle_detail::mutated_tilde_sample(fused, preds, gain_scale, rng);
    const Vec b = oracle_detail::direct_bar_sample(fused, &dense_chol, rng);
    for (int k = 0; k < n; ++k) {
      tilde[k][i] = t[k];
      bar[k][i] = b[k];
    }
  }
  Theorem1Report rep;
  rep.samples = n_samples;
  rep.gain_scale = gain_scale;
  rep.w1_per_dim.resize(n);
  rep.bound_per_dim.resize(n);
  rep.pass = true;
  for (int k = 0; k < n; ++k) {
    rep.w1_per_dim[k] = oracle_detail::local_w1(std::move(tilde[k]), std::move(bar[k]));
    rep.bound_per_dim[k] =
        8.0 * std::sqrt(fused.sigma_bar.diag()[k]) / std::sqrt(static_cast<double>(n_samples));
    if (rep.w1_per_dim[k] > rep.bound_per_dim[k]) rep.pass = false;
  }
  return rep;
}

struct AdditivityReport {
  double lhs_bits = 0.0;
  double rhs_bits = 0.0;
  double diff = 0.0;
  bool pass = false;

  nlohmann::ordered_json to_json() const {
    return {{"oracle", "entropy_additivity"},
            {"lhs_bits", lhs_bits},
            {"rhs_bits", rhs_bits},
            {"abs_diff", diff},
            {"pass", pass}};
  }
};

/// Joint conditional entropy of a realized rollout: the block-diagonal joint
/// Gaussian of all per-step conditioned covariances must carry exactly the
/// summed per-step entropies (steps are conditionally independent Gaussians).
inline AdditivityReport oracle_entropy_additivity(const Trajectory& traj,
                                                  const QuantizationSpec& q,
                                                  double tol_bits = 1e-9) {
  if (traj.steps.empty()) throw EmptyInput("oracle_entropy_additivity: empty trajectory");
  const int n = q.dim();
  const int t_len = static_cast<int>(traj.steps.size());

  Mat joint(n * t_len, n * t_len);
  double rhs = 0.0;
  for (int t = 0; t < t_len; ++t) {
    if (!traj.steps[t].tilde_cov)
      throw EmptyInput("oracle_entropy_additivity: trajectory lacks recorded tilde covariances");
    const Cov& c = *traj.steps[t].tilde_cov;
    if (c.mode() == CovMode::Diagonal) {
      for (int k = 0; k < n; ++k) joint(t * n + k, t * n + k) = c.diag()[k];
      for (double h : traj.steps[t].entropy_per_dim) rhs += h;
    } else {
      const Mat& m = c.dense_matrix();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) joint(t * n + i, t * n + j) = m(i, j);
      rhs += quantized_entropy(c, q);
    }
  }

  const Mat l = oracle_detail::local_cholesky(joint);
  double logdet2 = 0.0;
  for (int i = 0; i < l.rows; ++i) logdet2 += std::log2(l(i, i));
  logdet2 *= 2.0;
  double lhs = 0.5 * (n * t_len * kLog2TwoPiE + logdet2);
  for (int t = 0; t < t_len; ++t)
    for (double dz : q.delta_z) lhs -= std::log2(dz);

  AdditivityReport rep;
  rep.lhs_bits = lhs;
  rep.rhs_bits = rhs;
  rep.diff = std::abs(lhs - rhs);
  rep.pass = rep.diff <= tol_bits;
  return rep;
}

/// Exact generalized-least-squares fusion given the full joint covariance of
/// all members, including cross-covariances (knowable only for constructed
/// cases). h_scale != 1 injects a wrong observation matrix for the oracle's
/// own power test.
inline std::pair<Vec, Mat> oracle_kalman_fusion_dense(const std::vector<Vec>& member_means,
                                                      const Mat& joint_cov,
                                                      double h_scale = 1.0) {
  if (member_means.empty()) throw EmptyInput("oracle_kalman_fusion_dense: no members");
  const int e_count = static_cast<int>(member_means.size());
  const int n = static_cast<int>(member_means.front().size());
  if (joint_cov.rows != n * e_count || joint_cov.cols != n * e_count)
    throw DimensionMismatch("oracle_kalman_fusion_dense: joint covariance shape disagrees");

  Mat l;
  try {
    l = oracle_detail::local_cholesky(joint_cov);
  } catch (const SingularJoint&) {
    throw;
  }

  // stacked means and observation matrix H = [I; ...; I] * h_scale
  Vec stacked(n * e_count);
  for (int e = 0; e < e_count; ++e)
    for (int k = 0; k < n; ++k) stacked[e * n + k] = member_means[e][k];

  // M = H^T J^-1 H, b = H^T J^-1 mu_hat
  Mat m(n, n);
  Vec b(n, 0.0);
  for (int k = 0; k < n; ++k) {
    Vec h_col(n * e_count, 0.0);
    for (int e = 0; e < e_count; ++e) h_col[e * n + k] = h_scale;
    const Vec x = oracle_detail::local_chol_solve(l, h_col);
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int e = 0; e < e_count; ++e) s += h_scale * x[e * n + j];
      m(j, k) = s;
    }
    double s = 0.0;
    for (int i = 0; i < n * e_count; ++i) s += x[i] * stacked[i];
    b[k] = s;
  }

  Mat ml;
  try {
    ml = oracle_detail::local_cholesky(m);
  } catch (const SingularJoint&) {
    throw;
  }
  const Vec mu = oracle_detail::local_chol_solve(ml, b);
  Mat sigma(n, n);
  for (int j = 0; j < n; ++j) {
    Vec ej(n, 0.0);
    ej[j] = 1.0;
    const Vec col = oracle_detail::local_chol_solve(ml, ej);
    for (int i = 0; i < n; ++i) sigma(i, j) = col[i];
  }
  return {mu, sigma};
}

/// Construct an ensemble with equal member variances whose epistemic-to-
/// aleatoric ratio is (approximately) the requested one; the fused estimate
/// comes from the real fusion path.
inline std::pair<EnsemblePredictions, FusedPrediction> synthetic_fused_case(int dim, int members,
                                                                            double ratio,
                                                                            Rng& rng) {
  Vec base_mean(dim), base_var(dim);
  for (int k = 0; k < dim; ++k) {
    base_mean[k] = 4.0 * (rng.uniform() - 0.5);
    base_var[k] = std::exp(2.0 * (rng.uniform() - 0.5));
  }
  std::vector<Vec> means(members, base_mean);
  if (ratio > 0.0) {
    for (int k = 0; k < dim; ++k) {
      Vec dev(members);
      double mean_dev = 0.0;
      for (int e = 0; e < members; ++e) {
        dev[e] = rng.normal();
        mean_dev += dev[e];
      }
      mean_dev /= members;
      double spread = 0.0;
      for (int e = 0; e < members; ++e) {
        dev[e] -= mean_dev;
        spread += dev[e] * dev[e];
      }
      spread = std::sqrt(spread / members);
      const double target = ratio * std::sqrt(base_var[k]);
      for (int e = 0; e < members; ++e)
        means[e][k] = base_mean[k] + (spread > 0.0 ? dev[e] * target / spread : 0.0);
    }
  }
  std::vector<GaussianBelief> beliefs;
  for (int e = 0; e < members; ++e) beliefs.emplace_back(GaussianBelief::diagonal(means[e], base_var));
  EnsemblePredictions preds(std::move(beliefs));
  FusedPrediction fused = fuse(preds);
  return {std::move(preds), std::move(fused)};
}

/// The full verification bundle: distribution oracle across dimensions and
/// epistemic ratios (plus the broken-conditioner power check), entropy
/// additivity on random rollouts, and the CI-vs-Kalman conservatism identity.
inline nlohmann::ordered_json run_verification(uint64_t seed, int n_samples = 50000) {
  nlohmann::ordered_json checks = nlohmann::ordered_json::array();
  bool all_pass = true;

  const double ratios[] = {0.0, 0.5, 1.0, 2.0};
  int case_idx = 0;
  for (int dim : {1, 2}) {
    for (double ratio : ratios) {
      for (int rep = 0; rep < 2; ++rep) {
        Rng case_rng(derive_seed(seed, "verify-case", case_idx));
        auto [preds, fused] = synthetic_fused_case(dim, 5 + (case_idx % 4), ratio, case_rng);
        Rng sample_rng(derive_seed(seed, "verify-samples", case_idx));
        Theorem1Report rep1 = oracle_theorem1_distribution(fused, preds, n_samples, sample_rng);
        nlohmann::ordered_json jc = rep1.to_json();
        jc["dim"] = dim;
        jc["ratio"] = ratio;
        jc["case_seed"] = derive_seed(seed, "verify-case", case_idx);
        checks.push_back(jc);
        all_pass = all_pass && rep1.pass;
        ++case_idx;
      }
    }
  }

  // power check: the halved innovation gain must fail the same bound
  {
    Rng case_rng(derive_seed(seed, "verify-mutation", 0));
    auto [preds, fused] = synthetic_fused_case(1, 5, 1.0, case_rng);
    Rng sample_rng(derive_seed(seed, "verify-mutation-samples", 0));
    Theorem1Report rep1 = oracle_theorem1_distribution(fused, preds, n_samples, sample_rng, 0.5);
    nlohmann::ordered_json jc = rep1.to_json();
    jc["expected"] = "fail";
    jc["power_ok"] = !rep1.pass;
    checks.push_back(jc);
    all_pass = all_pass && !rep1.pass;
  }

  // entropy additivity on random-length synthetic rollouts
  {
    const QuantizationSpec q = QuantizationSpec::uniform(1);
    for (int i = 0; i < 10; ++i) {
      Rng rng(derive_seed(seed, "verify-additivity", i));
      SyntheticEnsembleModel model;
      model.members = 4;
      const double member_var = 0.5 + rng.uniform();
      const double spread = 0.2 + rng.uniform();
      model.fn = [member_var, spread](const Vec& s, const Vec&) {
        std::vector<GaussianBelief> bs;
        for (int e = 0; e < 4; ++e)
          bs.push_back(GaussianBelief::diagonal({s[0] + spread * (e - 1.5)}, {member_var}));
        return EnsemblePredictions(std::move(bs));
      };
      const int horizon = 1 + static_cast<int>(rng.uniform_index(50));
      Trajectory traj = infoprop_rollout(model, gaussian_policy(1, 0.1, NoiseKind::Variance),
                                         {0.0}, horizon, Thresholds::unbounded(1), q, rng);
      AdditivityReport rep2 = oracle_entropy_additivity(traj, q);
      nlohmann::ordered_json jc = rep2.to_json();
      jc["steps"] = traj.steps.size();
      checks.push_back(jc);
      all_pass = all_pass && rep2.pass;
    }
  }

  // CI conservatism: for E independent equal members, Kalman variance is
  // member/E while CI keeps the member variance
  {
    const int e_count = 4;
    const double var = 2.0;
    std::vector<Vec> means;
    for (int e = 0; e < e_count; ++e) means.push_back({0.5 * e});
    Mat joint(e_count, e_count);
    for (int e = 0; e < e_count; ++e) joint(e, e) = var;
    auto [mu_k, sigma_k] = oracle_kalman_fusion_dense(means, joint);
    std::vector<GaussianBelief> beliefs;
    for (int e = 0; e < e_count; ++e) beliefs.push_back(GaussianBelief::diagonal(means[e], {var}));
    auto [mu_ci, sigma_ci] = ci_fuse(EnsemblePredictions(std::move(beliefs)));
    const bool ok = std::abs(sigma_ci.diag()[0] - e_count * sigma_k(0, 0)) < 1e-9 &&
                    std::abs(mu_k[0] - mu_ci[0]) < 1e-9;
    checks.push_back({{"oracle", "kalman_fusion_conservatism"},
                      {"kalman_var", sigma_k(0, 0)},
                      {"ci_var", sigma_ci.diag()[0]},
                      {"factor", sigma_ci.diag()[0] / sigma_k(0, 0)},
                      {"pass", ok}});
    all_pass = all_pass && ok;
  }

  nlohmann::ordered_json report;
  report["seed"] = seed;
  report["pass"] = all_pass;
  report["checks"] = checks;
  return report;
}

}  // namespace infoprop
