#pragma once

#include <algorithm>
#include <utility>

#include "infoprop/fusion.hpp"
#include "infoprop/rng.hpp"

namespace infoprop {

/// The independent standard-normal draws of one transition: process noise w,
/// epistemic noise n, conditional noise u.
struct NoiseDraws {
  Vec w;
  Vec n;
  Vec u;
};

/// One Infoprop transition: the model sample, the Kalman gain, the
/// conditioned belief (tilde mean/cov), and its entropy in bits.
struct InfopropStep {
  Vec model_sample;
  Vec gain_diag;  // diagonal mode: K_k in [0,1]
  Mat gain;       // dense mode
  Vec tilde_mean;
  Cov tilde_cov;
  Vec entropy_per_dim;
  double entropy_total = 0.0;
  Vec propagated_state;  // empty until propagate()

  CovMode mode() const { return tilde_cov.mode(); }
};

/// Member-level TS sample: s_hat = member_mean + member_chol * w.
inline Vec draw_model_sample(const FusedPrediction& fused, const EnsemblePredictions& preds,
                             int member_index, const Vec& w) {
  (void)fused;
  if (member_index < 0 || member_index >= preds.size())
    throw IndexOutOfRange("draw_model_sample: member index out of range");
  return preds.members[member_index].sample(w);
}

/// Condition the fused environment estimate on a model sample via the
/// standard Kalman update:
///   K = sigma_bar (sigma_bar + sigma_delta)^-1
///   tilde_mean = mu_bar + K (s_hat - mu_bar)
///   tilde_cov  = (I - K) sigma_bar   (floored)
/// The innovation form reduces to conditioning on L_bar w + L_delta n when
/// the sample is decomposed that way.
inline InfopropStep condition(const FusedPrediction& fused, const Vec& model_sample,
                              const QuantizationSpec& q) {
  const int n = fused.dim();
  if (static_cast<int>(model_sample.size()) != n)
    throw DimensionMismatch("condition: sample dimension disagrees");
  if (q.dim() != n) throw DimensionMismatch("condition: quantization dimension disagrees");

  InfopropStep step;
  step.model_sample = model_sample;

  if (fused.mode() == CovMode::Diagonal) {
    Vec gain(n), mean(n), var(n);
    for (int k = 0; k < n; ++k) {
      const double sb = fused.sigma_bar.diag()[k];
      const double sd = fused.sigma_delta.diag()[k];
      if (sd == 0.0) {
        // perfect model in this dimension: the sample identifies the state
        gain[k] = 1.0;
        mean[k] = model_sample[k];
        var[k] = 0.0;
        continue;
      }
      const double g = sb / (sb + sd);
      gain[k] = g;
      mean[k] = fused.mu_bar[k] + g * (model_sample[k] - fused.mu_bar[k]);
      var[k] = (1.0 - g) * sb;
    }
    step.gain_diag = std::move(gain);
    step.tilde_mean = std::move(mean);
    step.tilde_cov = Cov::diagonal(std::move(var));
  } else {
    const Mat& sb = fused.sigma_bar.dense_matrix();
    const Mat& sd = fused.sigma_delta.dense_matrix();
    if (max_abs(sd) == 0.0) {
      step.gain = Mat::identity(n);
      step.tilde_mean = model_sample;
      step.tilde_cov = Cov::dense(Mat(n, n));  // floored to the variance floor
    } else {
      Mat innovation_cov = add(sb, sd);
      Mat chol = cholesky_lower(innovation_cov);
      step.gain = transpose(chol_solve_mat(chol, sb));  // K = sigma_bar S^-1
      Vec diff(n);
      for (int i = 0; i < n; ++i) diff[i] = model_sample[i] - fused.mu_bar[i];
      Vec corr = matvec(step.gain, diff);
      Vec mean(n);
      for (int i = 0; i < n; ++i) mean[i] = fused.mu_bar[i] + corr[i];
      step.tilde_mean = std::move(mean);
      step.tilde_cov = Cov::dense(sub(sb, matmul(step.gain, sb)));
    }
  }

  step.entropy_per_dim = quantized_entropy_per_dim(step.tilde_cov, q);
  if (step.mode() == CovMode::Diagonal) {
    double total = 0.0;
    for (double h : step.entropy_per_dim) total += h;
    step.entropy_total = total;
  } else {
    step.entropy_total = quantized_entropy(step.tilde_cov, q);
  }
  return step;
}

/// Realization of the Infoprop state: tilde_mean + tilde_chol * u.
inline Vec propagate(const InfopropStep& step, const Vec& u) {
  Vec r = step.tilde_cov.correlate(u);
  for (size_t i = 0; i < r.size(); ++i) r[i] += step.tilde_mean[i];
  return r;
}

inline InfopropStep condition(const FusedPrediction& fused, const Vec& model_sample,
                              const QuantizationSpec& q, const Vec& u) {
  InfopropStep step = condition(fused, model_sample, q);
  step.propagated_state = propagate(step, u);
  return step;
}

/// One full inner rollout step, marginalized over the member choice and both
/// noise draws: draw member and w, condition on the resulting sample, draw u,
/// return the propagated state. The marginal of this sampler matches the
/// fused environment estimate, which is what the distribution oracle checks.
inline Vec marginal_tilde_sampler(const FusedPrediction& fused, const EnsemblePredictions& preds,
                                  Rng& rng) {
  const int e = static_cast<int>(rng.uniform_index(preds.size()));
  const Vec w = rng.normal_vec(fused.dim());
  const Vec s_hat = draw_model_sample(fused, preds, e, w);
  const QuantizationSpec q = QuantizationSpec::uniform(fused.dim());
  InfopropStep step = condition(fused, s_hat, q);
  return propagate(step, rng.normal_vec(fused.dim()));
}

}  // namespace infoprop
