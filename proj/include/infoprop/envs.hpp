#pragma once

#include <functional>
#include <utility>

#include "infoprop/dataset.hpp"
#include "infoprop/gaussian.hpp"
#include "infoprop/rng.hpp"

namespace infoprop {

using PolicySampler = std::function<Vec(const Vec& state, Rng& rng)>;
using TerminalFn = std::function<bool(const Vec& state)>;

/// Ground-truth dynamics with analytically known mean and noise Cholesky
/// factor: s' = mean_fn(s,a) + noise_chol_fn(s,a) * w.
struct SyntheticEnv {
  int dim = 0;
  int action_dim = 0;
  std::function<Vec(const Vec&, const Vec&)> mean_fn;
  std::function<Mat(const Vec&, const Vec&)> noise_chol_fn;
  TerminalFn terminal_fn;  // optional; empty = no terminal states
  Vec start_state;

  Vec step(const Vec& s, const Vec& a, Rng& rng) const {
    Vec next = mean_fn(s, a);
    const Vec noise = matvec(noise_chol_fn(s, a), rng.normal_vec(dim));
    for (int k = 0; k < dim; ++k) next[k] += noise[k];
    return next;
  }
};

/// Whether a scalar noise parameter names a variance or a standard deviation.
enum class NoiseKind { Variance, StdDev };

/// Zero-mean Gaussian policy.
inline PolicySampler gaussian_policy(int action_dim, double noise, NoiseKind kind) {
  const double stddev = kind == NoiseKind::Variance ? std::sqrt(noise) : noise;
  return [action_dim, stddev](const Vec&, Rng& rng) {
    Vec a(action_dim);
    for (int k = 0; k < action_dim; ++k) a[k] = stddev * rng.normal();
    return a;
  };
}

/// 1-D random walk: mu(s,a) = s + a, constant noise Cholesky factor.
inline SyntheticEnv random_walk_env(double noise_std = 0.01, double start = 0.0) {
  SyntheticEnv env;
  env.dim = 1;
  env.action_dim = 1;
  env.start_state = {start};
  env.mean_fn = [](const Vec& s, const Vec& a) { return Vec{s[0] + a[0]}; };
  env.noise_chol_fn = [noise_std](const Vec&, const Vec&) {
    Mat l(1, 1);
    l(0, 0) = noise_std;
    return l;
  };
  return env;
}

/// 2-D linear-Gaussian system s' = A s + B a + L w with a correlated noise
/// factor. Not part of the toy task; exists to exercise dense covariances
/// and multi-dimensional thresholds.
inline SyntheticEnv linear2d_env() {
  SyntheticEnv env;
  env.dim = 2;
  env.action_dim = 1;
  env.start_state = {0.0, 0.0};
  env.mean_fn = [](const Vec& s, const Vec& a) {
    return Vec{0.9 * s[0] + 0.1 * s[1] + 1.0 * a[0], -0.05 * s[0] + 0.95 * s[1] + 0.5 * a[0]};
  };
  env.noise_chol_fn = [](const Vec&, const Vec&) {
    Mat l(2, 2);
    l(0, 0) = 0.02;
    l(1, 0) = 0.005;
    l(1, 1) = 0.015;
    return l;
  };
  return env;
}

/// Flattened transitions from n_rollouts rollouts of length horizon each.
inline TransitionBuffer generate_dataset(const SyntheticEnv& env, const PolicySampler& policy,
                                         int n_rollouts, int horizon, uint64_t master_seed) {
  TransitionBuffer buffer;
  for (int r = 0; r < n_rollouts; ++r) {
    Rng rng(derive_seed(master_seed, "env-rollout", r));
    Vec s = env.start_state;
    for (int t = 0; t < horizon; ++t) {
      const Vec a = policy(s, rng);
      Vec next = env.step(s, a, rng);
      buffer.push(Transition{s, a, next});
      if (env.terminal_fn && env.terminal_fn(next)) break;
      s = std::move(next);
    }
  }
  return buffer;
}

}  // namespace infoprop
