#include <doctest.h>

#include <cmath>

#include "infoprop/kernel.hpp"
#include "infoprop/rng.hpp"

using namespace infoprop;

namespace {

FusedPrediction diag_fused(Vec mu, Vec sigma_bar, Vec sigma_delta) {
  FusedPrediction f;
  f.mu_bar = std::move(mu);
  f.sigma_bar = Cov::diagonal(std::move(sigma_bar));
  f.sigma_delta = Cov::diagonal(std::move(sigma_delta), /*floor=*/false);
  return f;
}

EnsemblePredictions equal_var_members(const std::vector<Vec>& means, const Vec& var) {
  std::vector<GaussianBelief> ms;
  for (const Vec& m : means) ms.push_back(GaussianBelief::diagonal(m, var));
  return EnsemblePredictions(std::move(ms));
}

}  // namespace

TEST_CASE("condition: perfect model gives K = I, tilde mean = sample, floor entropy") {
  const QuantizationSpec q = QuantizationSpec::uniform(2);
  FusedPrediction f = diag_fused({0.5, -0.5}, {0.04, 0.09}, {0.0, 0.0});
  InfopropStep step = condition(f, {0.7, -0.1}, q);
  CHECK(step.gain_diag == Vec{1.0, 1.0});
  CHECK(step.tilde_mean == Vec{0.7, -0.1});
  CHECK(step.tilde_cov.diag() == Vec{kVarianceFloor, kVarianceFloor});
  const Vec floor = floor_entropy_bits(q);
  CHECK(step.entropy_per_dim[0] == floor[0]);
  CHECK(step.entropy_per_dim[1] == floor[1]);
}

TEST_CASE("condition: 1-D hand Kalman update") {
  const QuantizationSpec q = QuantizationSpec::uniform(1);
  FusedPrediction f = diag_fused({0.0}, {1.0}, {1.0});
  InfopropStep step = condition(f, {2.0}, q);
  CHECK(step.gain_diag[0] == 0.5);
  CHECK(step.tilde_mean[0] == 1.0);
  CHECK(step.tilde_cov.diag()[0] == 0.5);
  const double expected_h = 0.5 * std::log2(2.0 * std::numbers::pi * std::numbers::e * 0.5) -
                            std::log2(1e-6);
  CHECK(step.entropy_per_dim[0] == doctest::Approx(expected_h).epsilon(1e-14));
  CHECK(step.entropy_total == step.entropy_per_dim[0]);
}

TEST_CASE("condition: zero innovation keeps the fused mean for any gain") {
  const QuantizationSpec q = QuantizationSpec::uniform(1);
  for (double sd : {0.0, 0.3, 5.0}) {
    FusedPrediction f = diag_fused({1.25}, {0.7}, {sd});
    InfopropStep step = condition(f, {1.25}, q);
    CHECK(step.tilde_mean[0] == 1.25);
  }
}

TEST_CASE("draw_model_sample: zero noise or zero variance returns the member mean") {
  auto preds = equal_var_members({{1.0}, {3.0}}, {0.5});
  FusedPrediction f = fuse(preds);
  CHECK(draw_model_sample(f, preds, 1, {0.0}) == Vec{3.0});
  auto tight = equal_var_members({{1.0}, {3.0}}, {0.0});
  CHECK(draw_model_sample(fuse(tight), tight, 0, {0.7})[0] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK_THROWS_AS(draw_model_sample(f, preds, 2, {0.0}), IndexOutOfRange);
  CHECK_THROWS_AS(draw_model_sample(f, preds, -1, {0.0}), IndexOutOfRange);
}

TEST_CASE("draw_model_sample: marginalized mean matches the mixture mean") {
  auto preds = equal_var_members({{-2.0}, {0.0}, {5.0}}, {0.25});
  FusedPrediction f = fuse(preds);
  Rng rng(41);
  const int n = 100000;
  double mean = 0.0;
  for (int i = 0; i < n; ++i) {
    const int e = static_cast<int>(rng.uniform_index(3));
    mean += draw_model_sample(f, preds, e, rng.normal_vec(1))[0];
  }
  mean /= n;
  const double mixture_mean = 1.0;  // (-2 + 0 + 5)/3
  const double mixture_var = 0.25 + ((9.0 + 1.0 + 16.0) / 3.0);
  CHECK(std::abs(mean - mixture_mean) < 3.0 * std::sqrt(mixture_var / n));
}

TEST_CASE("marginal_tilde_sampler: degenerate fused prediction collapses to the mean") {
  auto preds = equal_var_members({{2.0}, {2.0}}, {0.0});
  FusedPrediction f = fuse(preds);
  Rng rng(43);
  for (int i = 0; i < 20; ++i)
    CHECK(marginal_tilde_sampler(f, preds, rng)[0] == doctest::Approx(2.0).epsilon(1e-4));
}

TEST_CASE("marginal_tilde_sampler: variance matches sigma_bar, not sigma_bar + sigma_delta") {
  // the module's central claim: conditioning removes the epistemic variance
  const double var = 1.0;
  auto preds = equal_var_members({{-1.5}, {-0.5}, {0.5}, {1.5}}, {var});
  FusedPrediction f = fuse(preds);
  const double sigma_delta = f.sigma_delta.diag()[0];
  CHECK(sigma_delta == doctest::Approx(1.25).epsilon(1e-12));  // mean of {2.25,0.25,0.25,2.25}
  Rng rng(47);
  const int n = 200000;
  double mean = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double s = marginal_tilde_sampler(f, preds, rng)[0];
    mean += s;
    m2 += s * s;
  }
  mean /= n;
  const double sample_var = m2 / n - mean * mean;
  const double se = var * std::sqrt(2.0 / n);
  CHECK(std::abs(sample_var - var) < 4.0 * se);
  CHECK(std::abs(sample_var - (var + sigma_delta)) > 10.0 * se);
}

TEST_CASE("condition: variance never increases, equality only at zero epistemic variance") {
  Rng rng(53);
  const QuantizationSpec q = QuantizationSpec::uniform(3);
  for (int trial = 0; trial < 50; ++trial) {
    Vec sb(3), sd(3);
    for (int k = 0; k < 3; ++k) {
      sb[k] = std::exp(rng.normal());
      sd[k] = rng.uniform() < 0.3 ? 0.0 : std::exp(rng.normal());
    }
    FusedPrediction f = diag_fused({0.0, 0.0, 0.0}, sb, sd);
    InfopropStep step = condition(f, rng.normal_vec(3), q);
    for (int k = 0; k < 3; ++k) {
      CHECK(step.tilde_cov.diag()[k] <= f.sigma_bar.diag()[k]);
      CHECK(step.gain_diag[k] >= 0.0);
      CHECK(step.gain_diag[k] <= 1.0);
      if (sd[k] == 0.0)
        CHECK(step.tilde_cov.diag()[k] == kVarianceFloor);
      else
        CHECK(step.tilde_cov.diag()[k] < f.sigma_bar.diag()[k]);
    }
  }
}

TEST_CASE("condition: innovation form equals the paper's noise-decomposition form") {
  Rng rng(59);
  const QuantizationSpec q = QuantizationSpec::uniform(2);
  for (int trial = 0; trial < 50; ++trial) {
    Vec mu = {rng.normal(), rng.normal()};
    Vec sb = {std::exp(rng.normal()), std::exp(rng.normal())};
    Vec sd = {std::exp(rng.normal()), std::exp(rng.normal())};
    FusedPrediction f = diag_fused(mu, sb, sd);
    const Vec w = rng.normal_vec(2), n = rng.normal_vec(2);
    Vec s_hat(2), decomposed(2);
    for (int k = 0; k < 2; ++k) {
      const double lw = std::sqrt(sb[k]) * w[k] + std::sqrt(sd[k]) * n[k];
      s_hat[k] = mu[k] + lw;
      const double gain = sb[k] / (sb[k] + sd[k]);
      decomposed[k] = mu[k] + gain * lw;
    }
    InfopropStep step = condition(f, s_hat, q);
    for (int k = 0; k < 2; ++k)
      CHECK(step.tilde_mean[k] == doctest::Approx(decomposed[k]).epsilon(1e-12));
  }
}

TEST_CASE("condition: dense mode matches a closed-form 2x2 solution") {
  // independent closed form via the 2x2 inverse
  Mat sb(2, 2), sd(2, 2);
  sb(0, 0) = 1.0;
  sb(0, 1) = 0.3;
  sb(1, 0) = 0.3;
  sb(1, 1) = 0.5;
  sd(0, 0) = 0.4;
  sd(0, 1) = -0.1;
  sd(1, 0) = -0.1;
  sd(1, 1) = 0.2;
  FusedPrediction f;
  f.mu_bar = {1.0, -1.0};
  f.sigma_bar = Cov::dense(sb);
  f.sigma_delta = Cov::dense(sd, /*floor=*/false);
  const Vec s_hat = {2.0, 0.0};

  Mat s = add(sb, sd);
  const double det = s(0, 0) * s(1, 1) - s(0, 1) * s(1, 0);
  Mat sinv(2, 2);
  sinv(0, 0) = s(1, 1) / det;
  sinv(1, 1) = s(0, 0) / det;
  sinv(0, 1) = -s(0, 1) / det;
  sinv(1, 0) = -s(1, 0) / det;
  Mat gain = matmul(sb, sinv);
  Vec innovation = {s_hat[0] - f.mu_bar[0], s_hat[1] - f.mu_bar[1]};
  Vec expect_mean = matvec(gain, innovation);
  expect_mean[0] += f.mu_bar[0];
  expect_mean[1] += f.mu_bar[1];
  Mat expect_cov = sub(sb, matmul(gain, sb));

  const QuantizationSpec q = QuantizationSpec::uniform(2);
  InfopropStep step = condition(f, s_hat, q);
  for (int k = 0; k < 2; ++k)
    CHECK(step.tilde_mean[k] == doctest::Approx(expect_mean[k]).epsilon(1e-12));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      CHECK(step.tilde_cov.dense_matrix()(i, j) ==
            doctest::Approx(0.5 * (expect_cov(i, j) + expect_cov(j, i))).epsilon(1e-12));
  // dense-mode total entropy is the joint, not the sum of marginals
  CHECK(step.entropy_total == doctest::Approx(quantized_entropy(step.tilde_cov, q)).epsilon(1e-14));
}

TEST_CASE("propagate: deterministic given the conditional noise") {
  const QuantizationSpec q = QuantizationSpec::uniform(1);
  FusedPrediction f = diag_fused({0.0}, {1.0}, {1.0});
  InfopropStep step = condition(f, {2.0}, q, {0.5});
  CHECK(step.propagated_state[0] == doctest::Approx(1.0 + std::sqrt(0.5) * 0.5).epsilon(1e-15));
}
