#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "infoprop/calibration.hpp"
#include "infoprop/oracles.hpp"

using namespace infoprop;

namespace {

SyntheticEnsembleModel spread_model(double member_var, double offset, int members) {
  SyntheticEnsembleModel m;
  m.members = members;
  m.fn = [member_var, offset, members](const Vec& s, const Vec&) {
    std::vector<GaussianBelief> bs;
    for (int e = 0; e < members; ++e) {
      const double side = members == 1 ? 0.0 : (e - 0.5 * (members - 1)) * offset;
      bs.push_back(GaussianBelief::diagonal({s[0] + side}, {member_var}));
    }
    return EnsemblePredictions(std::move(bs));
  };
  return m;
}

TransitionBuffer tiny_buffer(int n, int dim = 1) {
  TransitionBuffer buf;
  for (int i = 0; i < n; ++i) {
    Vec s(dim, 0.1 * i), a = {0.0}, next(dim, 0.1 * i + 0.05);
    buf.push(Transition{s, a, next});
  }
  return buf;
}

// Independent sort-and-scan oracle for the empirical-CDF quantile.
double quantile_oracle(std::vector<double> set, double zeta) {
  std::sort(set.begin(), set.end());
  const double n = static_cast<double>(set.size());
  for (size_t i = 0; i < set.size(); ++i) {
    double cdf = 0.0;
    for (double v : set)
      if (v <= set[i]) cdf += 1.0;
    cdf /= n;
    if (cdf >= zeta) return set[i];
  }
  return set.back();
}

}  // namespace

TEST_CASE("entropy_sets: single-member model yields the floor everywhere") {
  SyntheticEnsembleModel m = spread_model(0.01, 0.0, 1);
  const QuantizationSpec q = QuantizationSpec::uniform(1);
  EntropySets sets = entropy_sets(m, tiny_buffer(9), q, 3);
  CHECK(sets.dim() == 1);
  CHECK(sets.entries() == 9);
  for (double h : sets.per_dim[0]) CHECK(h == floor_entropy_bits(1e-6));
}

TEST_CASE("entropy_sets: shape is dims x buffer entries") {
  SyntheticEnsembleModel m;
  m.members = 2;
  m.fn = [](const Vec& s, const Vec&) {
    std::vector<GaussianBelief> bs;
    bs.push_back(GaussianBelief::diagonal({s[0], s[1]}, {0.01, 0.02}));
    bs.push_back(GaussianBelief::diagonal({s[0] + 0.1, s[1] - 0.1}, {0.01, 0.02}));
    return EnsemblePredictions(std::move(bs));
  };
  EntropySets sets = entropy_sets(m, tiny_buffer(7, 2), QuantizationSpec::uniform(2), 3);
  CHECK(sets.dim() == 2);
  CHECK(sets.per_dim[0].size() == 7);
  CHECK(sets.per_dim[1].size() == 7);
}

TEST_CASE("entropy_sets: constant model matches the closed-form conditioned entropy") {
  const double var = 1e-4, offset = 0.02;
  SyntheticEnsembleModel m = spread_model(var, offset, 2);
  const QuantizationSpec q = QuantizationSpec::uniform(1);
  // two members at +-offset/2: epistemic variance = (offset/2)^2
  const double sd = 0.25 * offset * offset;
  const double gain = var / (var + sd);
  const double tilde = (1.0 - gain) * var;
  const double expect = 0.5 * std::log2(2.0 * std::numbers::pi * std::numbers::e * tilde) -
                        std::log2(1e-6);
  EntropySets sets = entropy_sets(m, tiny_buffer(5), q, 1);
  for (double h : sets.per_dim[0]) CHECK(h == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("entropy_sets: deterministic given the seed and empty buffer rejected") {
  SyntheticEnsembleModel m = spread_model(0.01, 0.05, 3);
  const QuantizationSpec q = QuantizationSpec::uniform(1);
  EntropySets a = entropy_sets(m, tiny_buffer(11), q, 17);
  EntropySets b = entropy_sets(m, tiny_buffer(11), q, 17);
  CHECK(a.per_dim == b.per_dim);
  CHECK_THROWS_AS(entropy_sets(m, TransitionBuffer{}, q, 17), EmptyBuffer);
}

TEST_CASE("entropy_sets: subsampling reduces the entry count") {
  SyntheticEnsembleModel m = spread_model(0.01, 0.05, 3);
  const QuantizationSpec q = QuantizationSpec::uniform(1);
  EntropySets sets = entropy_sets(m, tiny_buffer(100), q, 17, 10);
  CHECK(sets.entries() == 10);
}

TEST_CASE("quantile: spec examples on {1..5}") {
  const std::vector<double> set = {1, 2, 3, 4, 5};
  CHECK(quantile(set, 0.99) == 5.0);
  CHECK(quantile(set, 0.01) == 1.0);
  CHECK(quantile(set, 0.5) == 3.0);
  CHECK(quantile({42.0}, 0.01) == 42.0);
  CHECK(quantile({42.0}, 1.0) == 42.0);
  CHECK_THROWS_AS(quantile({}, 0.5), EmptySet);
  CHECK_THROWS_AS(quantile(set, 0.0), InvalidConfig);
  CHECK_THROWS_AS(quantile(set, 1.5), InvalidConfig);
}

TEST_CASE("quantile: matches the sort-and-scan oracle on sets with ties") {
  Rng rng(23);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> set;
    const int n = 1 + static_cast<int>(rng.uniform_index(40));
    for (int i = 0; i < n; ++i)
      set.push_back(static_cast<double>(rng.uniform_index(8)));  // many duplicates
    const double zeta = std::min(1.0, rng.uniform() + 1e-6);
    CHECK(quantile(set, zeta) == quantile_oracle(set, zeta));
  }
}

TEST_CASE("quantile: monotone in zeta and stable under duplicate insertion") {
  Rng rng(29);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> set;
    for (int i = 0; i < 15; ++i) set.push_back(rng.normal());
    double prev = quantile(set, 0.05);
    for (double z : {0.2, 0.5, 0.8, 0.99}) {
      const double cur = quantile(set, z);
      CHECK(cur >= prev);
      prev = cur;
    }
    const double q50 = quantile(set, 0.5);
    std::vector<double> with_dup = set;
    with_dup.push_back(q50);
    CHECK(quantile(with_dup, 0.5) == q50);
  }
}

TEST_CASE("thresholds: all-equal entropy set gives (h, xi*h)") {
  EntropySets sets;
  sets.per_dim = {{7.5, 7.5, 7.5, 7.5}};
  const QuantizationSpec q = QuantizationSpec::uniform(1);
  Thresholds t = thresholds_from_sets(sets, 0.99, 0.01, 100.0, q);
  CHECK(t.lambda1[0] == 7.5);
  CHECK(t.lambda2[0] == 750.0);
}

TEST_CASE("thresholds: defaults on {1..5} give lambda1=5, lambda2=100") {
  EntropySets sets;
  sets.per_dim = {{1, 2, 3, 4, 5}};
  const QuantizationSpec q = QuantizationSpec::uniform(1);
  Thresholds t = thresholds_from_sets(sets, 0.99, 0.01, 100.0, q);
  CHECK(t.lambda1[0] == 5.0);
  CHECK(t.lambda2[0] == 100.0);
}

TEST_CASE("thresholds: negative entropies exercise the floor clamp") {
  EntropySets sets;
  sets.per_dim = {{-3.0, -2.0, -1.0}};
  const QuantizationSpec q = QuantizationSpec::uniform(1);
  Thresholds t = thresholds_from_sets(sets, 0.99, 0.01, 100.0, q);
  // xi * (-3) = -300 would kill every rollout at step 0; clamp to floor+margin
  CHECK(t.lambda2[0] == floor_entropy_bits(1e-6) + kThresholdMarginBits);
  CHECK(t.lambda1[0] == floor_entropy_bits(1e-6) + kThresholdMarginBits);
  t.validate(q);  // clamped thresholds are valid by construction
}

TEST_CASE("thresholds: lambda1 >= lambda2/xi before clamping (quantile monotonicity)") {
  Rng rng(31);
  const QuantizationSpec q = QuantizationSpec::uniform(1);
  for (int trial = 0; trial < 50; ++trial) {
    EntropySets sets;
    sets.per_dim.push_back({});
    for (int i = 0; i < 25; ++i) sets.per_dim[0].push_back(10.0 + 5.0 * rng.uniform());
    const double xi = 1.0 + 10.0 * rng.uniform();
    const double z2 = 0.01 + 0.4 * rng.uniform();
    const double z1 = z2 + (1.0 - z2) * rng.uniform();
    Thresholds t = thresholds_from_sets(sets, z1, z2, xi, q);
    CHECK(t.lambda1[0] >= t.lambda2[0] / xi - 1e-12);
  }
}

TEST_CASE("thresholds: compute_thresholds is deterministic and json round-trips with the hash") {
  SyntheticEnsembleModel m = spread_model(0.01, 0.04, 3);
  const QuantizationSpec q = QuantizationSpec::uniform(1);
  TransitionBuffer buf = tiny_buffer(30);
  Thresholds a = compute_thresholds(m, buf, 0.99, 0.01, 100.0, q, 5);
  Thresholds b = compute_thresholds(m, buf, 0.99, 0.01, 100.0, q, 5);
  CHECK(a.lambda1 == b.lambda1);
  CHECK(a.lambda2 == b.lambda2);

  nlohmann::ordered_json j = thresholds_to_json(a, "cafe0123");
  Thresholds back = thresholds_from_json(j, "cafe0123");
  CHECK(back.lambda1 == a.lambda1);
  CHECK(back.lambda2 == a.lambda2);
  CHECK_THROWS_AS(thresholds_from_json(j, "deadbeef"), HashMismatch);
}
