#include <doctest.h>

#include <cmath>

#include "infoprop/oracles.hpp"
#include "infoprop/rollout.hpp"

using namespace infoprop;

namespace {

// E members around the current state with fixed offsets and a shared
// variance: constant gain and constant per-step entropy everywhere.
SyntheticEnsembleModel constant_entropy_model(double member_var, double offset, int members = 2) {
  SyntheticEnsembleModel m;
  m.members = members;
  m.fn = [member_var, offset, members](const Vec& s, const Vec& a) {
    std::vector<GaussianBelief> bs;
    const int n = static_cast<int>(s.size());
    for (int e = 0; e < members; ++e) {
      Vec mean(n);
      const double side = members == 1 ? 0.0 : (e - 0.5 * (members - 1)) * offset;
      for (int k = 0; k < n; ++k) mean[k] = s[k] + (a.empty() ? 0.0 : a[k % a.size()]) + side;
      bs.push_back(GaussianBelief::diagonal(std::move(mean), Vec(n, member_var)));
    }
    return EnsemblePredictions(std::move(bs));
  };
  return m;
}

PolicySampler zero_policy() {
  return [](const Vec&, Rng&) { return Vec{0.0}; };
}

double constant_step_entropy(const SyntheticEnsembleModel& model, const QuantizationSpec& q) {
  const EnsemblePredictions preds = model.predict({0.0}, {0.0});
  const FusedPrediction fused = fuse(preds);
  return condition(fused, fused.mu_bar, q).entropy_per_dim[0];
}

}  // namespace

TEST_CASE("ts_rollout: horizon 1 yields a single transition") {
  SyntheticEnsembleModel m = constant_entropy_model(0.01, 0.1);
  Rng rng(1);
  Trajectory t = ts_rollout(m, zero_policy(), {0.0}, 1, QuantizationSpec::uniform(1), rng);
  CHECK(t.steps.size() == 1);
  CHECK(t.num_states() == 2);
  CHECK(t.termination == TerminationReason::MaxLength);
  CHECK(t.mechanism == Mechanism::TS);
}

TEST_CASE("ts_rollout: zero-variance single-member identity model stays put") {
  SyntheticEnsembleModel m;
  m.members = 1;
  m.fn = [](const Vec& s, const Vec&) {
    return EnsemblePredictions({GaussianBelief::diagonal(s, {0.0})});
  };
  Rng rng(2);
  Trajectory t = ts_rollout(m, zero_policy(), {0.5}, 100, QuantizationSpec::uniform(1), rng);
  CHECK(t.steps.size() == 100);
  CHECK(std::abs(t.steps.back().next_state[0] - 0.5) < 1e-4);
}

TEST_CASE("infoprop_rollout: huge thresholds run to the horizon with floor entropies") {
  SyntheticEnsembleModel m = constant_entropy_model(0.01, 0.0, 1);  // perfect single member
  Rng rng(3);
  const QuantizationSpec q = QuantizationSpec::uniform(1);
  Trajectory t = infoprop_rollout(m, zero_policy(), {0.0}, 50, Thresholds::unbounded(1), q, rng);
  CHECK(t.steps.size() == 50);
  CHECK(t.termination == TerminationReason::MaxLength);
  const double floor = floor_entropy_bits(1e-6);
  for (const auto& s : t.steps) CHECK(s.entropy_per_dim[0] == floor);
}

TEST_CASE("infoprop_rollout: cumulative threshold cuts at exactly floor(lambda2/h) transitions") {
  SyntheticEnsembleModel m = constant_entropy_model(1e-4, 0.02);
  const QuantizationSpec q = QuantizationSpec::uniform(1);
  const double h = constant_step_entropy(m, q);
  CHECK(h > 0.0);
  for (int steps_allowed : {1, 3, 7, 20}) {
    Thresholds th;
    th.lambda1 = {1e18};
    th.lambda2 = {steps_allowed * h + 0.5 * h};
    Rng rng(100 + steps_allowed);
    Trajectory t = infoprop_rollout(m, zero_policy(), {0.0}, 200, th, q, rng);
    CHECK(t.steps.size() == static_cast<size_t>(steps_allowed));
    CHECK(t.num_states() == static_cast<size_t>(steps_allowed) + 1);
    CHECK(t.termination == TerminationReason::CumulativeExceeded);
    CHECK(t.termination_dim == 0);
    // the recorded cumulative entropy still respects the threshold
    CHECK(t.steps.back().cumulative_entropy_per_dim[0] <= th.lambda2[0]);
  }
}

TEST_CASE("infoprop_rollout: entropy exactly at lambda1 does not terminate (strict >)") {
  SyntheticEnsembleModel m = constant_entropy_model(1e-4, 0.02);
  const QuantizationSpec q = QuantizationSpec::uniform(1);
  const double h = constant_step_entropy(m, q);
  Thresholds th;
  th.lambda1 = {h};  // boundary: equality must not break
  th.lambda2 = {1e18};
  Rng rng(4);
  Trajectory t = infoprop_rollout(m, zero_policy(), {0.0}, 30, th, q, rng);
  CHECK(t.termination == TerminationReason::MaxLength);
  CHECK(t.steps.size() == 30);

  // one ulp below the boundary terminates immediately
  th.lambda1 = {std::nextafter(h, 0.0)};
  Rng rng2(4);
  Trajectory t2 = infoprop_rollout(m, zero_policy(), {0.0}, 30, th, q, rng2);
  CHECK(t2.termination == TerminationReason::SingleStepExceeded);
  CHECK(t2.steps.empty());
}

TEST_CASE("infoprop_rollout: cumulative entropy is the exact prefix sum") {
  SyntheticEnsembleModel m = constant_entropy_model(0.05, 0.1, 3);
  Rng rng(5);
  const QuantizationSpec q = QuantizationSpec::uniform(1);
  Trajectory t = infoprop_rollout(m, gaussian_policy(1, 0.1, NoiseKind::Variance), {0.0}, 40,
                                  Thresholds::unbounded(1), q, rng);
  double run = 0.0;
  for (const auto& s : t.steps) {
    run += s.entropy_per_dim[0];
    CHECK(s.cumulative_entropy_per_dim[0] == run);
  }
}

TEST_CASE("infoprop_rollout: raising lambda2 never shortens a trajectory on the same stream") {
  SyntheticEnsembleModel m = constant_entropy_model(1e-4, 0.02);
  const QuantizationSpec q = QuantizationSpec::uniform(1);
  const double h = constant_step_entropy(m, q);
  std::vector<size_t> lengths;
  for (double mult : {5.0, 8.0, 12.0}) {
    Thresholds th;
    th.lambda1 = {1e18};
    th.lambda2 = {mult * h + 0.25 * h};
    Rng rng(6);
    lengths.push_back(infoprop_rollout(m, zero_policy(), {0.0}, 100, th, q, rng).steps.size());
  }
  CHECK(lengths[0] <= lengths[1]);
  CHECK(lengths[1] <= lengths[2]);
  CHECK(lengths[0] == 5);
  CHECK(lengths[1] == 8);
  CHECK(lengths[2] == 12);
}

TEST_CASE("single-member ensemble: Infoprop and TS coincide in distribution") {
  SyntheticEnsembleModel m = constant_entropy_model(0.01, 0.0, 1);
  const QuantizationSpec q = QuantizationSpec::uniform(1);
  PolicySampler policy = gaussian_policy(1, 0.05, NoiseKind::Variance);
  Vec finals_ts, finals_ip;
  const int n = 1500;
  for (int i = 0; i < n; ++i) {
    Rng rts(derive_seed(1001, "ts", i));
    Rng rip(derive_seed(2002, "ip", i));
    finals_ts.push_back(ts_rollout(m, policy, {0.0}, 15, q, rts).steps.back().next_state[0]);
    finals_ip.push_back(infoprop_rollout(m, policy, {0.0}, 15, Thresholds::unbounded(1), q, rip)
                            .steps.back()
                            .next_state[0]);
  }
  double s2 = 0.0;
  for (double v : finals_ts) s2 += v * v;
  const double sigma = std::sqrt(s2 / n);
  CHECK(wasserstein1_1d(finals_ts, finals_ip) < 0.15 * sigma);
}

TEST_CASE("batch_rollout: empty starts, determinism, order, batch-size independence") {
  SyntheticEnsembleModel m = constant_entropy_model(0.01, 0.05, 3);
  const QuantizationSpec q = QuantizationSpec::uniform(1);
  PolicySampler policy = gaussian_policy(1, 0.1, NoiseKind::Variance);
  const Thresholds th = Thresholds::unbounded(1);

  CHECK(batch_rollout(m, policy, {}, 10, th, q, Mechanism::Infoprop, 1).empty());

  const std::vector<Vec> starts = {{0.0}, {1.0}, {2.0}, {3.0}, {4.0}};
  auto a = batch_rollout(m, policy, starts, 10, th, q, Mechanism::Infoprop, 42);
  auto b = batch_rollout(m, policy, starts, 10, th, q, Mechanism::Infoprop, 42);
  CHECK(trajectories_to_json(a).dump() == trajectories_to_json(b).dump());
  for (size_t i = 0; i < starts.size(); ++i) CHECK(a[i].start_state == starts[i]);

  const std::vector<Vec> fewer(starts.begin(), starts.begin() + 3);
  auto c = batch_rollout(m, policy, fewer, 10, th, q, Mechanism::Infoprop, 42);
  for (size_t i = 0; i < fewer.size(); ++i)
    CHECK(trajectory_to_json(c[i]).dump() == trajectory_to_json(a[i]).dump());
}

TEST_CASE("rollout terminals: optional predicate stops the rollout with EnvTerminal") {
  SyntheticEnsembleModel m = constant_entropy_model(0.0001, 0.0, 1);
  const QuantizationSpec q = QuantizationSpec::uniform(1);
  PolicySampler drift = [](const Vec&, Rng&) { return Vec{0.5}; };
  TerminalFn terminal = [](const Vec& s) { return s[0] > 2.0; };
  Rng rng(7);
  Trajectory t =
      infoprop_rollout(m, drift, {0.0}, 100, Thresholds::unbounded(1), q, rng, terminal);
  CHECK(t.termination == TerminationReason::EnvTerminal);
  CHECK(t.steps.size() < 10);
  CHECK(t.steps.back().next_state[0] > 2.0);
}

TEST_CASE("thresholds: values at or below the entropy floor are rejected") {
  const QuantizationSpec q = QuantizationSpec::uniform(1);
  Thresholds th;
  th.lambda1 = {floor_entropy_bits(1e-6)};
  th.lambda2 = {1e18};
  CHECK_THROWS_AS(th.validate(q), InvalidConfig);
}

TEST_CASE("trajectory json: bit-exact round-trip") {
  SyntheticEnsembleModel m = constant_entropy_model(0.02, 0.07, 4);
  const QuantizationSpec q = QuantizationSpec::uniform(1);
  PolicySampler policy = gaussian_policy(1, 0.1, NoiseKind::Variance);
  auto trajs = batch_rollout(m, policy, {{0.0}, {1.0}, {-3.0}}, 25, Thresholds::unbounded(1), q,
                             Mechanism::Infoprop, 77);
  const std::string dumped = trajectories_to_json(trajs).dump();
  auto parsed = trajectories_from_json(nlohmann::ordered_json::parse(dumped));
  CHECK(trajectories_to_json(parsed).dump() == dumped);
  // spot-check bitwise payload equality
  CHECK(parsed[1].steps[7].next_state == trajs[1].steps[7].next_state);
  CHECK(parsed[2].steps[3].cumulative_entropy_per_dim == trajs[2].steps[3].cumulative_entropy_per_dim);
}

TEST_CASE("trajectory csv: fixed column order") {
  SyntheticEnsembleModel m = constant_entropy_model(0.02, 0.07, 2);
  const QuantizationSpec q = QuantizationSpec::uniform(1);
  auto trajs = batch_rollout(m, gaussian_policy(1, 0.1, NoiseKind::Variance), {{0.0}}, 3,
                             Thresholds::unbounded(1), q, Mechanism::TS, 5);
  std::ostringstream out;
  write_trajectories_csv(out, trajs);
  const std::string text = out.str();
  CHECK(text.rfind("traj,t,s0,a0,h0,cum_h0\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);  // header + 3 steps
}
