#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "infoprop/envs.hpp"
#include "infoprop/io.hpp"
#include "infoprop/kernel.hpp"

namespace infoprop {

enum class Mechanism { Env, TS, Infoprop };

enum class TerminationReason { MaxLength, SingleStepExceeded, CumulativeExceeded, EnvTerminal };

inline std::string to_string(Mechanism m) {
  switch (m) {
    case Mechanism::Env: return "env";
    case Mechanism::TS: return "ts";
    case Mechanism::Infoprop: return "infoprop";
  }
  return "?";
}

inline std::string to_string(TerminationReason r) {
  switch (r) {
    case TerminationReason::MaxLength: return "max_length";
    case TerminationReason::SingleStepExceeded: return "single_step_exceeded";
    case TerminationReason::CumulativeExceeded: return "cumulative_exceeded";
    case TerminationReason::EnvTerminal: return "env_terminal";
  }
  return "?";
}

/// Per-dimension entropy thresholds in bits: lambda1 bounds the single-step
/// information loss, lambda2 the cumulative loss along the rollout.
struct Thresholds {
  Vec lambda1;
  Vec lambda2;

  static Thresholds unbounded(int dim) { return Thresholds{Vec(dim, 1e18), Vec(dim, 1e18)}; }

  /// Thresholds at or below the entropy floor would terminate everything at
  /// step zero; reject them up front.
  void validate(const QuantizationSpec& q) const {
    if (static_cast<int>(lambda1.size()) != q.dim() ||
        static_cast<int>(lambda2.size()) != q.dim())
      throw DimensionMismatch("Thresholds: dimension disagrees with quantization spec");
    const Vec floor = floor_entropy_bits(q);
    for (int k = 0; k < q.dim(); ++k)
      if (!(lambda1[k] > floor[k]) || !(lambda2[k] > floor[k]))
        throw InvalidConfig("Thresholds: thresholds must exceed the entropy floor");
  }
};

struct TrajectoryStep {
  Vec state;
  Vec action;
  Vec model_sample;
  Vec next_state;  // what the rollout propagated
  Vec entropy_per_dim;
  Vec cumulative_entropy_per_dim;
  std::optional<Cov> tilde_cov;  // recorded for Infoprop (and TS diagnostics)
};

struct Trajectory {
  Vec start_state;
  std::vector<TrajectoryStep> steps;
  TerminationReason termination = TerminationReason::MaxLength;
  int termination_dim = -1;  // violating dimension, if any
  Mechanism mechanism = Mechanism::Env;

  /// Recorded states including the start state.
  size_t num_states() const { return steps.size() + 1; }
};

/// Ground-truth rollout; entropy fields stay zero.
inline Trajectory env_rollout(const SyntheticEnv& env, const PolicySampler& policy, const Vec& s0,
                              int horizon, Rng& rng) {
  Trajectory traj;
  traj.mechanism = Mechanism::Env;
  traj.start_state = s0;
  Vec s = s0;
  for (int t = 0; t < horizon; ++t) {
    TrajectoryStep step;
    step.state = s;
    step.action = policy(s, rng);
    step.next_state = env.step(s, step.action, rng);
    step.model_sample = step.next_state;
    step.entropy_per_dim.assign(env.dim, 0.0);
    step.cumulative_entropy_per_dim.assign(env.dim, 0.0);
    s = step.next_state;
    traj.steps.push_back(std::move(step));
    if (env.terminal_fn && env.terminal_fn(s)) {
      traj.termination = TerminationReason::EnvTerminal;
      return traj;
    }
  }
  traj.termination = TerminationReason::MaxLength;
  return traj;
}

/// Baseline Trajectory Sampling: each step samples a member uniformly and
/// propagates its predictive Gaussian. No entropy thresholds; the entropy
/// fields are populated for diagnostics only.
template <class Model>
Trajectory ts_rollout(const Model& model, const PolicySampler& policy, const Vec& s0, int horizon,
                      const QuantizationSpec& q, Rng& rng, const TerminalFn& terminal = {}) {
  if (horizon < 1) throw InvalidConfig("ts_rollout: horizon must be >= 1");
  Trajectory traj;
  traj.mechanism = Mechanism::TS;
  traj.start_state = s0;
  const int n = static_cast<int>(s0.size());
  Vec cum(n, 0.0);
  Vec s = s0;
  for (int t = 0; t < horizon; ++t) {
    TrajectoryStep step;
    step.state = s;
    step.action = policy(s, rng);
    const EnsemblePredictions preds = model.predict(s, step.action);
    const FusedPrediction fused = fuse(preds);
    const int e = static_cast<int>(rng.uniform_index(preds.size()));
    const Vec w = rng.normal_vec(n);
    step.model_sample = draw_model_sample(fused, preds, e, w);
    const InfopropStep info = condition(fused, step.model_sample, q);
    step.entropy_per_dim = info.entropy_per_dim;
    for (int k = 0; k < n; ++k) cum[k] += info.entropy_per_dim[k];
    step.cumulative_entropy_per_dim = cum;
    step.tilde_cov = info.tilde_cov;
    step.next_state = step.model_sample;
    s = step.next_state;
    traj.steps.push_back(std::move(step));
    if (terminal && terminal(s)) {
      traj.termination = TerminationReason::EnvTerminal;
      return traj;
    }
  }
  traj.termination = TerminationReason::MaxLength;
  return traj;
}

/// Infoprop rollout. Per step: fuse the ensemble, draw a member-level model
/// sample, condition on it, then check the entropy thresholds. A violating
/// step is not propagated and not recorded — the break happens before the
/// state assignment. The single-step check (strict >) precedes the
/// cumulative check, so termination attribution is deterministic.
template <class Model>
Trajectory infoprop_rollout(const Model& model, const PolicySampler& policy, const Vec& s0,
                            int horizon, const Thresholds& thresholds, const QuantizationSpec& q,
                            Rng& rng, const TerminalFn& terminal = {}) {
  if (horizon < 1) throw InvalidConfig("infoprop_rollout: horizon must be >= 1");
  thresholds.validate(q);
  Trajectory traj;
  traj.mechanism = Mechanism::Infoprop;
  traj.start_state = s0;
  const int n = static_cast<int>(s0.size());
  Vec cum(n, 0.0);
  Vec s = s0;
  for (int t = 0; t < horizon; ++t) {
    TrajectoryStep step;
    step.state = s;
    step.action = policy(s, rng);
    const EnsemblePredictions preds = model.predict(s, step.action);
    const FusedPrediction fused = fuse(preds);
    const int e = static_cast<int>(rng.uniform_index(preds.size()));
    const Vec w = rng.normal_vec(n);
    step.model_sample = draw_model_sample(fused, preds, e, w);
    InfopropStep info = condition(fused, step.model_sample, q);

    for (int k = 0; k < n; ++k) {
      if (info.entropy_per_dim[k] > thresholds.lambda1[k]) {
        traj.termination = TerminationReason::SingleStepExceeded;
        traj.termination_dim = k;
        return traj;
      }
    }
    for (int k = 0; k < n; ++k) {
      if (cum[k] + info.entropy_per_dim[k] > thresholds.lambda2[k]) {
        traj.termination = TerminationReason::CumulativeExceeded;
        traj.termination_dim = k;
        return traj;
      }
    }

    step.next_state = propagate(info, rng.normal_vec(n));
    step.entropy_per_dim = info.entropy_per_dim;
    for (int k = 0; k < n; ++k) cum[k] += info.entropy_per_dim[k];
    step.cumulative_entropy_per_dim = cum;
    step.tilde_cov = std::move(info.tilde_cov);
    s = step.next_state;
    traj.steps.push_back(std::move(step));
    if (terminal && terminal(s)) {
      traj.termination = TerminationReason::EnvTerminal;
      return traj;
    }
  }
  traj.termination = TerminationReason::MaxLength;
  return traj;
}

/// Independent rollouts, one per start state. Each rollout gets its own
/// stream derived from (master seed, index), so batch size and ordering do
/// not perturb individual trajectories.
template <class Model>
std::vector<Trajectory> batch_rollout(const Model& model, const PolicySampler& policy,
                                      const std::vector<Vec>& starts, int horizon,
                                      const Thresholds& thresholds, const QuantizationSpec& q,
                                      Mechanism mechanism, uint64_t master_seed,
                                      const TerminalFn& terminal = {}) {
  std::vector<Trajectory> out;
  out.reserve(starts.size());
  for (size_t i = 0; i < starts.size(); ++i) {
    Rng rng(derive_seed(master_seed, "rollout", i));
    if (mechanism == Mechanism::TS)
      out.push_back(ts_rollout(model, policy, starts[i], horizon, q, rng, terminal));
    else
      out.push_back(infoprop_rollout(model, policy, starts[i], horizon, thresholds, q, rng, terminal));
  }
  return out;
}

// --- serialization ---------------------------------------------------------

inline nlohmann::ordered_json cov_to_json(const Cov& cov) {
  nlohmann::ordered_json j;
  if (cov.mode() == CovMode::Diagonal) {
    j["mode"] = "diag";
    j["var"] = cov.diag();
  } else {
    j["mode"] = "dense";
    const Mat& m = cov.dense_matrix();
    j["rows"] = m.rows;
    j["data"] = m.a;
  }
  return j;
}

inline Cov cov_from_json(const nlohmann::ordered_json& j) {
  if (j.at("mode") == "diag") return Cov::diagonal(j.at("var").get<Vec>());
  Mat m(j.at("rows").get<int>(), j.at("rows").get<int>());
  m.a = j.at("data").get<std::vector<double>>();
  return Cov::dense(std::move(m));
}

inline nlohmann::ordered_json trajectory_to_json(const Trajectory& traj) {
  nlohmann::ordered_json j;
  j["mechanism"] = to_string(traj.mechanism);
  j["start_state"] = traj.start_state;
  j["termination"] = to_string(traj.termination);
  j["termination_dim"] = traj.termination_dim;
  j["steps"] = nlohmann::ordered_json::array();
  for (const TrajectoryStep& s : traj.steps) {
    nlohmann::ordered_json js;
    js["state"] = s.state;
    js["action"] = s.action;
    js["model_sample"] = s.model_sample;
    js["next_state"] = s.next_state;
    js["entropy_per_dim"] = s.entropy_per_dim;
    js["cumulative_entropy_per_dim"] = s.cumulative_entropy_per_dim;
    if (s.tilde_cov)
      js["tilde_cov"] = cov_to_json(*s.tilde_cov);
    else
      js["tilde_cov"] = nullptr;
    j["steps"].push_back(std::move(js));
  }
  return j;
}

inline Trajectory trajectory_from_json(const nlohmann::ordered_json& j) {
  Trajectory traj;
  const std::string mech = j.at("mechanism").get<std::string>();
  traj.mechanism = mech == "env"  ? Mechanism::Env
                   : mech == "ts" ? Mechanism::TS
                                  : Mechanism::Infoprop;
  traj.start_state = j.at("start_state").get<Vec>();
  const std::string term = j.at("termination").get<std::string>();
  traj.termination = term == "max_length"             ? TerminationReason::MaxLength
                     : term == "single_step_exceeded" ? TerminationReason::SingleStepExceeded
                     : term == "cumulative_exceeded"  ? TerminationReason::CumulativeExceeded
                                                      : TerminationReason::EnvTerminal;
  traj.termination_dim = j.at("termination_dim").get<int>();
  for (const auto& js : j.at("steps")) {
    TrajectoryStep s;
    s.state = js.at("state").get<Vec>();
    s.action = js.at("action").get<Vec>();
    s.model_sample = js.at("model_sample").get<Vec>();
    s.next_state = js.at("next_state").get<Vec>();
    s.entropy_per_dim = js.at("entropy_per_dim").get<Vec>();
    s.cumulative_entropy_per_dim = js.at("cumulative_entropy_per_dim").get<Vec>();
    if (!js.at("tilde_cov").is_null()) s.tilde_cov = cov_from_json(js.at("tilde_cov"));
    traj.steps.push_back(std::move(s));
  }
  return traj;
}

inline nlohmann::ordered_json trajectories_to_json(const std::vector<Trajectory>& trajs) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const Trajectory& t : trajs) j.push_back(trajectory_to_json(t));
  return j;
}

inline std::vector<Trajectory> trajectories_from_json(const nlohmann::ordered_json& j) {
  std::vector<Trajectory> trajs;
  for (const auto& jt : j) trajs.push_back(trajectory_from_json(jt));
  return trajs;
}

/// Column order is fixed: traj, t, state dims, action dims, per-dim entropy,
/// per-dim cumulative entropy.
inline void write_trajectories_csv(std::ostream& out, const std::vector<Trajectory>& trajs) {
  if (trajs.empty()) {
    out << "traj,t\n";
    return;
  }
  const size_t state_dim = trajs.front().start_state.size();
  size_t action_dim = 0;
  for (const Trajectory& t : trajs)
    if (!t.steps.empty()) {
      action_dim = t.steps.front().action.size();
      break;
    }
  out << "traj,t";
  for (size_t k = 0; k < state_dim; ++k) out << ",s" << k;
  for (size_t k = 0; k < action_dim; ++k) out << ",a" << k;
  for (size_t k = 0; k < state_dim; ++k) out << ",h" << k;
  for (size_t k = 0; k < state_dim; ++k) out << ",cum_h" << k;
  out << "\n";
  for (size_t i = 0; i < trajs.size(); ++i) {
    for (size_t t = 0; t < trajs[i].steps.size(); ++t) {
      const TrajectoryStep& s = trajs[i].steps[t];
      out << i << "," << t;
      for (double v : s.state) out << "," << fmt_double(v);
      for (double v : s.action) out << "," << fmt_double(v);
      for (double v : s.entropy_per_dim) out << "," << fmt_double(v);
      for (double v : s.cumulative_entropy_per_dim) out << "," << fmt_double(v);
      out << "\n";
    }
  }
}

}  // namespace infoprop
