#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "infoprop/calibration.hpp"
#include "infoprop/ensemble.hpp"
#include "infoprop/envs.hpp"
#include "infoprop/io.hpp"
#include "infoprop/oracles.hpp"
#include "infoprop/rollout.hpp"
#include "infoprop/version.hpp"

namespace infoprop {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

/// Resolved experiment configuration. The on-disk form is a plain key=value
/// file with '#' comments; every run writes its resolved config next to its
/// outputs.
struct ExperimentConfig {
  uint64_t seed = 42;
  std::string mode = "diag";  // diag | dense

  std::string env_kind = "random_walk";  // random_walk | linear2d
  double env_noise_std = 0.01;
  double env_action_noise = 0.1;
  std::string env_action_noise_kind = "variance";  // variance | stddev
  Vec env_start_state;                             // empty = environment default

  int data_rollouts = 1000;
  int data_horizon = 100;

  int ensemble_members = 5;
  int ensemble_hidden_neurons = 2;
  int ensemble_hidden_layers = 1;
  double ensemble_learning_rate = 0.001;
  double ensemble_weight_decay = 0.00001;
  int ensemble_epochs = 4;
  int ensemble_batch_size = 32;
  std::string ensemble_optimizer = "adam";  // adam | sgd

  double calibration_zeta1 = 0.99;
  double calibration_zeta2 = 0.01;
  double calibration_xi = 100.0;
  size_t calibration_subsample = 0;  // 0 = full buffer

  double quantization_delta_z = 1e-6;

  std::string rollout_mechanism = "infoprop";  // ts | infoprop
  int rollout_rollouts = 1000;
  int rollout_horizon = 100;

  void validate() const {
    if (mode != "diag" && mode != "dense") throw InvalidConfig("mode must be diag or dense");
    if (env_kind != "random_walk" && env_kind != "linear2d")
      throw InvalidConfig("env.kind must be random_walk or linear2d");
    if (env_action_noise_kind != "variance" && env_action_noise_kind != "stddev")
      throw InvalidConfig("env.action_noise_kind must be variance or stddev");
    if (!(env_noise_std >= 0.0)) throw InvalidConfig("env.noise_std must be >= 0");
    if (!(env_action_noise >= 0.0)) throw InvalidConfig("env.action_noise must be >= 0");
    if (data_rollouts < 1 || data_horizon < 1)
      throw InvalidConfig("data.rollouts and data.horizon must be >= 1");
    if (rollout_rollouts < 1 || rollout_horizon < 1)
      throw InvalidConfig("rollout.rollouts and rollout.horizon must be >= 1");
    if (rollout_mechanism != "ts" && rollout_mechanism != "infoprop")
      throw InvalidConfig("rollout.mechanism must be ts or infoprop");
    if (ensemble_optimizer != "adam" && ensemble_optimizer != "sgd")
      throw InvalidConfig("ensemble.optimizer must be adam or sgd");
    if (!(calibration_zeta1 > 0.0) || calibration_zeta1 > 1.0 || !(calibration_zeta2 > 0.0) ||
        calibration_zeta2 > 1.0)
      throw InvalidConfig("calibration.zeta1/zeta2 must be in (0, 1]");
    if (!(calibration_xi > 0.0)) throw InvalidConfig("calibration.xi must be > 0");
    if (!(quantization_delta_z > 0.0)) throw InvalidConfig("quantization.delta_z must be > 0");
    ensemble_config().validate();
  }

  EnsembleConfig ensemble_config() const {
    EnsembleConfig c;
    c.ensemble_size = ensemble_members;
    c.hidden_neurons = ensemble_hidden_neurons;
    c.hidden_layers = ensemble_hidden_layers;
    c.learning_rate = ensemble_learning_rate;
    c.weight_decay = ensemble_weight_decay;
    c.epochs = ensemble_epochs;
    c.batch_size = ensemble_batch_size;
    c.adam = ensemble_optimizer == "adam";
    c.seed = derive_seed(seed, "train");
    return c;
  }

  NoiseKind action_noise_kind() const {
    return env_action_noise_kind == "variance" ? NoiseKind::Variance : NoiseKind::StdDev;
  }

  SyntheticEnv make_env() const {
    SyntheticEnv env = env_kind == "random_walk" ? random_walk_env(env_noise_std) : linear2d_env();
    if (!env_start_state.empty()) {
      if (static_cast<int>(env_start_state.size()) != env.dim)
        throw InvalidConfig("env.start_state dimension disagrees with environment");
      env.start_state = env_start_state;
    }
    return env;
  }

  PolicySampler make_policy(const SyntheticEnv& env) const {
    return gaussian_policy(env.action_dim, env_action_noise, action_noise_kind());
  }

  QuantizationSpec make_quant(int dim) const {
    return QuantizationSpec::uniform(dim, quantization_delta_z);
  }

  CovMode cov_mode() const { return mode == "dense" ? CovMode::Dense : CovMode::Diagonal; }

  std::string to_string() const {
    std::ostringstream o;
    o << "seed = " << seed << "\n";
    o << "mode = " << mode << "\n";
    o << "env.kind = " << env_kind << "\n";
    o << "env.noise_std = " << fmt_double(env_noise_std) << "\n";
    o << "env.action_noise = " << fmt_double(env_action_noise) << "\n";
    o << "env.action_noise_kind = " << env_action_noise_kind << "\n";
    o << "env.start_state =";
    if (env_start_state.empty()) {
      o << " default";
    } else {
      for (size_t i = 0; i < env_start_state.size(); ++i)
        o << (i ? "," : " ") << fmt_double(env_start_state[i]);
    }
    o << "\n";
    o << "data.rollouts = " << data_rollouts << "\n";
    o << "data.horizon = " << data_horizon << "\n";
    o << "ensemble.members = " << ensemble_members << "\n";
    o << "ensemble.hidden_neurons = " << ensemble_hidden_neurons << "\n";
    o << "ensemble.hidden_layers = " << ensemble_hidden_layers << "\n";
    o << "ensemble.learning_rate = " << fmt_double(ensemble_learning_rate) << "\n";
    o << "ensemble.weight_decay = " << fmt_double(ensemble_weight_decay) << "\n";
    o << "ensemble.epochs = " << ensemble_epochs << "\n";
    o << "ensemble.batch_size = " << ensemble_batch_size << "\n";
    o << "ensemble.optimizer = " << ensemble_optimizer << "\n";
    o << "calibration.zeta1 = " << fmt_double(calibration_zeta1) << "\n";
    o << "calibration.zeta2 = " << fmt_double(calibration_zeta2) << "\n";
    o << "calibration.xi = " << fmt_double(calibration_xi) << "\n";
    o << "calibration.subsample = " << calibration_subsample << "\n";
    o << "quantization.delta_z = " << fmt_double(quantization_delta_z) << "\n";
    o << "rollout.mechanism = " << rollout_mechanism << "\n";
    o << "rollout.rollouts = " << rollout_rollouts << "\n";
    o << "rollout.horizon = " << rollout_horizon << "\n";
    return o.str();
  }

  std::string config_hash_hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(to_string())));
    return std::string(buf);
  }

  static ExperimentConfig from_string(const std::string& text);

  static ExperimentConfig from_file(const fs::path& path) {
    return from_string(read_file(path));
  }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline double to_double(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw InvalidConfig("config: bad numeric value for " + key + ": '" + v + "'");
  }
}

inline long long to_int(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    const long long i = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw InvalidConfig("config: bad integer value for " + key + ": '" + v + "'");
  }
}

inline Vec to_vec(const std::string& v, const std::string& key) {
  if (v == "default") return {};
  Vec out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double(trim(item), key));
  return out;
}

}  // namespace config_detail

inline ExperimentConfig ExperimentConfig::from_string(const std::string& text) {
  using namespace config_detail;
  ExperimentConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidConfig("config: line " + std::to_string(lineno) + " is not key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "seed") c.seed = static_cast<uint64_t>(to_int(val, key));
    else if (key == "mode") c.mode = val;
    else if (key == "env.kind") c.env_kind = val;
    else if (key == "env.noise_std") c.env_noise_std = to_double(val, key);
    else if (key == "env.action_noise") c.env_action_noise = to_double(val, key);
    else if (key == "env.action_noise_kind") c.env_action_noise_kind = val;
    else if (key == "env.start_state") c.env_start_state = to_vec(val, key);
    else if (key == "data.rollouts") c.data_rollouts = static_cast<int>(to_int(val, key));
    else if (key == "data.horizon") c.data_horizon = static_cast<int>(to_int(val, key));
    else if (key == "ensemble.members") c.ensemble_members = static_cast<int>(to_int(val, key));
    else if (key == "ensemble.hidden_neurons") c.ensemble_hidden_neurons = static_cast<int>(to_int(val, key));
    else if (key == "ensemble.hidden_layers") c.ensemble_hidden_layers = static_cast<int>(to_int(val, key));
    else if (key == "ensemble.learning_rate") c.ensemble_learning_rate = to_double(val, key);
    else if (key == "ensemble.weight_decay") c.ensemble_weight_decay = to_double(val, key);
    else if (key == "ensemble.epochs") c.ensemble_epochs = static_cast<int>(to_int(val, key));
    else if (key == "ensemble.batch_size") c.ensemble_batch_size = static_cast<int>(to_int(val, key));
    else if (key == "ensemble.optimizer") c.ensemble_optimizer = val;
    else if (key == "calibration.zeta1") c.calibration_zeta1 = to_double(val, key);
    else if (key == "calibration.zeta2") c.calibration_zeta2 = to_double(val, key);
    else if (key == "calibration.xi") c.calibration_xi = to_double(val, key);
    else if (key == "calibration.subsample") c.calibration_subsample = static_cast<size_t>(to_int(val, key));
    else if (key == "quantization.delta_z") c.quantization_delta_z = to_double(val, key);
    else if (key == "rollout.mechanism") c.rollout_mechanism = val;
    else if (key == "rollout.rollouts") c.rollout_rollouts = static_cast<int>(to_int(val, key));
    else if (key == "rollout.horizon") c.rollout_horizon = static_cast<int>(to_int(val, key));
    else throw InvalidConfig("config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

/// Presents diagonal member predictions as dense one-member-at-a-time
/// covariances, so fusion and conditioning run the dense path (the epistemic
/// estimate then keeps its off-diagonal terms).
struct DenseModelAdapter {
  const EnsembleModel* base = nullptr;

  EnsemblePredictions predict(const Vec& s, const Vec& a) const {
    const EnsemblePredictions diag = base->predict(s, a);
    std::vector<GaussianBelief> out;
    out.reserve(diag.members.size());
    for (const auto& b : diag.members) {
      Mat m(b.dim(), b.dim());
      for (int k = 0; k < b.dim(); ++k) m(k, k) = b.var_diag()[k];
      out.push_back(GaussianBelief::dense(b.mean(), std::move(m)));
    }
    return EnsemblePredictions(std::move(out));
  }

  int ensemble_size() const { return base->ensemble_size(); }
};

// --- dataset files ----------------------------------------------------------

inline void write_dataset_csv(std::ostream& out, const TransitionBuffer& buffer) {
  const int sd = buffer.state_dim();
  const int ad = buffer.action_dim();
  for (int k = 0; k < sd; ++k) out << (k ? "," : "") << "s" << k;
  for (int k = 0; k < ad; ++k) out << ",a" << k;
  for (int k = 0; k < sd; ++k) out << ",next" << k;
  out << "\n";
  for (const Transition& t : buffer) {
    for (int k = 0; k < sd; ++k) out << (k ? "," : "") << fmt_double(t.state[k]);
    for (int k = 0; k < ad; ++k) out << "," << fmt_double(t.action[k]);
    for (int k = 0; k < sd; ++k) out << "," << fmt_double(t.next_state[k]);
    out << "\n";
  }
}

inline TransitionBuffer read_dataset_csv(const fs::path& path) {
  const std::string text = read_file(path);
  std::istringstream in(text);
  std::string line;
  int sd = 0, ad = 0;
  bool header_done = false;
  TransitionBuffer buffer;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_done) {
      std::stringstream ss(line);
      std::string col;
      while (std::getline(ss, col, ',')) {
        if (col.rfind("s", 0) == 0 && col.rfind("next", 0) != 0 && col != "s") ++sd;
        else if (col.rfind("a", 0) == 0) ++ad;
      }
      header_done = true;
      continue;
    }
    std::stringstream ss(line);
    std::string cell;
    Vec row;
    while (std::getline(ss, cell, ',')) row.push_back(config_detail::to_double(cell, "dataset"));
    if (static_cast<int>(row.size()) != 2 * sd + ad)
      throw IoError("dataset csv: row width disagrees with header");
    Transition t;
    t.state.assign(row.begin(), row.begin() + sd);
    t.action.assign(row.begin() + sd, row.begin() + sd + ad);
    t.next_state.assign(row.begin() + sd + ad, row.end());
    buffer.push(std::move(t));
  }
  if (buffer.empty()) throw IoError("dataset csv: no rows in " + path.string());
  return buffer;
}

// --- command plumbing -------------------------------------------------------

namespace pipeline_detail {

inline std::string timestamp_utc() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return std::string(buf);
}

inline std::string csv_preamble(const ExperimentConfig& cfg) {
  return std::string("# infoprop ") + kVersion + "\n# config_hash=" + cfg.config_hash_hex() + "\n";
}

inline ordered_json payload_header(const ExperimentConfig& cfg) {
  return {{"version", kVersion}, {"config_hash", cfg.config_hash_hex()}};
}

inline void write_manifest(const fs::path& out_dir, const std::string& command,
                           const ExperimentConfig& cfg, ordered_json extra) {
  ordered_json m;
  m["version"] = kVersion;
  m["command"] = command;
  m["timestamp"] = timestamp_utc();  // the only timestamp in any output
  m["seed"] = cfg.seed;
  m["config_hash"] = cfg.config_hash_hex();
  m["config"] = cfg.to_string();
  for (auto& [k, v] : extra.items()) m[k] = v;
  atomic_write_file(out_dir / (command + "_manifest.json"), m.dump(2) + "\n");
}

inline void write_resolved_config(const fs::path& out_dir, const ExperimentConfig& cfg) {
  atomic_write_file(out_dir / "config.resolved.txt", cfg.to_string());
}

inline Vec state_at(const Trajectory& traj, size_t t) {
  return t == 0 ? traj.start_state : traj.steps[t - 1].next_state;
}

}  // namespace pipeline_detail

/// Generate the environment dataset: rollouts under the true dynamics,
/// written both as flattened transitions (for training) and as trajectories
/// (for evaluation).
inline void cmd_generate(const ExperimentConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  fs::create_directories(out_dir);
  const SyntheticEnv env = cfg.make_env();
  const PolicySampler policy = cfg.make_policy(env);

  std::vector<Trajectory> trajs;
  trajs.reserve(cfg.data_rollouts);
  for (int r = 0; r < cfg.data_rollouts; ++r) {
    Rng rng(derive_seed(cfg.seed, "env-rollout", r));
    trajs.push_back(env_rollout(env, policy, env.start_state, cfg.data_horizon, rng));
  }
  TransitionBuffer buffer;
  for (const Trajectory& traj : trajs)
    for (const TrajectoryStep& s : traj.steps)
      buffer.push(Transition{s.state, s.action, s.next_state});

  std::ostringstream csv;
  csv << pipeline_detail::csv_preamble(cfg);
  write_dataset_csv(csv, buffer);
  atomic_write_file(out_dir / "dataset.csv", csv.str());

  ordered_json jt = pipeline_detail::payload_header(cfg);
  jt["trajectories"] = trajectories_to_json(trajs);
  atomic_write_file(out_dir / "env_trajectories.json", jt.dump() + "\n");
  std::ostringstream tcsv;
  tcsv << pipeline_detail::csv_preamble(cfg);
  write_trajectories_csv(tcsv, trajs);
  atomic_write_file(out_dir / "env_trajectories.csv", tcsv.str());

  pipeline_detail::write_resolved_config(out_dir, cfg);
  pipeline_detail::write_manifest(out_dir, "generate", cfg,
                                  {{"rows", buffer.size()}, {"rollouts", trajs.size()}});
}

/// Train the ensemble on a dataset file and write the checkpoint plus the
/// per-member loss curves.
inline void cmd_train(const ExperimentConfig& cfg, const fs::path& dataset_path,
                      const fs::path& out_dir) {
  cfg.validate();
  if (!fs::exists(dataset_path)) throw IoError("dataset not found: " + dataset_path.string());
  fs::create_directories(out_dir);
  const TransitionBuffer buffer = read_dataset_csv(dataset_path);
  const EnsembleConfig ec = cfg.ensemble_config();
  const EnsembleModel model = train(buffer, ec, ec.seed);

  atomic_write_file(out_dir / "model.json", model.to_json().dump() + "\n");

  std::ostringstream loss;
  loss << pipeline_detail::csv_preamble(cfg);
  loss << "member,epoch,nll\n";
  for (size_t e = 0; e < model.loss_history().size(); ++e)
    for (size_t ep = 0; ep < model.loss_history()[e].size(); ++ep)
      loss << e << "," << ep << "," << fmt_double(model.loss_history()[e][ep]) << "\n";
  atomic_write_file(out_dir / "training_loss.csv", loss.str());

  pipeline_detail::write_resolved_config(out_dir, cfg);
  pipeline_detail::write_manifest(out_dir, "train", cfg,
                                  {{"model_hash", model.hash_hex()}, {"rows", buffer.size()}});
}

inline EnsembleModel load_model(const fs::path& model_path) {
  if (!fs::exists(model_path)) throw IoError("model not found: " + model_path.string());
  return EnsembleModel::from_json(ordered_json::parse(read_file(model_path)));
}

/// Compute entropy-based thresholds over the dataset and bind them to the
/// model checkpoint hash.
inline void cmd_calibrate(const ExperimentConfig& cfg, const fs::path& model_path,
                          const fs::path& dataset_path, const fs::path& out_dir) {
  cfg.validate();
  if (!fs::exists(dataset_path)) throw IoError("dataset not found: " + dataset_path.string());
  fs::create_directories(out_dir);
  const EnsembleModel model = load_model(model_path);
  const TransitionBuffer buffer = read_dataset_csv(dataset_path);
  const QuantizationSpec q = cfg.make_quant(model.state_dim());
  const uint64_t seed = derive_seed(cfg.seed, "calibrate");

  Thresholds thresholds;
  if (cfg.cov_mode() == CovMode::Dense) {
    DenseModelAdapter dense{&model};
    thresholds = compute_thresholds(dense, buffer, cfg.calibration_zeta1, cfg.calibration_zeta2,
                                    cfg.calibration_xi, q, seed, cfg.calibration_subsample);
  } else {
    thresholds = compute_thresholds(model, buffer, cfg.calibration_zeta1, cfg.calibration_zeta2,
                                    cfg.calibration_xi, q, seed, cfg.calibration_subsample);
  }

  ordered_json j = pipeline_detail::payload_header(cfg);
  const ordered_json jt = thresholds_to_json(thresholds, model.hash_hex());
  for (const auto& [k, v] : jt.items()) j[k] = v;
  j["zeta1"] = cfg.calibration_zeta1;
  j["zeta2"] = cfg.calibration_zeta2;
  j["xi"] = cfg.calibration_xi;
  j["delta_z"] = cfg.quantization_delta_z;
  j["mode"] = cfg.mode;
  atomic_write_file(out_dir / "thresholds.json", j.dump(2) + "\n");

  pipeline_detail::write_resolved_config(out_dir, cfg);
  pipeline_detail::write_manifest(out_dir, "calibrate", cfg, {{"model_hash", model.hash_hex()}});
}

inline Thresholds load_thresholds(const fs::path& path, const std::string& expected_model_hash) {
  if (!fs::exists(path)) throw MissingThresholds("thresholds not found: " + path.string());
  return thresholds_from_json(ordered_json::parse(read_file(path)), expected_model_hash);
}

struct RolloutSummary {
  std::map<size_t, size_t> length_histogram;
  std::map<std::string, size_t> termination_counts;
  ordered_json per_step = ordered_json::array();
};

inline RolloutSummary summarize_trajectories(const std::vector<Trajectory>& trajs) {
  RolloutSummary sum;
  size_t max_states = 0;
  for (const Trajectory& t : trajs) {
    sum.length_histogram[t.steps.size()] += 1;
    sum.termination_counts[to_string(t.termination)] += 1;
    max_states = std::max(max_states, t.num_states());
  }
  const int dim = trajs.empty() ? 0 : static_cast<int>(trajs.front().start_state.size());
  const double qs[] = {0.05, 0.25, 0.50, 0.75, 0.95};
  for (size_t t = 0; t < max_states; ++t) {
    std::vector<Vec> dims(dim);
    for (const Trajectory& traj : trajs)
      if (traj.num_states() > t) {
        const Vec s = pipeline_detail::state_at(traj, t);
        for (int k = 0; k < dim; ++k) dims[k].push_back(s[k]);
      }
    if (dims.empty() || dims[0].empty()) break;
    ordered_json row;
    row["t"] = t;
    row["count"] = dims[0].size();
    ordered_json mean = ordered_json::array(), stdj = ordered_json::array();
    ordered_json quant = ordered_json::object();
    for (const double zq : qs) quant[("q" + std::to_string(int(zq * 100)))] = ordered_json::array();
    for (int k = 0; k < dim; ++k) {
      double m = 0.0;
      for (double v : dims[k]) m += v;
      m /= static_cast<double>(dims[k].size());
      double var = 0.0;
      for (double v : dims[k]) var += (v - m) * (v - m);
      var = dims[k].size() > 1 ? var / static_cast<double>(dims[k].size() - 1) : 0.0;
      mean.push_back(m);
      stdj.push_back(std::sqrt(var));
      for (const double zq : qs)
        quant[("q" + std::to_string(int(zq * 100)))].push_back(quantile(dims[k], zq));
    }
    row["mean"] = mean;
    row["std"] = stdj;
    row["quantiles"] = quant;
    sum.per_step.push_back(row);
  }
  return sum;
}

/// Model rollouts under the chosen mechanism. Thresholds are required for
/// Infoprop and must match the model checkpoint hash.
inline void cmd_rollout(const ExperimentConfig& cfg, const fs::path& model_path,
                        const fs::path& thresholds_path, const fs::path& out_dir) {
  cfg.validate();
  fs::create_directories(out_dir);
  const EnsembleModel model = load_model(model_path);
  const SyntheticEnv env = cfg.make_env();
  const PolicySampler policy = cfg.make_policy(env);
  const QuantizationSpec q = cfg.make_quant(model.state_dim());
  const Mechanism mech = cfg.rollout_mechanism == "ts" ? Mechanism::TS : Mechanism::Infoprop;

  Thresholds thresholds = Thresholds::unbounded(model.state_dim());
  if (mech == Mechanism::Infoprop) {
    if (thresholds_path.empty())
      throw MissingThresholds("infoprop rollouts need --thresholds");
    thresholds = load_thresholds(thresholds_path, model.hash_hex());
  }

  const std::vector<Vec> starts(cfg.rollout_rollouts, env.start_state);
  const uint64_t master = derive_seed(cfg.seed, "model-rollout");
  std::vector<Trajectory> trajs;
  if (cfg.cov_mode() == CovMode::Dense) {
    DenseModelAdapter dense{&model};
    trajs = batch_rollout(dense, policy, starts, cfg.rollout_horizon, thresholds, q, mech, master,
                          env.terminal_fn);
  } else {
    trajs = batch_rollout(model, policy, starts, cfg.rollout_horizon, thresholds, q, mech, master,
                          env.terminal_fn);
  }

  ordered_json jt = pipeline_detail::payload_header(cfg);
  jt["mechanism"] = to_string(mech);
  jt["trajectories"] = trajectories_to_json(trajs);
  atomic_write_file(out_dir / "trajectories.json", jt.dump() + "\n");
  std::ostringstream csv;
  csv << pipeline_detail::csv_preamble(cfg);
  write_trajectories_csv(csv, trajs);
  atomic_write_file(out_dir / "trajectories.csv", csv.str());

  const RolloutSummary sum = summarize_trajectories(trajs);
  ordered_json js = pipeline_detail::payload_header(cfg);
  js["mechanism"] = to_string(mech);
  js["length_histogram"] = sum.length_histogram;
  js["termination_counts"] = sum.termination_counts;
  js["per_step"] = sum.per_step;
  atomic_write_file(out_dir / "summary.json", js.dump(2) + "\n");

  std::ostringstream scsv;
  scsv << pipeline_detail::csv_preamble(cfg);
  scsv << "t,count";
  const int dim = model.state_dim();
  for (int k = 0; k < dim; ++k)
    scsv << ",mean" << k << ",std" << k << ",q5_" << k << ",q25_" << k << ",q50_" << k << ",q75_"
         << k << ",q95_" << k;
  scsv << "\n";
  for (const auto& row : sum.per_step) {
    scsv << row["t"].get<size_t>() << "," << row["count"].get<size_t>();
    for (int k = 0; k < dim; ++k) {
      scsv << "," << fmt_double(row["mean"][k].get<double>())
           << "," << fmt_double(row["std"][k].get<double>());
      for (const char* zq : {"q5", "q25", "q50", "q75", "q95"})
        scsv << "," << fmt_double(row["quantiles"][zq][k].get<double>());
    }
    scsv << "\n";
  }
  atomic_write_file(out_dir / "summary.csv", scsv.str());

  pipeline_detail::write_resolved_config(out_dir, cfg);
  pipeline_detail::write_manifest(out_dir, "rollout", cfg,
                                  {{"mechanism", to_string(mech)},
                                   {"model_hash", model.hash_hex()},
                                   {"trajectories", trajs.size()}});
}

/// Per-time-step, per-dimension W1 between two trajectory files'
/// cross-sections. Differing horizons are truncated to the shorter with a
/// warning flag in the output.
inline void cmd_evaluate(const ExperimentConfig& cfg, const fs::path& env_trajs_path,
                         const fs::path& model_trajs_path, const fs::path& out_dir) {
  cfg.validate();
  if (!fs::exists(env_trajs_path)) throw IoError("trajectories not found: " + env_trajs_path.string());
  if (!fs::exists(model_trajs_path)) throw IoError("trajectories not found: " + model_trajs_path.string());
  fs::create_directories(out_dir);
  const auto ja = ordered_json::parse(read_file(env_trajs_path));
  const auto jb = ordered_json::parse(read_file(model_trajs_path));
  const std::vector<Trajectory> trajs_a = trajectories_from_json(ja.at("trajectories"));
  const std::vector<Trajectory> trajs_b = trajectories_from_json(jb.at("trajectories"));
  if (trajs_a.empty() || trajs_b.empty()) throw EmptyInput("evaluate: empty trajectory file");

  size_t max_a = 0, max_b = 0;
  for (const auto& t : trajs_a) max_a = std::max(max_a, t.num_states());
  for (const auto& t : trajs_b) max_b = std::max(max_b, t.num_states());
  const size_t common = std::min(max_a, max_b);
  const bool truncated = max_a != max_b;
  const int dim = static_cast<int>(trajs_a.front().start_state.size());

  ordered_json steps = ordered_json::array();
  for (size_t t = 0; t < common; ++t) {
    std::vector<Vec> xa(dim), xb(dim);
    for (const auto& traj : trajs_a)
      if (traj.num_states() > t) {
        const Vec s = pipeline_detail::state_at(traj, t);
        for (int k = 0; k < dim; ++k) xa[k].push_back(s[k]);
      }
    for (const auto& traj : trajs_b)
      if (traj.num_states() > t) {
        const Vec s = pipeline_detail::state_at(traj, t);
        for (int k = 0; k < dim; ++k) xb[k].push_back(s[k]);
      }
    if (xa[0].empty() || xb[0].empty()) break;
    ordered_json row;
    row["t"] = t;
    row["count_a"] = xa[0].size();
    row["count_b"] = xb[0].size();
    ordered_json w1 = ordered_json::array();
    for (int k = 0; k < dim; ++k) w1.push_back(wasserstein1_1d(xa[k], xb[k]));
    row["w1"] = w1;
    steps.push_back(row);
  }

  ordered_json j = pipeline_detail::payload_header(cfg);
  j["truncated"] = truncated;
  j["steps"] = steps;
  atomic_write_file(out_dir / "metrics.json", j.dump(2) + "\n");

  std::ostringstream csv;
  csv << pipeline_detail::csv_preamble(cfg);
  csv << "t,count_a,count_b";
  for (int k = 0; k < dim; ++k) csv << ",w1_" << k;
  csv << "\n";
  for (const auto& row : steps) {
    csv << row["t"].get<size_t>() << "," << row["count_a"].get<size_t>() << ","
        << row["count_b"].get<size_t>();
    for (int k = 0; k < dim; ++k) csv << "," << fmt_double(row["w1"][k].get<double>());
    csv << "\n";
  }
  atomic_write_file(out_dir / "metrics.csv", csv.str());

  pipeline_detail::write_resolved_config(out_dir, cfg);
  pipeline_detail::write_manifest(out_dir, "evaluate", cfg,
                                  {{"truncated", truncated}, {"steps", steps.size()}});
}

/// Run every oracle and write the report bundle; returns false when any
/// oracle fails.
inline bool cmd_verify(const ExperimentConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  fs::create_directories(out_dir);
  ordered_json report = run_verification(derive_seed(cfg.seed, "verify"));
  ordered_json j = pipeline_detail::payload_header(cfg);
  for (auto& [k, v] : report.items()) j[k] = v;
  atomic_write_file(out_dir / "oracle_report.json", j.dump(2) + "\n");
  pipeline_detail::write_resolved_config(out_dir, cfg);
  pipeline_detail::write_manifest(out_dir, "verify", cfg, {{"pass", report["pass"].get<bool>()}});
  return report["pass"].get<bool>();
}

}  // namespace infoprop
