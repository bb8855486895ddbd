#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "infoprop/dataset.hpp"
#include "infoprop/fusion.hpp"
#include "infoprop/rng.hpp"

namespace infoprop {

struct EnsembleConfig {
  int ensemble_size = 5;
  int hidden_neurons = 2;
  int hidden_layers = 1;
  double learning_rate = 0.001;
  double weight_decay = 0.00001;
  int epochs = 4;
  uint64_t seed = 0;
  // engineering knobs the hyperparameter table leaves open
  int batch_size = 32;
  bool adam = true;  // false: plain SGD (decoupled weight decay either way)

  void validate() const {
    if (ensemble_size < 2) throw InvalidConfig("EnsembleConfig: ensemble_size must be >= 2");
    if (hidden_neurons < 1 || hidden_layers < 1 || epochs < 1 || batch_size < 1)
      throw InvalidConfig("EnsembleConfig: counts must be >= 1");
    if (!(learning_rate > 0.0)) throw InvalidConfig("EnsembleConfig: learning_rate must be > 0");
    if (weight_decay < 0.0) throw InvalidConfig("EnsembleConfig: weight_decay must be >= 0");
  }
};

/// Per-dimension affine normalizer; statistics are frozen after training.
struct Normalizer {
  Vec mean;
  Vec std;

  static Normalizer fit(const std::vector<Vec>& rows, int dim) {
    Normalizer n;
    n.mean.assign(dim, 0.0);
    n.std.assign(dim, 0.0);
    if (rows.empty()) return n;
    for (const Vec& r : rows)
      for (int k = 0; k < dim; ++k) n.mean[k] += r[k];
    for (int k = 0; k < dim; ++k) n.mean[k] /= static_cast<double>(rows.size());
    for (const Vec& r : rows)
      for (int k = 0; k < dim; ++k) {
        const double d = r[k] - n.mean[k];
        n.std[k] += d * d;
      }
    for (int k = 0; k < dim; ++k)
      n.std[k] = std::max(std::sqrt(n.std[k] / static_cast<double>(rows.size())), 1e-8);
    return n;
  }

  Vec encode(const Vec& x) const {
    Vec z(x.size());
    for (size_t k = 0; k < x.size(); ++k) z[k] = (x[k] - mean[k]) / std[k];
    return z;
  }

  Vec decode(const Vec& z) const {
    Vec x(z.size());
    for (size_t k = 0; k < z.size(); ++k) x[k] = mean[k] + std[k] * z[k];
    return x;
  }
};

namespace detail {

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// log-variance bounds in normalized units
inline const double kLogVarMin = std::log(kVarianceFloor);
inline const double kLogVarMax = std::log(1e6);

/// Smooth two-sided clamp of the raw log-variance into (kLogVarMin, kLogVarMax).
inline double clamp_logvar(double raw) {
  const double hi = kLogVarMax - softplus(kLogVarMax - raw);
  return kLogVarMin + softplus(hi - kLogVarMin);
}

inline double clamp_logvar_grad(double raw) {
  const double hi = kLogVarMax - softplus(kLogVarMax - raw);
  return sigmoid(kLogVarMax - raw) * sigmoid(hi - kLogVarMin);
}

struct Layer {
  Mat w;  // out x in
  Vec b;
};

struct AdamState {
  std::vector<Mat> mw, vw;
  std::vector<Vec> mb, vb;
  long step = 0;
};

/// Small fully connected net, tanh hidden activations, linear output head of
/// width 2*out (predicted mean, raw log-variance). Backprop is written out
/// by hand; the nets here are a few neurons wide.
struct MemberNet {
  std::vector<Layer> layers;  // hidden layers then output layer
  int in_dim = 0;
  int out_dim = 0;

  static MemberNet make(int in, int out, int hidden, int hidden_layers, Rng& rng) {
    MemberNet net;
    net.in_dim = in;
    net.out_dim = out;
    int prev = in;
    for (int l = 0; l < hidden_layers; ++l) {
      net.layers.push_back(init_layer(hidden, prev, rng));
      prev = hidden;
    }
    net.layers.push_back(init_layer(2 * out, prev, rng));
    return net;
  }

  static Layer init_layer(int out, int in, Rng& rng) {
    Layer l;
    l.w = Mat(out, in);
    l.b.assign(out, 0.0);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& v : l.w.a) v = (2.0 * rng.uniform() - 1.0) * bound;
    for (double& v : l.b) v = (2.0 * rng.uniform() - 1.0) * bound;
    return l;
  }

  struct Cache {
    std::vector<Vec> pre;   // pre-activations per layer
    std::vector<Vec> post;  // inputs to each layer (post[0] = x)
  };

  /// Forward pass in normalized units; returns (mean, clamped log-variance).
  std::pair<Vec, Vec> forward(const Vec& x, Cache* cache = nullptr) const {
    Vec h = x;
    if (cache) {
      cache->pre.clear();
      cache->post.clear();
      cache->post.push_back(h);
    }
    for (size_t l = 0; l + 1 < layers.size(); ++l) {
      Vec a = matvec(layers[l].w, h);
      for (size_t i = 0; i < a.size(); ++i) a[i] += layers[l].b[i];
      if (cache) cache->pre.push_back(a);
      for (double& v : a) v = std::tanh(v);
      h = std::move(a);
      if (cache) cache->post.push_back(h);
    }
    const Layer& out = layers.back();
    Vec y = matvec(out.w, h);
    for (size_t i = 0; i < y.size(); ++i) y[i] += out.b[i];
    if (cache) cache->pre.push_back(y);
    Vec mu(out_dim), logvar(out_dim);
    for (int k = 0; k < out_dim; ++k) {
      mu[k] = y[k];
      logvar[k] = clamp_logvar(y[out_dim + k]);
    }
    return {std::move(mu), std::move(logvar)};
  }

  /// Accumulate parameter gradients for one sample given the gradient of the
  /// loss wrt the output head (mean entries then raw log-variance entries).
  void backward(const Cache& cache, const Vec& d_out, std::vector<Layer>& grads) const {
    Vec delta = d_out;
    for (int l = static_cast<int>(layers.size()) - 1; l >= 0; --l) {
      const Vec& input = cache.post[l];
      Layer& g = grads[l];
      for (int i = 0; i < layers[l].w.rows; ++i) {
        g.b[i] += delta[i];
        for (int j = 0; j < layers[l].w.cols; ++j) g.w(i, j) += delta[i] * input[j];
      }
      if (l == 0) break;
      Vec prev(layers[l].w.cols, 0.0);
      for (int j = 0; j < layers[l].w.cols; ++j) {
        double s = 0.0;
        for (int i = 0; i < layers[l].w.rows; ++i) s += layers[l].w(i, j) * delta[i];
        const double t = std::tanh(cache.pre[l - 1][j]);
        prev[j] = s * (1.0 - t * t);
      }
      delta = std::move(prev);
    }
  }
};

}  // namespace detail

/// Probabilistic ensemble over state deltas. Each member maps normalized
/// (state ⊕ action) to a per-dimension Gaussian over the normalized delta
/// s_{t+1} - s_t; predictions are denormalized back to state units with the
/// current state added back. Immutable once trained.
class EnsembleModel {
 public:
  static constexpr int kFormatVersion = 1;

  EnsemblePredictions predict(const Vec& state, const Vec& action) const {
    if (static_cast<int>(state.size()) != state_dim_ ||
        static_cast<int>(action.size()) != action_dim_)
      throw DimensionMismatch("EnsembleModel::predict: input dimensions disagree");
    Vec x(state);
    x.insert(x.end(), action.begin(), action.end());
    const Vec z = input_norm_.encode(x);
    std::vector<GaussianBelief> beliefs;
    beliefs.reserve(members_.size());
    for (const auto& net : members_) {
      auto [mu_n, logvar_n] = net.forward(z);
      Vec mean = delta_norm_.decode(mu_n);
      Vec var(state_dim_);
      for (int k = 0; k < state_dim_; ++k) {
        mean[k] += state[k];
        var[k] = delta_norm_.std[k] * delta_norm_.std[k] * std::exp(logvar_n[k]);
      }
      beliefs.push_back(GaussianBelief::diagonal(std::move(mean), std::move(var)));
    }
    return EnsemblePredictions(std::move(beliefs));
  }

  int ensemble_size() const { return static_cast<int>(members_.size()); }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  const EnsembleConfig& config() const { return config_; }
  const std::vector<std::vector<double>>& loss_history() const { return loss_history_; }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["format_version"] = kFormatVersion;
    j["config"] = {{"ensemble_size", config_.ensemble_size},
                   {"hidden_neurons", config_.hidden_neurons},
                   {"hidden_layers", config_.hidden_layers},
                   {"learning_rate", config_.learning_rate},
                   {"weight_decay", config_.weight_decay},
                   {"epochs", config_.epochs},
                   {"seed", config_.seed},
                   {"batch_size", config_.batch_size},
                   {"adam", config_.adam}};
    j["state_dim"] = state_dim_;
    j["action_dim"] = action_dim_;
    j["input_normalizer"] = {{"mean", input_norm_.mean}, {"std", input_norm_.std}};
    j["delta_normalizer"] = {{"mean", delta_norm_.mean}, {"std", delta_norm_.std}};
    j["members"] = nlohmann::ordered_json::array();
    for (const auto& net : members_) {
      nlohmann::ordered_json layers = nlohmann::ordered_json::array();
      for (const auto& layer : net.layers) {
        layers.push_back({{"rows", layer.w.rows},
                          {"cols", layer.w.cols},
                          {"w", layer.w.a},
                          {"b", layer.b}});
      }
      j["members"].push_back({{"layers", layers}});
    }
    j["loss_history"] = loss_history_;
    return j;
  }

  static EnsembleModel from_json(const nlohmann::ordered_json& j) {
    if (!j.contains("format_version") || j["format_version"].get<int>() != kFormatVersion)
      throw VersionMismatch("EnsembleModel: unsupported checkpoint format version");
    EnsembleModel m;
    const auto& c = j.at("config");
    m.config_.ensemble_size = c.at("ensemble_size").get<int>();
    m.config_.hidden_neurons = c.at("hidden_neurons").get<int>();
    m.config_.hidden_layers = c.at("hidden_layers").get<int>();
    m.config_.learning_rate = c.at("learning_rate").get<double>();
    m.config_.weight_decay = c.at("weight_decay").get<double>();
    m.config_.epochs = c.at("epochs").get<int>();
    m.config_.seed = c.at("seed").get<uint64_t>();
    m.config_.batch_size = c.at("batch_size").get<int>();
    m.config_.adam = c.at("adam").get<bool>();
    m.state_dim_ = j.at("state_dim").get<int>();
    m.action_dim_ = j.at("action_dim").get<int>();
    m.input_norm_.mean = j.at("input_normalizer").at("mean").get<Vec>();
    m.input_norm_.std = j.at("input_normalizer").at("std").get<Vec>();
    m.delta_norm_.mean = j.at("delta_normalizer").at("mean").get<Vec>();
    m.delta_norm_.std = j.at("delta_normalizer").at("std").get<Vec>();
    for (const auto& jm : j.at("members")) {
      detail::MemberNet net;
      net.in_dim = m.state_dim_ + m.action_dim_;
      net.out_dim = m.state_dim_;
      for (const auto& jl : jm.at("layers")) {
        detail::Layer layer;
        layer.w = Mat(jl.at("rows").get<int>(), jl.at("cols").get<int>());
        layer.w.a = jl.at("w").get<std::vector<double>>();
        layer.b = jl.at("b").get<Vec>();
        net.layers.push_back(std::move(layer));
      }
      m.members_.push_back(std::move(net));
    }
    if (j.contains("loss_history"))
      m.loss_history_ = j.at("loss_history").get<std::vector<std::vector<double>>>();
    return m;
  }

  /// Content hash of the checkpoint; thresholds are bound to this.
  uint64_t hash() const { return fnv1a64(to_json().dump()); }

  std::string hash_hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash()));
    return std::string(buf);
  }

  friend EnsembleModel train(const TransitionBuffer&, const EnsembleConfig&, uint64_t);

 private:
  EnsembleConfig config_;
  Normalizer input_norm_;
  Normalizer delta_norm_;
  std::vector<detail::MemberNet> members_;
  std::vector<std::vector<double>> loss_history_;  // [member][epoch] mean NLL
  int state_dim_ = 0;
  int action_dim_ = 0;
};

/// Train an ensemble on (state, action, next_state) transitions by minimizing
/// the Gaussian negative log-likelihood of the state delta. Members differ
/// only by weight initialization and shuffling; training is deterministic
/// given (dataset, config, seed).
inline EnsembleModel train(const TransitionBuffer& dataset, const EnsembleConfig& config,
                           uint64_t seed) {
  config.validate();
  if (dataset.empty()) throw EmptyDataset("train: dataset is empty");

  const int state_dim = dataset.state_dim();
  const int action_dim = dataset.action_dim();
  const int in_dim = state_dim + action_dim;
  const size_t n = dataset.size();

  std::vector<Vec> inputs, deltas;
  inputs.reserve(n);
  deltas.reserve(n);
  for (const Transition& t : dataset) {
    Vec x(t.state);
    x.insert(x.end(), t.action.begin(), t.action.end());
    inputs.push_back(std::move(x));
    Vec d(state_dim);
    for (int k = 0; k < state_dim; ++k) d[k] = t.next_state[k] - t.state[k];
    deltas.push_back(std::move(d));
  }

  EnsembleModel model;
  model.config_ = config;
  model.state_dim_ = state_dim;
  model.action_dim_ = action_dim;
  model.input_norm_ = Normalizer::fit(inputs, in_dim);
  model.delta_norm_ = Normalizer::fit(deltas, state_dim);

  std::vector<Vec> x_n(n), d_n(n);
  for (size_t i = 0; i < n; ++i) {
    x_n[i] = model.input_norm_.encode(inputs[i]);
    d_n[i] = model.delta_norm_.encode(deltas[i]);
  }

  const double lr = config.learning_rate;
  const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  for (int e = 0; e < config.ensemble_size; ++e) {
    Rng init_rng(derive_seed(seed, "member-init", e));
    Rng shuffle_rng(derive_seed(seed, "member-shuffle", e));
    auto net = detail::MemberNet::make(in_dim, state_dim, config.hidden_neurons,
                                       config.hidden_layers, init_rng);

    std::vector<detail::Layer> grads;
    detail::AdamState adam;
    for (const auto& layer : net.layers) {
      detail::Layer g;
      g.w = Mat(layer.w.rows, layer.w.cols);
      g.b.assign(layer.b.size(), 0.0);
      grads.push_back(g);
      adam.mw.emplace_back(layer.w.rows, layer.w.cols);
      adam.vw.emplace_back(layer.w.rows, layer.w.cols);
      adam.mb.emplace_back(layer.b.size(), 0.0);
      adam.vb.emplace_back(layer.b.size(), 0.0);
    }

    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;

    std::vector<double> epoch_losses;
    detail::MemberNet::Cache cache;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      // Fisher-Yates with our own rng; std::shuffle's draw pattern is
      // implementation defined
      for (size_t i = n - 1; i > 0; --i) {
        const size_t j = shuffle_rng.uniform_index(i + 1);
        std::swap(order[i], order[j]);
      }

      double epoch_loss = 0.0;
      size_t seen = 0;
      for (size_t start = 0; start < n; start += config.batch_size) {
        const size_t stop = std::min(n, start + config.batch_size);
        const double inv_batch = 1.0 / static_cast<double>(stop - start);
        for (auto& g : grads) {
          std::fill(g.w.a.begin(), g.w.a.end(), 0.0);
          std::fill(g.b.begin(), g.b.end(), 0.0);
        }
        double batch_loss = 0.0;
        for (size_t idx = start; idx < stop; ++idx) {
          const Vec& x = x_n[order[idx]];
          const Vec& y = d_n[order[idx]];
          auto [mu, logvar] = net.forward(x, &cache);
          Vec d_out(2 * state_dim, 0.0);
          for (int k = 0; k < state_dim; ++k) {
            const double v = std::exp(logvar[k]);
            const double err = mu[k] - y[k];
            batch_loss += 0.5 * (err * err / v + logvar[k]);
            d_out[k] = err / v * inv_batch;
            const double d_lv = 0.5 * (1.0 - err * err / v) * inv_batch;
            d_out[state_dim + k] =
                d_lv * detail::clamp_logvar_grad(cache.pre.back()[state_dim + k]);
          }
          net.backward(cache, d_out, grads);
        }
        batch_loss *= inv_batch;
        if (!std::isfinite(batch_loss))
          throw NonFiniteLoss("train: non-finite minibatch loss (learning rate too high?)");
        epoch_loss += batch_loss * static_cast<double>(stop - start);
        seen += stop - start;

        adam.step += 1;
        for (size_t l = 0; l < net.layers.size(); ++l) {
          auto update = [&](double& param, double grad, double& m, double& v) {
            if (config.adam) {
              m = beta1 * m + (1.0 - beta1) * grad;
              v = beta2 * v + (1.0 - beta2) * grad * grad;
              const double mh = m / (1.0 - std::pow(beta1, adam.step));
              const double vh = v / (1.0 - std::pow(beta2, adam.step));
              param -= lr * mh / (std::sqrt(vh) + adam_eps);
            } else {
              param -= lr * grad;
            }
            param -= lr * config.weight_decay * param;
          };
          for (size_t i = 0; i < net.layers[l].w.a.size(); ++i)
            update(net.layers[l].w.a[i], grads[l].w.a[i], adam.mw[l].a[i], adam.vw[l].a[i]);
          for (size_t i = 0; i < net.layers[l].b.size(); ++i)
            update(net.layers[l].b[i], grads[l].b[i], adam.mb[l][i], adam.vb[l][i]);
        }
      }
      epoch_losses.push_back(epoch_loss / static_cast<double>(seen));
    }
    model.members_.push_back(std::move(net));
    model.loss_history_.push_back(std::move(epoch_losses));
  }
  return model;
}

inline EnsembleModel train(const TransitionBuffer& dataset, const EnsembleConfig& config) {
  return train(dataset, config, config.seed);
}

/// Uniform draw of a member index in [0, E).
template <class Model>
int sample_member(const Model& model, Rng& rng) {
  return static_cast<int>(rng.uniform_index(model.ensemble_size()));
}

/// Fraction of the given (state, action) points at which every member's
/// predicted variance dominates the true variance elementwise. A measured
/// diagnostic for the consistency assumption, not an enforced invariant.
inline double assumption1_fraction(const EnsembleModel& model,
                                   const std::vector<std::pair<Vec, Vec>>& points,
                                   const std::function<Vec(const Vec&, const Vec&)>& true_var) {
  if (points.empty()) throw EmptyInput("assumption1_fraction: no points");
  size_t ok = 0;
  for (const auto& [s, a] : points) {
    const EnsemblePredictions preds = model.predict(s, a);
    const Vec tv = true_var(s, a);
    bool dominated = true;
    for (const auto& b : preds.members)
      for (int k = 0; k < b.dim(); ++k)
        if (b.var_diag()[k] < tv[k]) dominated = false;
    if (dominated) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(points.size());
}

}  // namespace infoprop
