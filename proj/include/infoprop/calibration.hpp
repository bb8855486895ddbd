#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "infoprop/dataset.hpp"
#include "infoprop/rollout.hpp"

namespace infoprop {

/// Margin in bits added above the entropy floor when clamping thresholds.
inline constexpr double kThresholdMarginBits = 1.0;

/// Dimension-wise single-step Infoprop entropies, one entry per buffer
/// transition.
struct EntropySets {
  std::vector<std::vector<double>> per_dim;  // [k][b]

  int dim() const { return static_cast<int>(per_dim.size()); }
  size_t entries() const { return per_dim.empty() ? 0 : per_dim.front().size(); }
};

/// Single-step conditional entropies over a buffer of real transitions. The
/// buffer's next_state plays no role: the entropy depends only on the
/// conditioned covariance, which depends only on (s, a). One model sample is
/// still drawn per transition to mirror the single-step prediction pass; it
/// affects nothing downstream.
template <class Model>
EntropySets entropy_sets(const Model& model, const TransitionBuffer& buffer,
                         const QuantizationSpec& q, uint64_t seed, size_t subsample = 0) {
  if (buffer.empty()) throw EmptyBuffer("entropy_sets: buffer is empty");
  const size_t stride =
      (subsample > 0 && subsample < buffer.size()) ? buffer.size() / subsample : 1;
  EntropySets sets;
  sets.per_dim.assign(q.dim(), {});
  for (size_t b = 0; b < buffer.size(); b += stride) {
    Rng rng(derive_seed(seed, "entropy-set", b));
    const Transition& tr = buffer[b];
    const EnsemblePredictions preds = model.predict(tr.state, tr.action);
    const FusedPrediction fused = fuse(preds);
    const int e = static_cast<int>(rng.uniform_index(preds.size()));
    const Vec w = rng.normal_vec(fused.dim());
    const Vec s_hat = draw_model_sample(fused, preds, e, w);
    const InfopropStep step = condition(fused, s_hat, q);
    for (int k = 0; k < q.dim(); ++k) sets.per_dim[k].push_back(step.entropy_per_dim[k]);
  }
  return sets;
}

/// Lower sample quantile on the empirical CDF: the smallest element h with
/// F(h) >= zeta. No interpolation; the result is always a set element.
inline double quantile(std::vector<double> set, double zeta) {
  if (set.empty()) throw EmptySet("quantile: empty entropy set");
  if (!(zeta > 0.0) || zeta > 1.0) throw InvalidConfig("quantile: zeta must be in (0, 1]");
  std::sort(set.begin(), set.end());
  const double n = static_cast<double>(set.size());
  size_t idx = static_cast<size_t>(std::ceil(zeta * n));
  if (idx == 0) idx = 1;
  if (idx > set.size()) idx = set.size();
  return set[idx - 1];
}

/// lambda1_k = zeta1-quantile of H^k; lambda2_k = xi * (zeta2-quantile of
/// H^k). Both are clamped to the entropy floor plus a margin: quantized
/// entropies can be negative, and a negative lambda2 would terminate every
/// rollout at step zero.
inline Thresholds thresholds_from_sets(const EntropySets& sets, double zeta1, double zeta2,
                                       double xi, const QuantizationSpec& q) {
  if (sets.dim() != q.dim()) throw DimensionMismatch("thresholds: dimension disagrees");
  Thresholds t;
  t.lambda1.resize(sets.dim());
  t.lambda2.resize(sets.dim());
  const Vec floor = floor_entropy_bits(q);
  for (int k = 0; k < sets.dim(); ++k) {
    t.lambda1[k] = std::max(quantile(sets.per_dim[k], zeta1), floor[k] + kThresholdMarginBits);
    t.lambda2[k] = std::max(xi * quantile(sets.per_dim[k], zeta2), floor[k] + kThresholdMarginBits);
  }
  return t;
}

template <class Model>
Thresholds compute_thresholds(const Model& model, const TransitionBuffer& buffer, double zeta1,
                              double zeta2, double xi, const QuantizationSpec& q, uint64_t seed,
                              size_t subsample = 0) {
  return thresholds_from_sets(entropy_sets(model, buffer, q, seed, subsample), zeta1, zeta2, xi, q);
}

// --- persistence -----------------------------------------------------------

inline nlohmann::ordered_json thresholds_to_json(const Thresholds& t,
                                                 const std::string& model_hash) {
  nlohmann::ordered_json j;
  j["model_hash"] = model_hash;
  j["lambda1"] = t.lambda1;
  j["lambda2"] = t.lambda2;
  return j;
}

/// Loading thresholds calibrated against a different model checkpoint is a
/// hard error.
inline Thresholds thresholds_from_json(const nlohmann::ordered_json& j,
                                       const std::string& expected_model_hash) {
  const std::string stored = j.at("model_hash").get<std::string>();
  if (!expected_model_hash.empty() && stored != expected_model_hash)
    throw HashMismatch("thresholds were calibrated against model " + stored + ", expected " +
                       expected_model_hash);
  Thresholds t;
  t.lambda1 = j.at("lambda1").get<Vec>();
  t.lambda2 = j.at("lambda2").get<Vec>();
  return t;
}

}  // namespace infoprop
