#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "repmil/error.hpp"
#include "repmil/model.hpp"

namespace repmil {

struct LossConfig {
  // Sample-loss weight; the instance loss gets 1 - c1.
  double c1 = 0.7;
  std::size_t k = 8;
  double tau = 1.0;
  bool use_bottom_k_negatives = true;
  // Only the true-class branch's top-k positives are pseudo-labelled.
  bool positives_only = false;
  double loc_weight = 1.0;

  double c2() const noexcept { return 1.0 - c1; }

  void validate() const {
    if (!(c1 >= 0.0 && c1 <= 1.0)) throw ConfigError("c1 must lie in [0, 1]");
    if (k < 1) throw ConfigError("k must be >= 1");
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (!(loc_weight >= 0.0)) throw ConfigError("loc_weight must be >= 0");
  }
};

// Indices of the k largest weights, largest first; ties go to the lower index.
template <typename T>
std::vector<std::size_t> select_topk_instances(std::span<const T> weights, std::size_t k) {
  std::vector<std::size_t> idx(weights.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t keep = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep), idx.end(), [&](std::size_t a, std::size_t b) {
    return weights[a] != weights[b] ? weights[a] > weights[b] : a < b;
  });
  idx.resize(keep);
  return idx;
}

// k smallest weights, smallest first, skipping `exclude`; ties to lower index.
template <typename T>
std::vector<std::size_t> select_bottomk_instances(std::span<const T> weights, std::size_t k,
                                                  std::span<const std::size_t> exclude = {}) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < weights.size(); ++i)
    if (std::find(exclude.begin(), exclude.end(), i) == exclude.end()) idx.push_back(i);
  const std::size_t keep = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep), idx.end(), [&](std::size_t a, std::size_t b) {
    return weights[a] != weights[b] ? weights[a] < weights[b] : a < b;
  });
  idx.resize(keep);
  return idx;
}

// Temperature-smoothed multiclass hinge:
//   tau * log sum_j exp((margin(j, y) + s_j - s_y) / tau), margin = [j != y].
// Fills `grad` (d loss / d s) when given.
template <typename T>
T smooth_top1_svm(std::span<const T> scores, std::size_t y, double tau, std::span<T> grad = {}) {
  if (!(tau > 0.0)) throw ConfigError("smooth SVM temperature must be positive");
  if (y >= scores.size()) throw Error("pseudo-label out of range");
  const T t = static_cast<T>(tau);
  std::vector<T> z(scores.size());
  for (std::size_t j = 0; j < scores.size(); ++j) z[j] = ((j == y ? T(0) : T(1)) + scores[j] - scores[y]) / t;
  const T lse = detail::log_sum_exp<T>(z);
  if (!grad.empty()) {
    for (std::size_t j = 0; j < scores.size(); ++j) grad[j] = std::exp(z[j] - lse) - (j == y ? T(1) : T(0));
  }
  // The j = y term contributes exp(0), so lse >= 0 mathematically.
  return std::max(t * lse, T(0));
}

struct PseudoLabel {
  std::size_t branch;
  std::size_t instance;
  std::size_t label;  // 1 = positive evidence
};

template <typename T>
std::vector<PseudoLabel> assign_pseudo_labels(const BagOutput<T>& bag, std::size_t bag_label, const LossConfig& cfg) {
  const auto& w = bag.attention.weights;
  const std::size_t C = w.rows();
  if (w.cols() < 1) throw Error("instance loss needs at least one instance");
  if (bag_label >= C) throw Error("bag label out of range");
  std::vector<PseudoLabel> out;
  const auto top = select_topk_instances<T>(w.row(bag_label), cfg.k);
  for (auto i : top) out.push_back({bag_label, i, 1});
  if (cfg.positives_only) return out;
  if (cfg.use_bottom_k_negatives) {
    for (auto i : select_bottomk_instances<T>(w.row(bag_label), cfg.k, top)) out.push_back({bag_label, i, 0});
  }
  for (std::size_t c = 0; c < C; ++c) {
    if (c == bag_label) continue;
    for (auto i : select_topk_instances<T>(w.row(c), cfg.k)) out.push_back({c, i, 0});
  }
  return out;
}

template <typename T>
struct InstanceLoss {
  T value = 0;
  std::size_t count = 0;
  std::vector<PseudoLabel> labels;
};

// Mean smooth-SVM loss over pseudo-labelled instances.
template <typename T>
InstanceLoss<T> instance_loss(const BagOutput<T>& bag, std::size_t bag_label, const LossConfig& cfg) {
  InstanceLoss<T> out;
  out.labels = assign_pseudo_labels(bag, bag_label, cfg);
  out.count = out.labels.size();
  T sum = 0;
  for (const auto& pl : out.labels) {
    const T s[2] = {bag.instance_logit(pl.branch, pl.instance, 0), bag.instance_logit(pl.branch, pl.instance, 1)};
    sum += smooth_top1_svm<T>(std::span<const T>(s, 2), pl.label, cfg.tau);
  }
  out.value = out.count ? sum / static_cast<T>(out.count) : T(0);
  return out;
}

inline constexpr double kProbFloor = 1e-12;

// Cross-entropy from logits: -log(max(softmax(logits)[y], 1e-12)).
template <typename T>
T cross_entropy_from_logits(std::span<const T> logits, std::size_t y) {
  if (y >= logits.size()) throw Error("label " + std::to_string(y) + " out of range for " + std::to_string(logits.size()) + " classes");
  const T nll = detail::log_sum_exp<T>(logits) - logits[y];
  return std::min(nll, static_cast<T>(-std::log(kProbFloor)));
}

// -log(max(probs[y], 1e-12)).
template <typename T>
T sample_loss(std::span<const T> probs, std::size_t y) {
  if (y >= probs.size()) throw Error("label " + std::to_string(y) + " out of range for " + std::to_string(probs.size()) + " classes");
  return -std::log(std::max(probs[y], static_cast<T>(kProbFloor)));
}

template <typename T>
T total_loss(T sample, T instance, std::optional<T> location, const LossConfig& cfg) {
  T total = static_cast<T>(cfg.c1) * sample + static_cast<T>(cfg.c2()) * instance;
  if (location) total += static_cast<T>(cfg.loc_weight) * *location;
  return total;
}

template <typename T>
struct LossBreakdown {
  T sample = 0;
  T instance = 0;
  std::optional<T> location;
  T total = 0;
  std::size_t pseudo_labelled = 0;
};

}  // namespace repmil
