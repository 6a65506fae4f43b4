#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <vector>

#include "repmil/error.hpp"
#include "repmil/rng.hpp"

namespace repmil {

struct FoldPlan {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::size_t>> folds;  // sample indices, ascending

  std::vector<std::size_t> train_indices(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t f = 0; f < folds.size(); ++f)
      if (f != fold) out.insert(out.end(), folds[f].begin(), folds[f].end());
    std::sort(out.begin(), out.end());
    return out;
  }
};

// Within each class, shuffle with the seed and deal round-robin; the dealing
// position carries over between classes so fold sizes stay balanced.
inline FoldPlan stratified_kfold(std::span<const int> labels, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("k-fold needs k >= 2");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  for (const auto& [c, members] : by_class)
    if (members.size() < k)
      throw Error("class " + std::to_string(c) + " has " + std::to_string(members.size()) + " samples, fewer than k = " +
                  std::to_string(k));
  FoldPlan plan{k, seed, std::vector<std::vector<std::size_t>>(k)};
  const CounterRng root(seed);
  std::size_t next = 0;
  for (auto& [c, members] : by_class) {
    CounterRng rng = root.split(static_cast<std::uint64_t>(static_cast<std::int64_t>(c)));
    rng.shuffle(members);
    for (std::size_t i : members) {
      plan.folds[next].push_back(i);
      next = (next + 1) % k;
    }
  }
  for (auto& f : plan.folds) std::sort(f.begin(), f.end());
  return plan;
}

// Mann-Whitney statistic via midranks, O(n log n). Ties count one half.
inline double roc_auc(std::span<const double> scores, std::span<const int> positive) {
  if (scores.size() != positive.size()) throw ShapeError("scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double n_pos = 0, n_neg = 0, pos_rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t) {
      if (positive[order[t]]) {
        pos_rank_sum += midrank;
        n_pos += 1;
      } else {
        n_neg += 1;
      }
    }
    i = j;
  }
  if (n_pos == 0 || n_neg == 0) throw Error("AUC needs both positive and negative samples");
  return (pos_rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg);
}

struct MetricRow {
  double acc = 0, auc = 0, precision = 0, recall = 0, f1 = 0;  // percent
  std::size_t count = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// probs: one row of class probabilities per sample. Binary tasks report
// precision/recall/F1 of class 1 and AUC of its probability; multiclass
// tasks macro-average over classes with one-vs-rest AUC.
inline MetricRow metrics_suite(const std::vector<std::vector<double>>& probs, std::span<const int> labels,
                               std::size_t n_classes) {
  if (probs.empty()) throw Error("no predictions to evaluate");
  if (probs.size() != labels.size()) throw ShapeError("predictions and labels differ in length");
  if (n_classes < 2) throw ConfigError("metrics need at least two classes");
  MetricRow row;
  row.count = probs.size();
  row.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes) throw Error("label out of range");
    if (probs[i].size() != n_classes) throw ShapeError("probability row has wrong width");
    const std::size_t pred = argmax(probs[i]);
    ++row.confusion[static_cast<std::size_t>(labels[i])][pred];
    if (pred == static_cast<std::size_t>(labels[i])) ++correct;
  }
  row.acc = 100.0 * static_cast<double>(correct) / static_cast<double>(row.count);

  auto class_prf = [&](std::size_t c, double& p, double& r, double& f) {
    double tp = static_cast<double>(row.confusion[c][c]), fp = 0, fn = 0;
    for (std::size_t o = 0; o < n_classes; ++o) {
      if (o == c) continue;
      fp += static_cast<double>(row.confusion[o][c]);
      fn += static_cast<double>(row.confusion[c][o]);
    }
    p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  };
  auto class_auc = [&](std::size_t c, double& out) {
    std::vector<double> s;
    std::vector<int> y;
    bool pos = false, neg = false;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      s.push_back(probs[i][c]);
      const int is = labels[i] == static_cast<int>(c);
      y.push_back(is);
      (is ? pos : neg) = true;
    }
    if (!(pos && neg)) return false;
    out = roc_auc(s, y);
    return true;
  };

  if (n_classes == 2) {
    class_prf(1, row.precision, row.recall, row.f1);
    double auc = 0;
    row.auc = class_auc(1, auc) ? 100.0 * auc : std::nan("");
  } else {
    double sp = 0, sr = 0, sf = 0, sa = 0;
    std::size_t na = 0;
    for (std::size_t c = 0; c < n_classes; ++c) {
      double p, r, f, a;
      class_prf(c, p, r, f);
      sp += p;
      sr += r;
      sf += f;
      if (class_auc(c, a)) {
        sa += a;
        ++na;
      }
    }
    const double nc = static_cast<double>(n_classes);
    row.precision = sp / nc;
    row.recall = sr / nc;
    row.f1 = sf / nc;
    row.auc = na ? 100.0 * sa / static_cast<double>(na) : std::nan("");
  }
  row.precision *= 100.0;
  row.recall *= 100.0;
  row.f1 *= 100.0;
  return row;
}

}  // namespace repmil
