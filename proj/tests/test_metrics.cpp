#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "fixtures.hpp"
#include "repmil/metrics.hpp"
#include "repmil/report.hpp"

using namespace repmil;
using namespace repmil::testing;

namespace {

// Probability of a random positive outranking a random negative, ties 1/2.
double pair_count_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] && !y[j]) {
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  return wins / pairs;
}

std::vector<std::vector<double>> binary_probs(std::initializer_list<double> p1) {
  std::vector<std::vector<double>> out;
  for (double p : p1) out.push_back({1 - p, p});
  return out;
}

}  // namespace

TEST(RocAuc, Examples) {
  const std::vector<double> s = {0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y = {0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(roc_auc(s, y), 0.75);
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, y), 0.5);
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, y), 1.0);
  EXPECT_THROW(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), Error);
  EXPECT_THROW(roc_auc(std::vector<double>{0.1}, std::vector<int>{1, 0}), ShapeError);
}

TEST(RocAuc, MatchesPairCountingWithTies) {
  CounterRng rng(21);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + rng.below(40);
    std::vector<double> s;
    std::vector<int> y;
    for (std::size_t i = 0; i < n; ++i) {
      s.push_back(static_cast<double>(rng.below(6)) / 5.0);
      y.push_back(static_cast<int>(rng.below(2)));
    }
    y[0] = 0;
    y[1] = 1;
    EXPECT_NEAR(roc_auc(s, y), pair_count_auc(s, y), 1e-12);
  }
}

TEST(MetricsSuite, PrecisionRecallF1Example) {
  const auto row = metrics_suite(binary_probs({0.9, 0.6}), std::vector<int>{1, 0}, 2);
  EXPECT_DOUBLE_EQ(row.precision, 50.0);
  EXPECT_DOUBLE_EQ(row.recall, 100.0);
  EXPECT_NEAR(row.f1, 66.6667, 1e-4);
  EXPECT_EQ(round2(row.f1), 66.67);
  EXPECT_DOUBLE_EQ(row.acc, 50.0);
  EXPECT_EQ(row.confusion, (std::vector<std::vector<std::size_t>>{{0, 1}, {0, 1}}));
}

TEST(MetricsSuite, AllCorrectAndConstantPredictor) {
  const std::vector<int> y = {0, 1, 0, 1};
  const auto good = metrics_suite(binary_probs({0.1, 0.9, 0.2, 0.7}), y, 2);
  EXPECT_EQ(good.acc, 100.0);
  EXPECT_EQ(good.auc, 100.0);
  EXPECT_EQ(good.f1, 100.0);
  const auto flat = metrics_suite(binary_probs({0.3, 0.3, 0.3, 0.3}), y, 2);
  EXPECT_EQ(flat.acc, 50.0);
  EXPECT_EQ(flat.auc, 50.0);
  EXPECT_EQ(flat.precision, 0.0);
  EXPECT_EQ(flat.f1, 0.0);
}

TEST(MetricsSuite, SingleClassAucIsUndefined) {
  const auto row = metrics_suite(binary_probs({0.2, 0.7}), std::vector<int>{1, 1}, 2);
  EXPECT_TRUE(std::isnan(row.auc));
  EXPECT_TRUE(to_json(row)["auc"].is_null());
}

TEST(MetricsSuite, MulticlassMacroAverages) {
  const std::vector<std::vector<double>> p = {{0.8, 0.1, 0.1}, {0.1, 0.8, 0.1}, {0.1, 0.1, 0.8}, {0.6, 0.3, 0.1}};
  const std::vector<int> y = {0, 1, 2, 1};
  const auto row = metrics_suite(p, y, 3);
  EXPECT_DOUBLE_EQ(row.acc, 75.0);
  // Per class P/R: c0 = 1/2, 1; c1 = 1, 1/2; c2 = 1, 1.
  EXPECT_NEAR(row.precision, 100.0 * (0.5 + 1 + 1) / 3, 1e-12);
  EXPECT_NEAR(row.recall, 100.0 * (1 + 0.5 + 1) / 3, 1e-12);
  EXPECT_NEAR(row.f1, 100.0 * (2.0 / 3 + 2.0 / 3 + 1) / 3, 1e-12);
  const double a0 = pair_count_auc({0.8, 0.1, 0.1, 0.6}, {1, 0, 0, 0});
  const double a1 = pair_count_auc({0.1, 0.8, 0.1, 0.3}, {0, 1, 0, 1});
  const double a2 = pair_count_auc({0.1, 0.1, 0.8, 0.1}, {0, 0, 1, 0});
  EXPECT_NEAR(row.auc, 100.0 * (a0 + a1 + a2) / 3, 1e-12);
  EXPECT_THROW(metrics_suite(p, std::vector<int>{0, 1, 3, 1}, 3), Error);
  EXPECT_THROW(metrics_suite({}, std::vector<int>{}, 3), Error);
}

TEST(StratifiedKFold, BalancedFolds) {
  const std::vector<int> y = {0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
  const auto plan = stratified_kfold(y, 5, 7);
  ASSERT_EQ(plan.folds.size(), 5u);
  for (const auto& f : plan.folds) {
    ASSERT_EQ(f.size(), 2u);
    EXPECT_NE(y[f[0]], y[f[1]]);
  }
}

TEST(StratifiedKFold, PartitionAndDeterminism) {
  CounterRng rng(4);
  for (int t = 0; t < 30; ++t) {
    const std::size_t k = 2 + rng.below(5);
    std::vector<int> y;
    for (int c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < k + rng.below(10); ++i) y.push_back(c);
    rng.shuffle(y);
    const auto plan = stratified_kfold(y, k, 100 + t);
    std::multiset<std::size_t> seen;
    for (std::size_t f = 0; f < k; ++f) {
      seen.insert(plan.folds[f].begin(), plan.folds[f].end());
      const auto train = plan.train_indices(f);
      EXPECT_EQ(train.size() + plan.folds[f].size(), y.size());
      for (std::size_t i : plan.folds[f]) EXPECT_FALSE(std::binary_search(train.begin(), train.end(), i));
      // Per class, fold sizes differ by at most one from the even share.
      for (int c = 0; c < 3; ++c) {
        const double share = static_cast<double>(std::count(y.begin(), y.end(), c)) / static_cast<double>(k);
        const auto in_fold = std::count_if(plan.folds[f].begin(), plan.folds[f].end(), [&](std::size_t i) { return y[i] == c; });
        EXPECT_LE(std::abs(static_cast<double>(in_fold) - share), 1.0);
      }
    }
    EXPECT_EQ(seen.size(), y.size());
    EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), y.size());
    EXPECT_EQ(stratified_kfold(y, k, 100 + t).folds, plan.folds);
  }
}

TEST(StratifiedKFold, LeaveOneOutAndPreconditions) {
  const std::vector<int> y(6, 0);
  const auto plan = stratified_kfold(y, 6, 1);
  for (const auto& f : plan.folds) EXPECT_EQ(f.size(), 1u);
  EXPECT_THROW(stratified_kfold(std::vector<int>{0, 0, 1}, 2, 1), Error);
  EXPECT_THROW(stratified_kfold(y, 1, 1), ConfigError);
}

TEST(Report, RoundingAndLayout) {
  EXPECT_EQ(round2(66.666666), 66.67);
  EXPECT_EQ(round2(12.344), 12.34);
  EvalReport r;
  r.n_classes = 2;
  r.k = 2;
  r.seed = 5;
  r.folds.push_back(metrics_suite(binary_probs({0.9, 0.6}), std::vector<int>{1, 0}, 2));
  r.folds.push_back(metrics_suite(binary_probs({0.2, 0.7}), std::vector<int>{1, 1}, 2));
  r.mean = fold_mean(r.folds);
  r.samples = {{"a", 1, 0, {0.1, 0.9}}, {"b", 0, 0, {0.4, 0.6}}};
  r.pooled = score_metrics(r.samples, 2);
  const auto j = report_json(r, {{"neg", "pos"}, 0.25, {}});
  EXPECT_EQ(j["n_classes"], 2);
  EXPECT_EQ(j["class_names"][1], "pos");
  EXPECT_EQ(j["folds"].size(), 2u);
  EXPECT_EQ(j["folds"][0]["f1"], 66.67);
  EXPECT_TRUE(j["mean"]["auc"].is_null());
  EXPECT_EQ(j["witness_recovery"], 0.25);
  const auto csv_text = report_csv(r);
  EXPECT_EQ(csv_text.substr(0, csv_text.find('\n')), "fold,acc,auc,precision,recall,f1,count");
  EXPECT_NE(csv_text.find("\n0,50.00,100.00,50.00,100.00,66.67,2\n"), std::string::npos);
  EXPECT_NE(csv_text.find("\nmean,"), std::string::npos);
  EXPECT_NE(csv_text.find("\npooled,"), std::string::npos);
  EXPECT_EQ(scores_csv(r), "sample_id,true_label,fold,score_0,score_1\na,1,0,0.1,0.9\nb,0,0,0.4,0.6\n");
}
