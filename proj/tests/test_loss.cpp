#include <gtest/gtest.h>

#include <cmath>

#include "repmil/loss.hpp"
#include "repmil/model.hpp"
#include "support.hpp"

using namespace repmil;
using namespace repmil::testing;

namespace {

double svm(double s0, double s1, std::size_t y, double tau) {
  const double s[2] = {s0, s1};
  return smooth_top1_svm<double>(std::span<const double>(s, 2), y, tau);
}

// Hinge with unit margin: max(0, max_{j != y}(1 + s_j - s_y)).
double hinge(std::span<const double> s, std::size_t y) {
  double m = 0;
  for (std::size_t j = 0; j < s.size(); ++j)
    if (j != y) m = std::max(m, 1.0 + s[j] - s[y]);
  return m;
}

BagOutput<double> bag_with_weights(std::vector<std::vector<double>> rows) {
  BagOutput<double> b;
  const std::size_t C = rows.size(), n = rows[0].size();
  b.attention.weights = Matrix<double>(C, n);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t k = 0; k < n; ++k) b.attention.weights(c, k) = rows[c][k];
  b.instance_logits = Matrix<double>(C, 2 * n);
  return b;
}

}  // namespace

TEST(TopK, Examples) {
  const std::vector<double> w = {0.1, 0.7, 0.2};
  EXPECT_EQ(select_topk_instances<double>(w, 1), (std::vector<std::size_t>{1}));
  EXPECT_EQ(select_topk_instances<double>(w, 10), (std::vector<std::size_t>{1, 2, 0}));
  const std::vector<double> tied = {0.25, 0.5, 0.25, 0.5};
  EXPECT_EQ(select_topk_instances<double>(tied, 1), (std::vector<std::size_t>{1}));
  EXPECT_EQ(select_topk_instances<double>(tied, 3), (std::vector<std::size_t>{1, 3, 0}));
}

TEST(BottomK, ExcludesTopSet) {
  const std::vector<double> w = {0.4, 0.3, 0.2, 0.1};
  const auto top = select_topk_instances<double>(w, 3);
  EXPECT_EQ(select_bottomk_instances<double>(w, 3, top), (std::vector<std::size_t>{3}));
}

TEST(SmoothSvm, ClosedForms) {
  EXPECT_NEAR(svm(0, 10, 1, 1.0), std::log1p(std::exp(-9.0)), 1e-15);
  EXPECT_NEAR(svm(0, 10, 1, 1.0), 1.234e-4, 5e-8);
  EXPECT_NEAR(svm(3, 3, 0, 1.0), std::log(1 + std::exp(1.0)), 1e-15);
  EXPECT_NEAR(svm(3, 3, 0, 1.0), 1.31326, 5e-6);
}

TEST(SmoothSvm, SmallTemperatureApproachesHinge) {
  CounterRng rng(21);
  for (int i = 0; i < 1000; ++i) {
    const double s[2] = {3 * rng.normal(), 3 * rng.normal()};
    const std::size_t y = rng.below(2);
    const double l = smooth_top1_svm<double>(std::span<const double>(s, 2), y, 1e-3);
    EXPECT_NEAR(l, hinge(s, y), 1e-3);
    EXPECT_GE(l, 0.0);
  }
}

TEST(SmoothSvm, GradientMatchesDifferences) {
  CounterRng rng(22);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> s = {rng.normal(), rng.normal(), rng.normal()};
    const std::size_t y = rng.below(3);
    const double tau = 0.2 + rng.uniform();
    std::vector<double> g(3);
    smooth_top1_svm<double>(s, y, tau, g);
    for (std::size_t j = 0; j < 3; ++j) {
      auto up = s, dn = s;
      up[j] += 1e-6;
      dn[j] -= 1e-6;
      const double fd = (smooth_top1_svm<double>(up, y, tau) - smooth_top1_svm<double>(dn, y, tau)) / 2e-6;
      EXPECT_NEAR(g[j], fd, 1e-7);
    }
  }
}

TEST(SmoothSvm, RejectsBadInput) {
  const std::vector<double> s = {0, 1};
  EXPECT_THROW(smooth_top1_svm<double>(s, 0, 0.0), ConfigError);
  EXPECT_THROW(smooth_top1_svm<double>(s, 2, 1.0), Error);
}

TEST(PseudoLabels, CountsWithNegatives) {
  LossConfig cfg;
  cfg.k = 2;
  const auto bag = bag_with_weights({{0.1, 0.2, 0.3, 0.15, 0.25}, {0.3, 0.1, 0.2, 0.25, 0.15}});
  const auto labels = assign_pseudo_labels(bag, 1, cfg);
  EXPECT_EQ(labels.size(), 3 * cfg.k);
  // true branch: top {0, 3} positive, bottom {1, 4} negative; other branch top {2, 4} negative
  std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> got;
  for (const auto& l : labels) got.emplace_back(l.branch, l.instance, l.label);
  const std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> want = {
      {1, 0, 1}, {1, 3, 1}, {1, 1, 0}, {1, 4, 0}, {0, 2, 0}, {0, 4, 0}};
  EXPECT_EQ(got, want);
  cfg.use_bottom_k_negatives = false;
  EXPECT_EQ(assign_pseudo_labels(bag, 1, cfg).size(), 2 * cfg.k);
  cfg.positives_only = true;
  EXPECT_EQ(assign_pseudo_labels(bag, 1, cfg).size(), cfg.k);
}

TEST(PseudoLabels, SmallBagClampsNegatives) {
  LossConfig cfg;
  cfg.k = 8;
  const auto bag = bag_with_weights({{0.2, 0.3, 0.5}, {0.5, 0.3, 0.2}});
  const auto labels = assign_pseudo_labels(bag, 0, cfg);
  // 3 positives, no instance left for bottom-k, 3 other-branch negatives
  EXPECT_EQ(labels.size(), 6u);
}

TEST(InstanceLoss, ZeroLogitsGiveLogOnePlusE) {
  LossConfig cfg;
  cfg.k = 2;
  const auto bag = bag_with_weights({{0.1, 0.2, 0.3, 0.4}, {0.4, 0.3, 0.2, 0.1}});
  const auto il = instance_loss(bag, 0, cfg);
  EXPECT_EQ(il.count, 6u);
  EXPECT_NEAR(il.value, std::log(1 + std::exp(1.0)), 1e-15);
}

TEST(SampleLoss, Examples) {
  const std::vector<double> perfect = {1, 0}, uniform = {0.5, 0.5}, skew = {0.25, 0.75};
  EXPECT_EQ(sample_loss<double>(perfect, 0), 0.0);
  EXPECT_NEAR(sample_loss<double>(uniform, 0), 0.69315, 5e-6);
  EXPECT_NEAR(sample_loss<double>(skew, 1), 0.28768, 5e-6);
  EXPECT_NEAR(sample_loss<double>(perfect, 1), -std::log(1e-12), 1e-9);
  EXPECT_THROW(sample_loss<double>(perfect, 2), Error);
}

TEST(CrossEntropy, MatchesProbabilityForm) {
  const std::vector<double> logits = {0.3, -1.2, 2.0};
  double z = 0;
  for (double v : logits) z += std::exp(v);
  for (std::size_t y = 0; y < 3; ++y) EXPECT_NEAR(cross_entropy_from_logits<double>(logits, y), -std::log(std::exp(logits[y]) / z), 1e-14);
  const std::vector<double> extreme = {100, -100};
  EXPECT_NEAR(cross_entropy_from_logits<double>(extreme, 1), -std::log(1e-12), 1e-9);
}

TEST(TotalLoss, Weighting) {
  LossConfig cfg;
  cfg.c1 = 1.0;
  EXPECT_EQ(total_loss<double>(0.4, 9.0, std::nullopt, cfg), 0.4);
  cfg.c1 = 0.7;
  EXPECT_NEAR(total_loss<double>(1.0, 2.0, std::nullopt, cfg), 1.3, 1e-15);
  cfg.c1 = 0.5;
  EXPECT_NEAR(total_loss<double>(0.8, 0.8, std::nullopt, cfg), 0.8, 1e-15);
  cfg.loc_weight = 2.0;
  EXPECT_NEAR(total_loss<double>(0.8, 0.8, 0.25, cfg), 1.3, 1e-15);
}

TEST(LossConfig, Validation) {
  LossConfig cfg;
  cfg.c1 = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.k = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.tau = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}
