#include <gtest/gtest.h>

#include "repmil/backward.hpp"
#include "support.hpp"

using namespace repmil;
using namespace repmil::testing;

namespace {

struct Case {
  ModelConfig cfg;
  ModelParams<double> params;
  SparseRows<double> x;
  std::vector<double> cov;
  std::size_t label = 0;
  std::optional<std::size_t> location;
};

Case make_case(std::uint64_t seed, double dropout, bool with_location) {
  CounterRng rng(seed);
  Case c;
  c.cfg = tiny_config(rng);
  c.cfg.dropout = dropout;
  if (with_location) {
    c.cfg.n_locations = 2 + rng.below(2);
    c.cfg.covariate_dim = 1 + rng.below(2);
  }
  c.params = ModelParams<double>::zeros(c.cfg);
  randomize(c.params, rng);
  const std::size_t n = 2 + rng.below(4);
  c.x = SparseRows<double>::from_dense(random_dense(n, c.cfg.input_dim, rng, 0.3));
  for (std::size_t q = 0; q < c.cfg.covariate_dim; ++q) c.cov.push_back(rng.normal());
  c.label = rng.below(c.cfg.n_classes);
  if (with_location) c.location = rng.below(c.cfg.n_locations);
  return c;
}

GradCheckResult check(const Case& c, const LossConfig& lc, std::uint64_t drop_seed) {
  const BagExample<double> ex{&c.x, c.label, c.cov, c.location};
  const CounterRng drop(drop_seed);
  CounterRng r1 = drop;
  const auto res = compute_gradients(ex, c.params, c.cfg, lc, Mode::train, &r1);
  return check_gradients(c.params, res.grads, [&](const ModelParams<double>& q) {
    CounterRng r2 = drop;
    return evaluate_loss(ex, q, c.cfg, lc, Mode::train, &r2).total;
  });
}

}  // namespace

TEST(Backward, FiniteDifferencesMixedLoss) {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const auto c = make_case(seed, 0.0, false);
    LossConfig lc;
    lc.k = 2;
    const auto r = check(c, lc, seed);
    EXPECT_LE(r.max_rel_error, 1e-4) << "seed " << seed << " worst " << r.worst_tensor;
    EXPECT_GT(r.checked, 0u);
  }
}

TEST(Backward, FiniteDifferencesSampleLossOnly) {
  for (std::uint64_t seed = 11; seed <= 16; ++seed) {
    const auto c = make_case(seed, 0.0, false);
    LossConfig lc;
    lc.c1 = 1.0;
    const auto r = check(c, lc, seed);
    EXPECT_LE(r.max_rel_error, 1e-4) << "seed " << seed << " worst " << r.worst_tensor;
  }
}

TEST(Backward, FiniteDifferencesWithDropout) {
  for (std::uint64_t seed = 21; seed <= 26; ++seed) {
    const auto c = make_case(seed, 0.1, false);
    LossConfig lc;
    lc.k = 2;
    const auto r = check(c, lc, seed * 77);
    EXPECT_LE(r.max_rel_error, 1e-4) << "seed " << seed << " worst " << r.worst_tensor;
  }
}

TEST(Backward, FiniteDifferencesLocationHeadAndCovariates) {
  for (std::uint64_t seed = 31; seed <= 35; ++seed) {
    const auto c = make_case(seed, 0.0, true);
    LossConfig lc;
    lc.k = 1;
    lc.loc_weight = 0.5;
    const auto r = check(c, lc, seed);
    EXPECT_LE(r.max_rel_error, 1e-4) << "seed " << seed << " worst " << r.worst_tensor;
  }
}

TEST(Backward, FiniteDifferencesPseudoLabelVariants) {
  const auto c = make_case(41, 0.0, false);
  LossConfig lc;
  lc.k = 1;
  lc.tau = 0.5;
  lc.use_bottom_k_negatives = false;
  EXPECT_LE(check(c, lc, 1).max_rel_error, 1e-4);
  lc.positives_only = true;
  EXPECT_LE(check(c, lc, 1).max_rel_error, 1e-4);
}

TEST(Backward, SampleOnlyLossLeavesInstanceHeadsAtZero) {
  const auto c = make_case(51, 0.0, false);
  LossConfig lc;
  lc.c1 = 1.0;
  const BagExample<double> ex{&c.x, c.label, c.cov, c.location};
  const auto res = compute_gradients(ex, c.params, c.cfg, lc, Mode::eval, nullptr);
  for (const auto& h : res.grads.instance_heads) {
    for (double v : h.w) EXPECT_EQ(v, 0.0);
    for (double v : h.b) EXPECT_EQ(v, 0.0);
  }
}

TEST(Backward, DuplicatedInstancesKeepSampleGradients) {
  const auto c = make_case(61, 0.0, false);
  LossConfig lc;
  lc.c1 = 1.0;
  const auto dense = c.x.to_dense();
  Matrix<double> twice(2 * dense.rows(), dense.cols());
  for (std::size_t r = 0; r < dense.rows(); ++r)
    for (std::size_t j = 0; j < dense.cols(); ++j) twice(r, j) = twice(r + dense.rows(), j) = dense(r, j);
  const auto x2 = SparseRows<double>::from_dense(twice);
  const auto a = compute_gradients(BagExample<double>{&c.x, c.label, {}, {}}, c.params, c.cfg, lc, Mode::eval, nullptr);
  const auto b = compute_gradients(BagExample<double>{&x2, c.label, {}, {}}, c.params, c.cfg, lc, Mode::eval, nullptr);
  EXPECT_NEAR(a.loss.total, b.loss.total, 1e-12);
  const auto ga = a.grads.tensors();
  const auto gb = b.grads.tensors();
  for (std::size_t t = 0; t < ga.size(); ++t)
    for (std::size_t j = 0; j < ga[t].data.size(); ++j) EXPECT_NEAR(ga[t].data[j], gb[t].data[j], 1e-10) << ga[t].name;
}

TEST(Backward, LambdaZeroGivesNoSpatialGradient) {
  auto c = make_case(71, 0.0, false);
  c.cfg.lambda = 0.0;
  LossConfig lc;
  const auto res = compute_gradients(BagExample<double>{&c.x, c.label, {}, {}}, c.params, c.cfg, lc, Mode::eval, nullptr);
  for (double v : res.grads.spatial_1.w) EXPECT_EQ(v, 0.0);
  for (double v : res.grads.ln_scale) EXPECT_EQ(v, 0.0);
  for (double v : res.grads.spatial_2.b) EXPECT_EQ(v, 0.0);
}
