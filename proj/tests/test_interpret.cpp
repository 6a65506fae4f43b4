#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "repmil/interpret.hpp"

using namespace repmil;
using namespace repmil::testing;

namespace {

struct Trained {
  Checkpoint ck;
  PreparedCohort pc;
};

const Trained& trained() {
  static const Trained t = [] {
    const auto sc = generate_cohort(small_synth(5, 40, 0.1, 8));
    const auto cfg = small_pipeline(2, 4);
    auto pc = prepare_synth(sc, cfg);
    auto ck = train_checkpoint(pc, cfg);
    return Trained{std::move(ck), std::move(pc)};
  }();
  return t;
}

std::vector<InstanceRef> refs(std::initializer_list<std::pair<const char*, const char*>> rows) {
  std::vector<InstanceRef> out;
  for (auto [c, g] : rows) out.push_back({c, g, 0.1});
  return out;
}

}  // namespace

TEST(Accumulator, SingleBagFollowsWeights) {
  AttentionAccumulator acc;
  const std::vector<double> w = {0.2, 0.5, 0.3};
  const auto r = refs({{"CAA", "V1"}, {"CBB", "V2"}, {"CCC", "V1"}});
  acc.add<double>(w, r);
  const auto rk = acc.ranking();
  ASSERT_EQ(rk.sequences.size(), 3u);
  EXPECT_EQ(rk.sequences[0].cdr3_aa, "CBB");
  EXPECT_EQ(rk.sequences[1].cdr3_aa, "CCC");
  EXPECT_EQ(rk.sequences[2].cdr3_aa, "CAA");
  ASSERT_EQ(rk.genes.size(), 2u);
  EXPECT_EQ(rk.genes[0].v_gene, "V1");
  EXPECT_DOUBLE_EQ(rk.genes[0].cumulative_attention, 0.5);
  EXPECT_EQ(rk.genes[0].support, 1u);
  EXPECT_THROW(acc.add<double>(std::vector<double>{1.0}, r), ShapeError);
}

TEST(Accumulator, TiesBreakLexicographically) {
  AttentionAccumulator acc;
  acc.add<double>(std::vector<double>{0.5, 0.5}, refs({{"CZZ", "V1"}, {"CAA", "V1"}}));
  EXPECT_EQ(acc.ranking().sequences[0].cdr3_aa, "CAA");
}

TEST(Accumulator, MergeEqualsJointAccumulation) {
  const auto& t = trained();
  const std::size_t half = t.pc.size() / 2;
  AttentionAccumulator a, b, all;
  for (std::size_t i = 0; i < t.pc.size(); ++i) {
    const auto eb = encode_sample<float>(t.pc, i, t.ck.vocab, t.ck.covariates, t.ck.encoding, Strictness::lenient, 0);
    const auto out = forward(eb.bag.x, t.ck.params, t.ck.model, Mode::eval, nullptr, std::span<const float>(eb.bag.covariates));
    (i < half ? a : b).add<float>(out.attention.weights.row(1), eb.refs);
    all.add<float>(out.attention.weights.row(1), eb.refs);
  }
  a.merge(b);
  const auto ra = a.ranking(), rb = all.ranking();
  ASSERT_EQ(ra.sequences.size(), rb.sequences.size());
  for (std::size_t i = 0; i < ra.sequences.size(); ++i) {
    EXPECT_EQ(ra.sequences[i].cdr3_aa, rb.sequences[i].cdr3_aa);
    EXPECT_NEAR(ra.sequences[i].cumulative_attention, rb.sequences[i].cumulative_attention, 1e-12);
    EXPECT_EQ(ra.sequences[i].support, rb.sequences[i].support);
  }
  EXPECT_EQ(a.bags(), all.bags());
}

TEST(Accumulator, TotalAttentionEqualsBagCount) {
  const auto& t = trained();
  for (std::size_t branch = 0; branch < 2; ++branch) {
    const auto acc = aggregate_attention(t.ck, t.pc, branch);
    double total = 0;
    for (const auto& s : acc.ranking().sequences) total += s.cumulative_attention;
    EXPECT_NEAR(total, static_cast<double>(t.pc.size()), 1e-5);
    EXPECT_EQ(acc.bags(), t.pc.size());
  }
  EXPECT_EQ(aggregate_attention(t.ck, t.pc, 1, 1).bags(), 5u);
  EXPECT_THROW(aggregate_attention(t.ck, t.pc, 2), ConfigError);
}

TEST(TopFeatures, ClampsAndFormats) {
  AttentionAccumulator acc;
  acc.add<double>(std::vector<double>{0.25, 0.75}, refs({{"CAA", "V,1"}, {"CBB", "V2"}}));
  const auto rk = acc.ranking();
  EXPECT_EQ(top_features(rk.sequences, 10).size(), 2u);
  EXPECT_EQ(top_features(rk.sequences, 1).size(), 1u);
  EXPECT_EQ(ranking_csv(rk, 5),
            "rank,cdr3_aa,v_gene,cumulative_attention,support\n1,CBB,V2,0.75,1\n2,CAA,\"V,1\",0.25,1\n");
  EXPECT_EQ(gene_ranking_csv(rk, 1), "rank,v_gene,cumulative_attention,support\n1,V2,0.75,1\n");
  const auto j = to_json(rk, 1);
  EXPECT_EQ(j["sequences"].size(), 1u);
  EXPECT_EQ(j["sequences"][0]["cdr3_aa"], "CBB");
}

TEST(PooledFeatures, ShapeOfExport) {
  const auto& t = trained();
  const auto text = pooled_features_csv(t.ck, t.pc);
  const auto rows = csv::parse(text);
  ASSERT_EQ(rows.size(), t.pc.size() + 1);
  const std::size_t width = 2 + t.ck.model.n_classes * t.ck.model.input_dim;
  for (const auto& r : rows) EXPECT_EQ(r.fields.size(), width);
  EXPECT_EQ(rows[0].fields[2], "m0_0");
  EXPECT_EQ(rows[1].fields[0], t.pc.cohort.metas()[0].sample_id);
}
