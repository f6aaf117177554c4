#include <gtest/gtest.h>

#include <sstream>

#include "oracles.hpp"
#include "test_util.hpp"

using namespace memsub;

TEST(Density, CountingExamples) {
  EXPECT_DOUBLE_EQ(density({{0, 0}, {0, 3}, {1, 2}}, 2, 4), 37.5);
  EXPECT_DOUBLE_EQ(density({}, 2, 4), 0.0);
  CoordSet full;
  for (std::uint32_t i = 0; i < 2; ++i)
    for (std::uint32_t j = 0; j < 4; ++j) full.push_back({i, j});
  EXPECT_DOUBLE_EQ(density(full, 2, 4), 100.0);
  EXPECT_THROW(density({}, 0, 4), ShapeError);
}

TEST(Iou, HandExamples) {
  const CoordSet a{{0, 0}, {0, 1}}, b{{0, 1}, {1, 1}}, c{{2, 2}};
  EXPECT_DOUBLE_EQ(pairwise_iou({a, b}), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(pairwise_iou({a, a}), 1.0);
  EXPECT_DOUBLE_EQ(pairwise_iou({a, c}), 0.0);
  EXPECT_DOUBLE_EQ(iou({}, {}), 0.0);
  EXPECT_THROW(pairwise_iou({a}), ArgumentError);
}

TEST(Iou, Properties) {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    const auto a = oracle::random_coords(rng, 5, 5, 0.3), b = oracle::random_coords(rng, 5, 5, 0.3);
    EXPECT_EQ(iou(a, b), iou(b, a));
    const double v = iou(a, b);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    if (!a.empty()) {
      EXPECT_EQ(iou(a, a), 1.0);
    }
    if (!a.empty() && !b.empty()) {
      EXPECT_EQ(v == 0.0, intersection_size(a, b) == 0);
    }
  }
}

TEST(RandomIou, MatchesAnalyticExpectation) {
  Rng rng(5);
  EXPECT_DOUBLE_EQ(expected_random_iou(100.0, 20, 20, 3, rng), 1.0);
  EXPECT_DOUBLE_EQ(expected_random_iou(0.0, 20, 20, 3, rng), 0.0);
  for (double d : {0.02, 0.1, 0.3}) {
    const double mc = expected_random_iou(d * 100.0, 64, 128, 40, rng);
    EXPECT_NEAR(mc, d / (2 - d), 0.1 * d / (2 - d)) << d;
  }
  EXPECT_THROW(expected_random_iou(5.0, 4, 4, 0, rng), ArgumentError);
  EXPECT_THROW(expected_random_iou(120.0, 4, 4, 1, rng), ArgumentError);
}

TEST(Marginals, HandExamples) {
  const auto m = marginals({{1, 2}, {3, 4}});
  EXPECT_EQ(m.per_layer, (std::vector<double>{2, 3}));
  EXPECT_EQ(m.per_timestep, (std::vector<double>{1.5, 3.5}));
  const auto single = marginals({{5, 6, 7}});
  EXPECT_EQ(single.per_layer, (std::vector<double>{5, 6, 7}));
  const auto constant = marginals({{2, 2}, {2, 2}, {2, 2}});
  EXPECT_EQ(constant.per_layer, (std::vector<double>{2, 2}));
  EXPECT_THROW(marginals({{1, 2}, {3}}), ArgumentError);
  EXPECT_THROW(marginals({}), ArgumentError);
}

TEST(Collection, SubsetsAreDistinctPromptsFromPool) {
  Rng rng(6);
  const std::vector<int> pool{11, 12, 13, 14, 15, 16, 17, 18, 19, 20};
  const auto pc = sample_collection(pool, 5, 5, rng, true);
  ASSERT_EQ(pc.count(), 5u);
  std::set<std::vector<int>> seen;
  for (const auto& s : pc.subsets) {
    EXPECT_EQ(s.size(), 5u);
    EXPECT_EQ(std::set<int>(s.begin(), s.end()).size(), 5u);
    for (int p : s) EXPECT_TRUE(std::find(pool.begin(), pool.end(), p) != pool.end());
    seen.insert(s);
  }
  EXPECT_EQ(seen.size(), 5u);
  for (int p : pool) {
    EXPECT_TRUE(std::any_of(pc.subsets.begin(), pc.subsets.end(),
                            [p](const auto& s) { return std::find(s.begin(), s.end(), p) == s.end(); }));
  }
}

TEST(Collection, RejectsImpossibleRequests) {
  Rng rng(6);
  const std::vector<int> pool{1, 2, 3};
  EXPECT_THROW(sample_collection(pool, 2, 4, rng), ArgumentError);
  EXPECT_THROW(sample_collection(pool, 2, 0, rng), ArgumentError);
  EXPECT_THROW(sample_collection(std::vector<int>{1, 1, 2}, 2, 1, rng), ArgumentError);
  EXPECT_THROW(sample_collection(pool, 2, 3, rng, true), ArgumentError);
  // More subsets than combinations: repeats are allowed.
  EXPECT_EQ(sample_collection(pool, 5, 3, rng).count(), 5u);
}

namespace {

LocalizationResult fake_result(const std::vector<CoordSet>& per_t_layer0) {
  LocalizationResult r;
  std::vector<LayerSets> all;
  int t = int(per_t_layer0.size());
  for (const auto& s : per_t_layer0) {
    r.per_timestep[--t] = {{0, s}, {1, {}}};
    all.push_back(r.per_timestep[t]);
  }
  r.mask = aggregate_mask(all, 2, 4);
  return r;
}

}  // namespace

TEST(Stats, GridsAndCsv) {
  const CoordSet a{{0, 0}, {0, 1}}, b{{0, 1}, {1, 1}};
  const auto r1 = fake_result({a, a});
  const auto r2 = fake_result({b, a});
  const auto st = localization_stats({r1, r2});
  EXPECT_EQ(st.timesteps, (std::vector<int>{1, 0}));
  EXPECT_EQ(st.layers, (std::vector<std::size_t>{0, 1}));
  EXPECT_DOUBLE_EQ(st.density[0][0][0], 25.0);
  EXPECT_DOUBLE_EQ(st.iou[0][0], 1.0 / 3.0);  // t=1: a vs b
  EXPECT_DOUBLE_EQ(st.iou[1][0], 1.0);        // t=0: a vs a
  EXPECT_DOUBLE_EQ(st.iou[0][1], 0.0);        // empty layer
  EXPECT_DOUBLE_EQ(st.mask_iou[0], 2.0 / 3.0);
  EXPECT_TRUE(st.has_iou());
  std::ostringstream os;
  write_stats_csv(os, st);
  const auto csv = os.str();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "t,l,subset_i,subset_j,metric,value");
  EXPECT_NE(csv.find("1,0,all,all,mean_pairwise_iou,0.333333333"), std::string::npos);
  EXPECT_NE(csv.find("-1,0,1,,density_pct,37.5"), std::string::npos);
}

TEST(Stats, SingleSubsetHasNoIou) {
  const auto st = localization_stats({fake_result(std::vector<CoordSet>{CoordSet{{0, 0}}})});
  EXPECT_FALSE(st.has_iou());
  EXPECT_EQ(st.density.size(), 1u);
  EXPECT_THROW(localization_stats({}), ArgumentError);
}

TEST(Stats, FlattenedMaskKeepsLayersApart) {
  NeuronMask m;
  m.rows = 3, m.cols = 4;
  m.layers[0] = {{1, 2}};
  m.layers[1] = {{1, 2}};
  EXPECT_EQ(flatten_mask(m), (CoordSet{{1, 2}, {4, 2}}));
}
