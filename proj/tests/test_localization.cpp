#include <gtest/gtest.h>

#include "oracles.hpp"
#include "test_util.hpp"

using namespace memsub;

TEST(Wanda, HandComputedExample) {
  const Matrix W{{1, -2}, {0, 3}};
  const Matrix H{{3, 4}, {0, 1}};  // channel norms 5 and 1
  EXPECT_EQ(wanda_scores(W, H), (Matrix{{5, 2}, {0, 3}}));
  EXPECT_THROW(wanda_scores(W, Matrix(3, 1)), ShapeError);
}

TEST(TopSet, OnePercentOfHundredColumnsKeepsTheMaxPerRow) {
  Matrix S(2, 100);
  for (std::size_t j = 0; j < 100; ++j) S(0, j) = float(j), S(1, j) = float(100 - j);
  const auto A = top_set(S, 1.0);
  EXPECT_EQ(A, (CoordSet{{0, 99}, {1, 0}}));
}

TEST(TopSet, TiesGoToLowerColumn) {
  const Matrix S{{1, 1, 1, 1}};
  EXPECT_EQ(top_set(S, 50.0), (CoordSet{{0, 0}, {0, 1}}));
}

TEST(TopSet, CountFloorsWithMinimumOne) {
  EXPECT_EQ(top_count(100, 1.0), 1u);
  EXPECT_EQ(top_count(50, 1.0), 1u);
  EXPECT_EQ(top_count(512, 1.0), 5u);
  EXPECT_EQ(top_count(10, 35.0), 3u);
  EXPECT_THROW(top_set(Matrix(1, 4), 0.0), ArgumentError);
  EXPECT_THROW(top_set(Matrix(1, 4), 100.0), ArgumentError);
}

TEST(MemorizedSet, StrictInequality) {
  const Matrix mem{{2, 1}, {3, 3}};
  const Matrix null{{1, 1}, {4, 2}};
  const CoordSet A{{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  EXPECT_EQ(memorized_set(mem, null, A), (CoordSet{{0, 0}, {1, 1}}));
  EXPECT_TRUE(memorized_set(mem, mem, A).empty());
}

TEST(MemorizedSet, SubsetOfCandidates) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const auto a = oracle::random_scores(rng, 5, 7, false), b = oracle::random_scores(rng, 5, 7, false);
    const auto A = top_set(a, 30.0);
    const auto V = memorized_set(a, b, A);
    for (const auto& c : V) EXPECT_TRUE(std::binary_search(A.begin(), A.end(), c));
  }
}

TEST(AggregateMask, UnionIsMonotoneInTau) {
  Rng rng(8);
  std::vector<LayerSets> per_t(5);
  for (auto& s : per_t) s[0] = oracle::random_coords(rng, 6, 6, 0.1);
  std::size_t prev = 0;
  for (std::size_t tau = 1; tau <= 5; ++tau) {
    const auto m = aggregate_mask({per_t.begin(), per_t.begin() + long(tau)}, 6, 6);
    EXPECT_GE(m.cardinality(), prev);
    prev = m.cardinality();
  }
  EXPECT_THROW(aggregate_mask({}, 6, 6), ArgumentError);
}

TEST(AggregateMask, DensityBoundedByTauTimesSparsity) {
  Rng rng(9);
  const std::size_t rows = 16, cols = 100, tau = 4;
  std::vector<LayerSets> per_t;
  for (std::size_t t = 0; t < tau; ++t) {
    const auto S = oracle::random_scores(rng, rows, cols, false), N = oracle::random_scores(rng, rows, cols, false);
    per_t.push_back({{0, memorized_set(S, N, top_set(S, 1.0))}});
  }
  const auto m = aggregate_mask(per_t, rows, cols);
  EXPECT_LE(density(m.layers.at(0), rows, cols), double(tau) * 1.0 + 1e-12);
}

TEST(Equivalence, PrimitivesMatchBruteForce) {
  const auto bad = oracle::equivalence_sweep(300, 42);
  for (const auto& [name, n] : bad) EXPECT_EQ(n, 0u) << name;
}

TEST(Mask, ApplyZeroesExactlyMaskedEntries) {
  const auto p = init_params<float>(test::tiny_model(), 1);
  NeuronMask m;
  m.rows = 8, m.cols = 12;
  m.layers[1] = {{0, 0}, {3, 7}};
  const auto q = apply_mask(p, m);
  EXPECT_EQ(q.ffn_blocks[1].w_out(0, 0), 0.0f);
  EXPECT_EQ(q.ffn_blocks[1].w_out(3, 7), 0.0f);
  EXPECT_EQ(q.ffn_blocks[0].w_out, p.ffn_blocks[0].w_out);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < p.ffn_blocks[1].w_out.size(); ++i)
    changed += q.ffn_blocks[1].w_out.values()[i] != p.ffn_blocks[1].w_out.values()[i];
  EXPECT_EQ(changed, 2u);
  // Idempotent.
  EXPECT_EQ(encode_checkpoint(apply_mask(q, m), 0), encode_checkpoint(q, 0));
}

TEST(Mask, EmptyMaskLeavesWeightsIdentical) {
  const auto p = init_params<float>(test::tiny_model(), 1);
  NeuronMask m;
  EXPECT_EQ(encode_checkpoint(apply_mask(p, m), 0), encode_checkpoint(p, 0));
}

TEST(Mask, IntegrityErrors) {
  const auto p = init_params<float>(test::tiny_model(), 1);
  NeuronMask bad_layer;
  bad_layer.layers[5] = {{0, 0}};
  EXPECT_THROW(apply_mask(p, bad_layer), MaskIntegrityError);
  NeuronMask bad_shape;
  bad_shape.rows = 9, bad_shape.cols = 12;
  bad_shape.layers[0] = {};
  EXPECT_THROW(apply_mask(p, bad_shape), MaskIntegrityError);
  NeuronMask bad_coord;
  bad_coord.layers[0] = {{8, 0}};
  EXPECT_THROW(apply_mask(p, bad_coord), MaskIntegrityError);
}

TEST(Mask, JsonRoundTripAndSchema) {
  NeuronMask m;
  m.rows = 4, m.cols = 5, m.sparsity_pct = 1.0, m.tau = 2, m.timesteps = {9, 8}, m.prompts = {11, 12};
  m.layers[0] = {{0, 1}, {3, 4}};
  m.layers[2] = {};
  EXPECT_EQ(mask_from_json(mask_to_json(m)), m);
  auto j = mask_to_json(m);
  j["schema"] = "memsub.mask/0";
  EXPECT_THROW(mask_from_json(j), FormatError);
  const auto dir = test::temp_dir("mask");
  save_mask(dir / "m.json", m);
  EXPECT_EQ(load_mask(dir / "m.json"), m);
}

TEST(Localize, EndToEndShapesAndDeterminism) {
  const auto mc = test::tiny_model(8, 20, 2);
  const auto p = init_params<float>(mc, 6);
  const auto sched = NoiseSchedule::linear(mc.timesteps);
  SamplerConfig sc;
  sc.num_steps = mc.timesteps;
  LocalizationConfig lc;
  lc.sparsity_pct = 10.0;
  lc.tau = 3;
  const std::vector<int> prompts{1, 3};
  const auto a = localize(p, prompts, lc, sc, sched);
  const auto b = localize(p, prompts, lc, sc, sched);
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_EQ(a.mask.timesteps, (std::vector<int>{9, 8, 7}));
  EXPECT_EQ(a.mask.layers.size(), 2u);
  for (const auto& [l, s] : a.mask.layers) EXPECT_LE(s.size(), 8u * 2u * 3u);
  // A tight memory budget splits the capture into chunks without changing the result.
  lc.memory_budget_bytes = 1;
  EXPECT_EQ(localize(p, prompts, lc, sc, sched).mask, a.mask);
}

TEST(Localize, RestrictedLayersAndBadTau) {
  const auto mc = test::tiny_model(8, 20, 3);
  const auto p = init_params<float>(mc, 6);
  const auto sched = NoiseSchedule::linear(mc.timesteps);
  SamplerConfig sc;
  sc.num_steps = 5;
  LocalizationConfig lc;
  lc.sparsity_pct = 10.0;
  lc.tau = 2;
  lc.layers = {1};
  const std::vector<int> prompts{2};
  const auto r = localize(p, prompts, lc, sc, sched);
  EXPECT_EQ(r.mask.layers.size(), 1u);
  EXPECT_TRUE(r.mask.layers.count(1));
  lc.tau = 6;
  EXPECT_THROW(localize(p, prompts, lc, sc, sched), ArgumentError);
}
