#include <gtest/gtest.h>

#include "oracles.hpp"
#include "test_util.hpp"

using namespace memsub;

namespace {

SimilarityGraph graph_of(const std::vector<std::vector<bool>>& adj) {
  return graph_from_distances(oracle::distances_for(adj), 1.0);
}

std::vector<std::vector<bool>> edges(std::size_t n, std::initializer_list<std::pair<int, int>> es) {
  std::vector<std::vector<bool>> adj(n, std::vector<bool>(n, false));
  for (auto [a, b] : es) adj[std::size_t(a)][std::size_t(b)] = adj[std::size_t(b)][std::size_t(a)] = true;
  return adj;
}

}  // namespace

TEST(TileDistance, IdenticalIsZeroAndSymmetric) {
  Rng rng(1);
  std::vector<float> a(64), b(64);
  for (auto& v : a) v = float(rng.uniform_index(256));
  for (auto& v : b) v = float(rng.uniform_index(256));
  EXPECT_EQ(tile_distance(a, a, 8, 4), 0.0);
  EXPECT_EQ(tile_distance(a, b, 8, 4), tile_distance(b, a, 8, 4));
}

TEST(TileDistance, MaxOverTiles) {
  std::vector<float> a(16, 0.0f), b(16, 0.0f);
  b[0] = 3, b[1] = 4;    // tile (0,0): distance 5
  b[15] = 12;            // tile (1,1): distance 12
  EXPECT_DOUBLE_EQ(tile_distance(a, b, 4, 2), 12.0);
  EXPECT_DOUBLE_EQ(tile_distance(a, b, 4, 4), 13.0);
  EXPECT_THROW(tile_distance(a, std::vector<float>(15), 4, 2), ShapeError);
  EXPECT_THROW(tile_distance(a, b, 4, 0), ArgumentError);
}

TEST(TileDistance, PerTileTriangleInequality) {
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    std::vector<float> a(16), b(16), c(16);
    for (auto* v : {&a, &b, &c})
      for (auto& x : *v) x = float(rng.uniform() * 255);
    EXPECT_LE(tile_distance(a, c, 4, 2), tile_distance(a, b, 4, 2) + tile_distance(b, c, 4, 2) + 1e-9);
  }
}

TEST(Clique, SpecExamples) {
  const auto k4 = edges(4, {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}});
  auto r = max_clique_at_least(graph_of(k4), 3);
  EXPECT_TRUE(r.found);
  EXPECT_EQ(r.clique.size(), 4u);
  const auto path = edges(3, {{0, 1}, {1, 2}});
  EXPECT_FALSE(max_clique_at_least(graph_of(path), 3).found);
  EXPECT_EQ(max_clique_at_least(graph_of(path), 3).clique.size(), 2u);
  EXPECT_FALSE(max_clique_at_least(graph_of(edges(5, {})), 2).found);
  EXPECT_THROW(max_clique_at_least(graph_of(path), 1), ArgumentError);
}

TEST(Clique, AgreesWithEnumerationUpTo12Nodes) {
  Rng rng(77);
  for (int t = 0; t < 400; ++t) {
    const std::size_t n = rng.uniform_index(13);
    const auto adj = oracle::random_graph(rng, n, rng.uniform());
    const auto r = max_clique_at_least(graph_of(adj), 3);
    ASSERT_EQ(r.clique.size(), oracle::max_clique_size(adj));
    ASSERT_TRUE(oracle::is_clique(adj, r.clique));
    ASSERT_EQ(r.found, r.clique.size() >= 3);
  }
}

TEST(Clique, MedoidMinimizesSummedDistance) {
  const std::vector<std::vector<double>> d{{0, 1, 2}, {1, 0, 1}, {2, 1, 0}};
  const auto g = graph_from_distances(d, 5.0);
  EXPECT_EQ(clique_medoid(g, {0, 1, 2}), 1u);
}

TEST(Attack, VerdictsMonotoneInThreshold) {
  Rng rng(5);
  Matrix samples(8, 16);
  for (auto& v : samples.values()) v = float(rng.uniform() * 2 - 1);
  AttackConfig cfg;
  cfg.samples_per_prompt = 8;
  bool was = false;
  std::size_t prev_edges = 0;
  for (double thr = 0; thr < 600; thr += 20) {
    const auto v = attack_prompt(samples, 1, nullptr, 4, cfg, thr);
    EXPECT_GE(v.edges, prev_edges);
    EXPECT_TRUE(!was || v.identified);
    was = v.identified;
    prev_edges = v.edges;
  }
  EXPECT_TRUE(was);
}

TEST(Attack, ConstantGeneratorIsFullyMemorized) {
  Matrix train(1, 16);
  for (std::size_t j = 0; j < 16; ++j) train.values()[j] = float(j) / 8.0f - 1.0f;
  const Generator gen = [&](int, std::span<const std::uint64_t> seeds) {
    Matrix out(seeds.size(), 16);
    for (std::size_t r = 0; r < seeds.size(); ++r) std::copy(train.values().begin(), train.values().end(), out.row(r).begin());
    return out;
  };
  AttackConfig cfg;
  cfg.samples_per_prompt = 6;
  const std::vector<int> prompts{3, 4};
  const auto rep = run_attack(gen, prompts, [&](int) { return &train; }, 4, cfg, 10.0, 1, 2);
  EXPECT_EQ(rep.identified_count(), 2u);
  EXPECT_EQ(rep.memorized_count(), 2u);
  EXPECT_DOUBLE_EQ(rep.identified_pct(), 100.0);
  EXPECT_EQ(rep.prompts[0].mean_pairwise_distance, 0.0);
}

TEST(Attack, IndependentNoiseIsNotIdentified) {
  const Generator gen = [](int, std::span<const std::uint64_t> seeds) {
    Matrix out(seeds.size(), 64);
    for (std::size_t r = 0; r < seeds.size(); ++r) {
      Rng rng(seeds[r]);
      for (auto& v : out.row(r)) v = rng.uniform() < 0.5 ? -1.0f : 1.0f;
    }
    return out;
  };
  AttackConfig cfg;
  cfg.samples_per_prompt = 10;
  const std::vector<int> prompts{1, 2, 3};
  const auto rep = run_attack(gen, prompts, [](int) -> const Matrix* { return nullptr; }, 8, cfg, 100.0, 4);
  EXPECT_EQ(rep.identified_count(), 0u);
}

TEST(Attack, UntrainedModelIdentifiesNothing) {
  const auto mc = test::tiny_model(16, 32, 2);
  const auto p = init_params<float>(mc, 12);
  const auto sched = NoiseSchedule::linear(mc.timesteps);
  SamplerConfig sc;
  sc.num_steps = mc.timesteps;
  AttackConfig cfg;
  cfg.samples_per_prompt = 12;
  const std::vector<int> prompts{1, 2, 3, 4};
  // Threshold 100 on 4x4 images in [0,255]: a tile-distance edge needs near-identical samples.
  const auto rep = run_attack(model_generator(p, sc, sched), prompts, [](int) -> const Matrix* { return nullptr; }, 4,
                              cfg, 100.0, 9);
  EXPECT_EQ(rep.identified_count(), 0u);
}

TEST(Attack, ThreadCountDoesNotChangeReport) {
  const auto mc = test::tiny_model(16, 32, 2);
  const auto p = init_params<float>(mc, 12);
  const auto sched = NoiseSchedule::linear(mc.timesteps);
  SamplerConfig sc;
  sc.num_steps = 5;
  AttackConfig cfg;
  cfg.samples_per_prompt = 5;
  const std::vector<int> prompts{1, 2, 3, 4};
  auto none = [](int) -> const Matrix* { return nullptr; };
  const auto a = run_attack(model_generator(p, sc, sched), prompts, none, 4, cfg, 300.0, 9, 1);
  const auto b = run_attack(model_generator(p, sc, sched), prompts, none, 4, cfg, 300.0, 9, 3);
  EXPECT_EQ(report_to_json(a).dump(), report_to_json(b).dump());
}

TEST(Attack, ReportJsonRoundTrip) {
  MemorizationReport r;
  r.threshold = 12.5;
  PromptVerdict v;
  v.label = 11, v.identified = true, v.clique = {0, 2, 3}, v.clique_size = 3, v.mean_pairwise_distance = 4.25;
  r.prompts.push_back(v);
  const auto j = report_to_json(r);
  EXPECT_EQ(report_to_json(report_from_json(j)).dump(), j.dump());
  auto bad = j;
  bad["schema"] = "other";
  EXPECT_THROW(report_from_json(bad), FormatError);
}

TEST(Attack, CalibratedThresholdSeparatesClasses) {
  DatasetSpec spec;
  spec.num_classes = 4, spec.images_per_class = 10, spec.num_duplicated = 2, spec.duplicate_copies = 3;
  const auto ds = generate_dataset(spec);
  const double thr = calibrate_threshold(ds, 4);
  EXPECT_GT(thr, 0.0);
  const auto a = to_pixel_scale(image_to_row(ds.images[0]));
  EXPECT_LT(tile_distance(a, a, 16, 4), thr);
}
