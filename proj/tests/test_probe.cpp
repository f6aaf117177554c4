#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace memsub;

namespace {

struct ProbeFixture : ::testing::Test {
  ModelConfig mc = test::tiny_model(8, 12, 2);
  DenoiserParams p = init_params<float>(mc, 9);
  NoiseSchedule sched = NoiseSchedule::linear(mc.timesteps);
  SamplerConfig sc;
  std::vector<std::size_t> layers{0, 1};

  void SetUp() override { sc.num_steps = mc.timesteps; }
};

}  // namespace

TEST_F(ProbeFixture, BlocksAreInnerByPromptCount) {
  const std::vector<int> prompts{1, 2, 4};
  const std::vector<int> ts{9, 8};
  const auto b = capture(p, prompts, sc, sched, ts, layers);
  EXPECT_EQ(b.blocks.size(), 4u);
  EXPECT_EQ(b.timesteps, (std::vector<int>{9, 8}));
  for (const auto& [k, m] : b.blocks) {
    EXPECT_EQ(m.rows(), 12u);
    EXPECT_EQ(m.cols(), 3u);
  }
  EXPECT_THROW(b.at(7, 0), IndexError);
}

TEST_F(ProbeFixture, ColumnsMatchSinglePromptCaptures) {
  const std::vector<int> prompts{1, 3};
  const std::vector<int> ts{9};
  const auto both = capture(p, prompts, sc, sched, ts, layers);
  for (std::size_t k = 0; k < prompts.size(); ++k) {
    const std::vector<int> one{prompts[k]};
    const auto single = capture(p, one, sc, sched, ts, layers);
    for (std::size_t r = 0; r < 12; ++r) EXPECT_EQ(both.at(9, 1)(r, k), single.at(9, 1)(r, 0));
  }
}

TEST_F(ProbeFixture, FirstStepMatchesDirectForward) {
  // At the first step every trajectory is at the initial latent, so the hook
  // output must equal a direct forward pass on that latent.
  const std::vector<int> prompts{2};
  const std::vector<int> ts{9};
  const auto b = capture(p, prompts, sc, sched, ts, layers);
  const auto z = initial_noise(mc.image_dim(), sc.seed);
  Matrix hidden;
  ActivationHook<float> hook = [&](std::size_t l, const Matrix& h) {
    if (l == 1) hidden = h;
  };
  const std::vector<int> lab{2}, st{9};
  denoiser_forward(p, z, std::span<const int>(lab), std::span<const int>(st), nullptr, &hook);
  for (std::size_t r = 0; r < 12; ++r) EXPECT_EQ(b.at(9, 1)(r, 0), hidden(0, r));
}

TEST_F(ProbeFixture, NullCaptureTilesOneTrajectory) {
  const std::vector<int> ts{9, 5};
  const auto b = capture_null(p, 3, sc, sched, ts, layers);
  const auto& m = b.at(5, 0);
  ASSERT_EQ(m.cols(), 3u);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    EXPECT_EQ(m(r, 0), m(r, 1));
    EXPECT_EQ(m(r, 0), m(r, 2));
  }
}

TEST_F(ProbeFixture, RejectsBadRequests) {
  const std::vector<int> null_prompt{0}, ok{1}, bad_t{3}, good_t{9};
  EXPECT_THROW(capture(p, null_prompt, sc, sched, good_t, layers), ArgumentError);
  EXPECT_THROW(capture(p, {}, sc, sched, good_t, layers), ArgumentError);
  sc.num_steps = 2;  // trajectory visits 9 and 0 only
  EXPECT_THROW(capture(p, ok, sc, sched, bad_t, layers), ArgumentError);
  const std::vector<std::size_t> bad_layer{2};
  EXPECT_THROW(capture(p, ok, sc, sched, good_t, bad_layer), ArgumentError);
}

TEST_F(ProbeFixture, DumpRoundTrip) {
  const std::vector<int> prompts{1, 2};
  const std::vector<int> ts{9, 8};
  const auto b = capture(p, prompts, sc, sched, ts, layers);
  const auto dir = test::temp_dir("probe");
  save_activations(dir / "acts", b);
  const auto back = load_activations(dir / "acts");
  EXPECT_EQ(back.blocks, b.blocks);
  EXPECT_EQ(back.prompt_ids, b.prompt_ids);
  EXPECT_EQ(back.timesteps, b.timesteps);
}

TEST(Probe, ChunkPlanRespectsBudget) {
  const std::vector<int> ts{9, 8, 7, 6, 5};
  const auto one = plan_capture_chunks(ts, 2, 10, 3, 2 * 10 * 3 * 4 * 2);
  ASSERT_EQ(one.size(), 3u);
  EXPECT_EQ(one[0], (std::vector<int>{9, 8}));
  EXPECT_EQ(one[2], (std::vector<int>{5}));
  EXPECT_EQ(plan_capture_chunks(ts, 2, 10, 3, 1).size(), 5u);
  EXPECT_EQ(plan_capture_chunks(ts, 2, 10, 3, 1u << 30).size(), 1u);
}
