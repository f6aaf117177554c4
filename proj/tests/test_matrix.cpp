#include <gtest/gtest.h>

#include <atomic>

#include "test_util.hpp"

using namespace memsub;

TEST(Matrix, MatmulMatchesHandComputed) {
  const Matrix a{{1, 2}, {3, 4}};
  const Matrix b{{5, 6}, {7, 8}};
  EXPECT_EQ(matmul(a, b), (Matrix{{19, 22}, {43, 50}}));
  EXPECT_EQ(matmul_nt(a, b), (Matrix{{17, 23}, {39, 53}}));
  EXPECT_EQ(matmul_tn(a, b), (Matrix{{26, 30}, {38, 44}}));
}

TEST(Matrix, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
  EXPECT_THROW(slice_rows(Matrix(2, 3), 1, 3), IndexError);
}

TEST(Matrix, CountNonzero) {
  const Matrix m{{0, 1}, {2, 0}};
  EXPECT_EQ(count_nonzero(m), 2u);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
  Rng c(42), d(42);
  EXPECT_EQ(c.normal_matrix<float>(3, 3), d.normal_matrix<float>(3, 3));
}

TEST(Rng, DerivedSeedsDiffer) {
  EXPECT_NE(derive_seed(1, 2), derive_seed(1, 3));
  EXPECT_NE(derive_seed(1, 2), derive_seed(2, 2));
  EXPECT_EQ(derive_seed(5, 9), derive_seed(5, 9));
}

TEST(Rng, UniformIndexInRange) {
  Rng r(3);
  for (int i = 0; i < 1000; ++i) ASSERT_LT(r.uniform_index(7), 7u);
  EXPECT_THROW(r.uniform_index(0), ArgumentError);
}

TEST(Rng, NormalMoments) {
  Rng r(11);
  double s = 0, s2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double v = r.normal();
    s += v, s2 += v * v;
  }
  EXPECT_NEAR(s / n, 0.0, 0.03);
  EXPECT_NEAR(s2 / n, 1.0, 0.05);
}

TEST(Parallel, EveryIndexOnceAndErrorsPropagate) {
  std::vector<std::atomic<int>> hits(100);
  parallel_for(hits.size(), 4, [&](std::size_t i) { ++hits[i]; });
  for (auto& h : hits) EXPECT_EQ(h.load(), 1);
  EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) { if (i == 7) throw ArgumentError("x"); }), ArgumentError);
}

TEST(Checkpoint, RoundTripAndRejectsCorruption) {
  const auto p = init_params<float>(test::tiny_model(), 5);
  const auto bytes = encode_checkpoint(p, 77);
  const auto ck = decode_checkpoint(bytes);
  EXPECT_EQ(ck.seed, 77u);
  EXPECT_EQ(encode_checkpoint(ck.params, 77), bytes);
  EXPECT_THROW(decode_checkpoint("XXXX" + bytes.substr(4)), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes + "z"), FormatError);
}

TEST(Pgm, RoundTrip) {
  GrayImage img{3, 2, {0, 10, 20, 30, 40, 255}};
  const auto back = decode_pgm(encode_pgm(img));
  EXPECT_EQ(back.width, 3u);
  EXPECT_EQ(back.height, 2u);
  EXPECT_EQ(back.pixels, img.pixels);
  EXPECT_THROW(decode_pgm("P2\n1 1\n255\n0"), FormatError);
}
