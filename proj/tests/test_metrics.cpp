// Copyright 2026 The clickseg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "clickseg/metrics.hpp"
#include "clickseg/rle.hpp"
#include "support/oracles.hpp"

namespace clickseg {
namespace {

BinaryMask pixels(int w, int h, std::initializer_list<std::pair<int, int>> on) {
  BinaryMask m(w, h);
  for (auto [x, y] : on) m.set(x, y);
  return m;
}

TEST(DiceBinary, Conventions) {
  const auto a = pixels(4, 4, {{0, 0}, {1, 0}, {2, 0}, {3, 0}});
  EXPECT_DOUBLE_EQ(dice_binary(a, a), 1.0);
  EXPECT_DOUBLE_EQ(dice_binary(BinaryMask(4, 4), BinaryMask(4, 4)), 1.0);
  EXPECT_DOUBLE_EQ(dice_binary(a, BinaryMask(4, 4)), 0.0);
  const auto b = pixels(4, 4, {{2, 0}, {3, 0}, {0, 1}, {1, 1}});
  EXPECT_DOUBLE_EQ(dice_binary(a, b), 0.5);
  EXPECT_DOUBLE_EQ(dice_binary(b, a), 0.5);
}

TEST(Boundary, FourConnectedIncludingImageEdge) {
  BinaryMask full(3, 3);
  for (auto& b : full.bits()) b = 1;
  const auto bd = boundary(full);
  EXPECT_FALSE(bd(1, 1));
  EXPECT_TRUE(bd(0, 0));
  EXPECT_TRUE(bd(1, 0));
}

TEST(SurfaceDistances, IdenticalMasksAreZero) {
  std::mt19937_64 rng(2);
  const auto m = testing::random_blobs(rng, 12, 12, 2);
  const auto sd = surface_distances(m, m);
  EXPECT_EQ(sd.hd, 0.0);
  EXPECT_EQ(sd.mad, 0.0);
}

TEST(SurfaceDistances, SinglePixels) {
  const auto a = pixels(8, 8, {{0, 0}});
  const auto b = pixels(8, 8, {{3, 4}});
  const auto unit = surface_distances(a, b, Spacing{1.0, 1.0});
  EXPECT_DOUBLE_EQ(unit.hd, 5.0);
  EXPECT_DOUBLE_EQ(unit.mad, 5.0);
  EXPECT_DOUBLE_EQ(surface_distances(a, b, Spacing{2.0, 2.0}).hd, 10.0);
}

TEST(SurfaceDistances, EmptyMaskIsUndefined) {
  EXPECT_THROW(surface_distances(BinaryMask(4, 4), pixels(4, 4, {{1, 1}})), std::domain_error);
}

TEST(SurfaceDistances, MatchesBruteForce) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 150; ++trial) {
    const int w = std::uniform_int_distribution<int>(1, 20)(rng);
    const int h = std::uniform_int_distribution<int>(1, 20)(rng);
    auto a = testing::random_mask(rng, w, h, 0.3);
    auto b = testing::random_blobs(rng, w, h, 2);
    if (!a.any()) a.set(0, 0);
    const auto sd = surface_distances(a, b);
    const auto ref = testing::brute_force_surface(a, b, Spacing{});
    ASSERT_EQ(sd.hd, ref.hd);
    ASSERT_EQ(sd.mad, ref.mad);
    ASSERT_GE(sd.hd, sd.mad);
  }
}

TEST(SurfaceDistances, AnisotropicSpacingMatchesBruteForce) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = testing::random_blobs(rng, 15, 11, 2);
    const auto b = testing::random_blobs(rng, 15, 11, 2);
    const Spacing s{0.7, 1.3};
    const auto sd = surface_distances(a, b, s);
    const auto ref = testing::brute_force_surface(a, b, s);
    EXPECT_NEAR(sd.hd, ref.hd, 1e-12);
    EXPECT_NEAR(sd.mad, ref.mad, 1e-12);
  }
}

TEST(SurfaceDistances, SymmetricAndTranslationInvariant) {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 40; ++trial) {
    BinaryMask a(24, 24), b(24, 24), a2(24, 24), b2(24, 24);
    const auto sa = testing::random_blobs(rng, 10, 10, 2);
    const auto sb = testing::random_blobs(rng, 10, 10, 2);
    for (int y = 0; y < 10; ++y) {
      for (int x = 0; x < 10; ++x) {
        a.set(x + 2, y + 3, sa(x, y));
        b.set(x + 2, y + 3, sb(x, y));
        a2.set(x + 9, y + 11, sa(x, y));
        b2.set(x + 9, y + 11, sb(x, y));
      }
    }
    const auto ab = surface_distances(a, b), ba = surface_distances(b, a), moved = surface_distances(a2, b2);
    EXPECT_EQ(ab.hd, ba.hd);
    EXPECT_DOUBLE_EQ(ab.mad, ba.mad);
    EXPECT_EQ(ab.hd, moved.hd);
    EXPECT_DOUBLE_EQ(ab.mad, moved.mad);
    EXPECT_DOUBLE_EQ(dice_binary(a, b), dice_binary(a2, b2));
  }
}

TEST(Aggregate, Statistics) {
  std::vector<SliceMetrics> list{{0.8, 2.0, 1.0, "organ", "c:0"}, {1.0, 4.0, 1.5, "organ", "c:1"}};
  const auto r = aggregate(list);
  EXPECT_DOUBLE_EQ(r.overall.dice.mean, 0.9);
  EXPECT_DOUBLE_EQ(r.overall.dice.median, 0.9);
  EXPECT_DOUBLE_EQ(r.per_structure.at("organ").hd->mean, 3.0);
}

TEST(Aggregate, SingleAndEmpty) {
  std::vector<SliceMetrics> one{{0.7, std::nullopt, std::nullopt, "lesion", "c:0"}};
  const auto r = aggregate(one);
  EXPECT_DOUBLE_EQ(r.overall.dice.mean, 0.7);
  EXPECT_EQ(r.overall.n_undefined_surface, 1u);
  EXPECT_FALSE(r.overall.hd.has_value());
  EXPECT_THROW(aggregate(std::vector<SliceMetrics>{}), std::invalid_argument);
}

TEST(Aggregate, BoxPlotOutliers) {
  const std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8, 9, 100};
  const auto s = summarize(v);
  EXPECT_DOUBLE_EQ(s.p25, 3.25);
  EXPECT_DOUBLE_EQ(s.p75, 7.75);
  EXPECT_DOUBLE_EQ(s.median, 5.5);
  ASSERT_EQ(s.outliers.size(), 1u);
  EXPECT_EQ(s.outliers[0], 100.0);
  EXPECT_EQ(s.whisker_high, 9.0);
  EXPECT_EQ(s.whisker_low, 1.0);
}

TEST(Rle, EmptyMaskEncodesToNothing) { EXPECT_TRUE(rle_encode(BinaryMask(5, 3)).empty()); }

TEST(Rle, KnownEncoding) {
  // Row-major bits: 1 1 0 | 0 0 1
  const auto m = pixels(3, 2, {{0, 0}, {1, 0}, {2, 1}});
  const std::vector<std::uint32_t> expected{0, 2, 3, 1};
  EXPECT_EQ(rle_encode(m), expected);
  EXPECT_EQ(rle_decode(expected, 3, 2), m);
}

TEST(Rle, RoundTripRandom) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const int w = std::uniform_int_distribution<int>(1, 30)(rng);
    const int h = std::uniform_int_distribution<int>(1, 30)(rng);
    const auto m = testing::random_mask(rng, w, h, std::uniform_real_distribution<double>(0, 1)(rng));
    const auto runs = rle_encode(m);
    ASSERT_EQ(rle_decode(runs, w, h), m);
    for (std::size_t i = 1; i < runs.size(); ++i) ASSERT_GT(runs[i], 0u);
    ASSERT_EQ(runs.size() % 2, 0u);
  }
}

TEST(Rle, RejectsMalformedRuns) {
  EXPECT_THROW(rle_decode(std::vector<std::uint32_t>{0, 7}, 2, 3), RleError);       // too long
  EXPECT_THROW(rle_decode(std::vector<std::uint32_t>{1, 0, 2, 1}, 2, 3), RleError);  // empty run
  EXPECT_THROW(rle_decode(std::vector<std::uint32_t>{1, 1, 1}, 2, 3), RleError);     // trailing zeros kept
}

}  // namespace
}  // namespace clickseg
