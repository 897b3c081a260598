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

#include <cmath>
#include <map>
#include <random>
#include <vector>

#include "clickseg/oracle.hpp"
#include "support/oracles.hpp"

namespace clickseg {
namespace {

BinaryMask block(int w, int h, int x0, int y0, int x1, int y1) {
  BinaryMask m(w, h);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) m.set(x, y);
  }
  return m;
}

const OracleConfig kArgmax{OracleMode::argmax, 1, 60.0};

TEST(ClickProbabilityField, ClosedForm) {
  Grid2D dd(3, 1, std::vector<float>{0.0f, 1.0f, 100.0f});
  const auto w = click_probability_field(dd, 60.0);
  EXPECT_EQ(w(0, 0), 0.0f);
  EXPECT_FLOAT_EQ(w(1, 0), float(std::exp(1.0) - 1.0));
  EXPECT_FLOAT_EQ(w(2, 0), float(std::expm1(60.0)));
}

TEST(ClickProbabilityField, RejectsNonPositiveCap) {
  EXPECT_THROW(click_probability_field(Grid2D(2, 2), 0.0), std::invalid_argument);
}

TEST(NextClick, PerfectPredictionGivesNone) {
  Rng rng(1);
  const auto gt = block(8, 8, 2, 2, 5, 5);
  EXPECT_FALSE(next_click(gt, gt, OracleConfig{}, rng).has_value());
}

// Table of (false negatives, false positives) areas and the expected polarity.
struct PolarityCase {
  int fn;
  int fp;
  Polarity expected;
};

class PolarityRule : public ::testing::TestWithParam<PolarityCase> {};

TEST_P(PolarityRule, BackgroundOnlyWhenFalsePositivesDominate) {
  const auto [fn, fp, expected] = GetParam();
  // gt holds the fn run plus a shared core; pred holds the shared core plus the fp run.
  BinaryMask gt(20, 20), pred(20, 20);
  for (int i = 0; i < 5; ++i) {
    gt.set(i, 0);
    pred.set(i, 0);
  }
  for (int i = 0; i < fn; ++i) gt.set(i % 20, 2 + i / 20);
  for (int i = 0; i < fp; ++i) pred.set(i % 20, 10 + i / 20);
  for (auto mode : {OracleMode::sample, OracleMode::argmax}) {
    Rng rng(9);
    const auto c = next_click(gt, pred, OracleConfig{mode, 9, 60.0}, rng);
    ASSERT_TRUE(c.has_value());
    EXPECT_EQ(c->polarity, expected) << "fn=" << fn << " fp=" << fp;
  }
}

INSTANTIATE_TEST_SUITE_P(Table, PolarityRule,
                         ::testing::Values(PolarityCase{3, 10, Polarity::background},
                                           PolarityCase{10, 3, Polarity::foreground},
                                           PolarityCase{7, 7, Polarity::foreground},
                                           PolarityCase{0, 1, Polarity::background},
                                           PolarityCase{1, 0, Polarity::foreground},
                                           PolarityCase{40, 41, Polarity::background},
                                           PolarityCase{41, 40, Polarity::foreground}));

TEST(NextClick, ArgmaxPicksBlockCenter) {
  Rng rng(1);
  const auto c = next_click(block(5, 5, 1, 1, 3, 3), BinaryMask(5, 5), kArgmax, rng);
  ASSERT_TRUE(c.has_value());
  EXPECT_EQ(c->polarity, Polarity::foreground);
  EXPECT_EQ(c->x, 2);
  EXPECT_EQ(c->y, 2);
}

TEST(NextClick, ArgmaxTieBreaksLexicographically) {
  Rng rng(1);
  // A 2x4 block has four pixels at distance 1; the row-major first wins.
  const auto c = next_click(block(8, 8, 2, 3, 5, 4), BinaryMask(8, 8), kArgmax, rng);
  ASSERT_TRUE(c.has_value());
  EXPECT_EQ(c->x, 2);
  EXPECT_EQ(c->y, 3);
}

TEST(NextClick, DimensionMismatchThrows) {
  Rng rng(1);
  EXPECT_THROW(next_click(BinaryMask(4, 4), BinaryMask(5, 4), OracleConfig{}, rng), std::invalid_argument);
}

TEST(NextClick, ClicksLieInTheirRegion) {
  std::mt19937_64 gen(21);
  for (int trial = 0; trial < 300; ++trial) {
    const auto gt = testing::random_blobs(gen, 24, 20, 2);
    const auto pred = testing::random_blobs(gen, 24, 20, 2);
    for (auto mode : {OracleMode::sample, OracleMode::argmax}) {
      Rng rng(static_cast<std::uint64_t>(trial));
      const auto c = next_click(gt, pred, OracleConfig{mode, 0, 60.0}, rng);
      const auto d = disparity(gt, pred);
      if (!d.d_plus.any() && !d.d_minus.any()) {
        EXPECT_FALSE(c.has_value());
        continue;
      }
      ASSERT_TRUE(c.has_value());
      if (c->polarity == Polarity::foreground) {
        EXPECT_TRUE(d.d_plus(c->x, c->y));
      } else {
        EXPECT_TRUE(d.d_minus(c->x, c->y));
      }
    }
  }
}

TEST(NextClick, ArgmaxIsAFunctionOfMasks) {
  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto gt = testing::random_blobs(gen, 16, 16, 3);
    const auto pred = testing::random_blobs(gen, 16, 16, 1);
    Rng a(1), b(999);
    const auto ca = next_click(gt, pred, kArgmax, a);
    const auto cb = next_click(gt, pred, kArgmax, b);
    ASSERT_EQ(ca.has_value(), cb.has_value());
    if (ca) { EXPECT_EQ(*ca, *cb); }
  }
}

TEST(NextClick, SeededSequenceReproducible) {
  std::mt19937_64 gen(8);
  const auto gt = testing::random_blobs(gen, 32, 32, 4);
  auto run = [&] {
    Rng rng(4242);
    std::vector<Click> out;
    BinaryMask pred(32, 32);
    for (int k = 0; k < 20; ++k) {
      auto c = next_click(gt, pred, OracleConfig{}, rng, ClickId{std::uint64_t(k)});
      if (!c) break;
      out.push_back(*c);
      pred.set(c->x, c->y, c->polarity == Polarity::foreground);
    }
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(InitialClick, SinglePixel) {
  Rng rng(3);
  BinaryMask gt(6, 6);
  gt.set(4, 1);
  const auto c = initial_click(gt, OracleConfig{}, rng);
  EXPECT_EQ(c.x, 4);
  EXPECT_EQ(c.y, 1);
  EXPECT_EQ(c.polarity, Polarity::foreground);
}

TEST(InitialClick, ArgmaxBlockCenter) {
  Rng rng(3);
  const auto c = initial_click(block(5, 5, 1, 1, 3, 3), kArgmax, rng);
  EXPECT_EQ(c.x, 2);
  EXPECT_EQ(c.y, 2);
}

TEST(InitialClick, EquivalentToNextClickOnEmptyPrediction) {
  std::mt19937_64 gen(12);
  for (int trial = 0; trial < 30; ++trial) {
    const auto gt = testing::random_blobs(gen, 20, 20, 2);
    Rng a(trial), b(trial);
    const auto first = initial_click(gt, OracleConfig{}, a);
    const auto next = next_click(gt, BinaryMask(20, 20), OracleConfig{}, b);
    ASSERT_TRUE(next.has_value());
    EXPECT_EQ(first, *next);
  }
}

TEST(InitialClick, EmptyGroundTruthThrows) {
  Rng rng(3);
  EXPECT_THROW(initial_click(BinaryMask(4, 4), OracleConfig{}, rng), std::invalid_argument);
}

TEST(InitialClick, PrefersTheDeeperBlob) {
  // Blob A is a 5x5 square (max distance 3); blob B a single pixel (distance 1).
  BinaryMask gt = block(16, 16, 2, 2, 6, 6);
  gt.set(12, 12);
  Rng rng(4242);
  int in_a = 0;
  const int trials = 10000;
  for (int i = 0; i < trials; ++i) {
    const auto c = initial_click(gt, OracleConfig{}, rng);
    in_a += (c.x <= 6 && c.y <= 6) ? 1 : 0;
  }
  // Closed form from the exact distances of the square: 16 pixels at 1, 8 at 2, 1 at 3.
  const double wa = 16 * std::expm1(1.0) + 8 * std::expm1(2.0) + std::expm1(3.0);
  const double wb = std::expm1(1.0);
  const double expected = wa / (wa + wb);
  EXPECT_GE(double(in_a) / trials, 0.8);
  EXPECT_NEAR(double(in_a) / trials, expected, 4.0 * std::sqrt(expected * (1 - expected) / trials));
}

TEST(SampleIndex, AllZeroGivesNone) {
  Rng rng(1);
  const std::vector<double> w(5, 0.0);
  EXPECT_FALSE(sample_index(w, rng).has_value());
}

TEST(SampleIndex, FrequenciesMatchWeightsChiSquare) {
  // A 6x5 block has pixels at distances 1, 2 and 3; sample its click field.
  const auto region = block(8, 7, 1, 1, 6, 5);
  const auto d2 = testing::brute_force_squared_edt(region);
  std::vector<double> expected(d2.size());
  double total = 0.0;
  for (std::size_t i = 0; i < d2.size(); ++i) {
    expected[i] = d2[i] > 0 ? std::expm1(std::sqrt(double(d2[i]))) : 0.0;
    total += expected[i];
  }
  const int draws = 100000;
  std::vector<int> counts(d2.size(), 0);
  Rng rng(4242);
  for (int i = 0; i < draws; ++i) {
    const auto c = place_click(region, Polarity::foreground, OracleConfig{}, rng, ClickId{});
    ++counts[static_cast<std::size_t>(c.y) * 8 + c.x];
  }
  double chi2 = 0.0;
  int dof = -1;
  for (std::size_t i = 0; i < d2.size(); ++i) {
    if (expected[i] == 0.0) {
      EXPECT_EQ(counts[i], 0);
      continue;
    }
    const double p = expected[i] / total;
    const double mean = draws * p;
    EXPECT_NEAR(counts[i], mean, 3.0 * std::sqrt(draws * p * (1 - p))) << "pixel " << i;
    chi2 += (counts[i] - mean) * (counts[i] - mean) / mean;
    ++dof;
  }
  EXPECT_LT(chi2, dof + 3.0 * std::sqrt(2.0 * dof));
}

TEST(Oracle, CapMakesDeepPixelsEquiprobable) {
  // Distances 2 and 3 both exceed a cap of 1.5.
  const auto region = block(7, 7, 0, 0, 6, 6);
  Rng rng(5);
  std::map<std::pair<int, int>, int> hits;
  for (int i = 0; i < 20000; ++i) {
    const auto c = place_click(region, Polarity::foreground, OracleConfig{OracleMode::sample, 0, 1.5}, rng, {});
    ++hits[{c.x, c.y}];
  }
  // Center (distance 4) and a distance-2 pixel now share one weight.
  const double ratio = double(hits[{3, 3}]) / double(hits[{1, 1}]);
  EXPECT_NEAR(ratio, 1.0, 0.25);
}

}  // namespace
}  // namespace clickseg
