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
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "clickseg/checkpoint.hpp"
#include "clickseg/model.hpp"
#include "support/gradcheck.hpp"

namespace clickseg {
namespace {

Grid2D random_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  Grid2D g(w, h);
  for (auto& v : g.values()) v = n(rng);
  return g;
}

BinaryMask disk(int w, int h, int cx, int cy, int r) {
  BinaryMask m(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) m.set(x, y);
    }
  }
  return m;
}

InputStack input_with_click(const Grid2D& image, int x, int y) {
  const Click c{ClickId{1}, Polarity::foreground, x, y};
  return make_input(image, std::span<const Click>(&c, 1));
}

ArchConfig small_arch() { return ArchConfig{3, 4, 2, 1}; }

TEST(Model, ParameterLayoutFollowsArch) {
  UNet<float> net(ArchConfig{3, 16, 4, 1});
  const auto& slots = net.parameter_slots();
  EXPECT_EQ(slots.front().name, "enc0.conv1.weight");
  EXPECT_EQ(slots.front().shape, (std::vector<int>{16, 3, 3, 3}));
  EXPECT_EQ(slots.back().name, "head.bias");
  std::size_t total = 0;
  for (const auto& s : slots) total += s.count;
  EXPECT_EQ(total, net.parameters().size());
  bool found_bottleneck = false;
  for (const auto& s : slots) {
    if (s.name == "bottleneck.conv2.weight") {
      EXPECT_EQ(s.shape, (std::vector<int>{256, 256, 3, 3}));
      found_bottleneck = true;
    }
  }
  EXPECT_TRUE(found_bottleneck);
}

TEST(Model, OutputShapeMatchesInputForDivisibleSizes) {
  UNet<float> net(ArchConfig{3, 4, 4, 1});
  net.initialize(7);
  for (int size : {32, 64, 96, 128}) {
    const auto in = input_with_click(random_image(size, size, size), size / 2, size / 2);
    const Grid2D p = predict(net, in);
    ASSERT_EQ(p.width(), size);
    ASSERT_EQ(p.height(), size);
    for (float v : p.values()) {
      ASSERT_GT(v, 0.0f);
      ASSERT_LT(v, 1.0f);
    }
  }
  const auto rect = input_with_click(random_image(64, 32, 3), 10, 10);
  const Grid2D p = predict(net, rect);
  EXPECT_EQ(p.width(), 64);
  EXPECT_EQ(p.height(), 32);
}

TEST(Model, TrainModeOutputStrictlyInsideUnitInterval) {
  ModelState s = ModelState::create(small_arch(), 3);
  const auto in = input_with_click(random_image(32, 32, 1), 5, 5);
  const Grid2D p = forward(s, in, Mode::train);
  for (float v : p.values()) {
    ASSERT_GT(v, 0.0f);
    ASSERT_LT(v, 1.0f);
  }
}

TEST(Model, IndivisibleInputRejected) {
  UNet<float> net(ArchConfig{3, 4, 4, 1});
  net.initialize(1);
  EXPECT_THROW(predict(net, input_with_click(random_image(40, 32, 1), 1, 1)), std::invalid_argument);
}

TEST(Model, InferIsDeterministic) {
  UNet<float> net(ArchConfig{3, 8, 4, 1});
  net.initialize(11);
  const auto in = input_with_click(random_image(96, 96, 5), 40, 40);
  EXPECT_EQ(predict(net, in), predict(net, in));
  UNet<float> again(ArchConfig{3, 8, 4, 1});
  again.initialize(11);
  EXPECT_EQ(predict(again, in), predict(net, in));
}

TEST(Model, BatchedInferMatchesSingle) {
  UNet<float> net(small_arch());
  net.initialize(2);
  std::vector<InputStack> batch = {input_with_click(random_image(32, 32, 1), 3, 3),
                                   input_with_click(random_image(32, 32, 2), 20, 9)};
  const auto both = predict(net, batch);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Grid2D one = predict(net, batch[i]);
    for (std::size_t k = 0; k < one.size(); ++k) ASSERT_NEAR(both[i].values()[k], one.values()[k], 1e-6f);
  }
}

TEST(Model, InitializationFollowsHeNormal) {
  UNet<double> net(ArchConfig{3, 16, 4, 1});
  net.initialize(4242);
  for (const auto& slot : net.parameter_slots()) {
    const auto v = net.parameters().subspan(slot.offset, slot.count);
    if (slot.name.ends_with(".gamma")) {
      for (double g : v) ASSERT_EQ(g, 1.0);
    } else if (slot.name.ends_with(".beta") || slot.name.ends_with(".bias")) {
      for (double b : v) ASSERT_EQ(b, 0.0);
    } else if (slot.name == "bottleneck.conv2.weight") {
      double sq = 0.0;
      for (double w : v) sq += w * w;
      const double expected = 2.0 / (256.0 * 9.0);
      EXPECT_NEAR(sq / double(v.size()), expected, 0.02 * expected);
    }
  }
  for (const auto& slot : net.buffer_slots()) {
    const double want = slot.name.ends_with("running_var") ? 1.0 : 0.0;
    for (double b : net.buffers().subspan(slot.offset, slot.count)) ASSERT_EQ(b, want);
  }
}

TEST(DiceScore, Examples) {
  const BinaryMask gt(2, 1, {1, 0});
  EXPECT_NEAR(dice_score(Grid2D(2, 1, std::vector<float>{0.5f, 0.5f}), gt), 2.0 * 0.5 / 1.5, 1e-12);
  EXPECT_NEAR(dice_score(Grid2D(2, 1, std::vector<float>{0.5f, 0.5f}), gt), 0.6667, 1e-4);
  EXPECT_DOUBLE_EQ(dice_score(Grid2D(2, 1, std::vector<float>{1.0f, 0.0f}), gt), 1.0);
  EXPECT_DOUBLE_EQ(dice_score(Grid2D(2, 1, std::vector<float>{0.0f, 1.0f}), gt), 0.0);
  EXPECT_THROW(dice_score(Grid2D(2, 1, std::vector<float>{0.0f, 0.0f}), BinaryMask(2, 1)), std::domain_error);
  EXPECT_THROW(dice_score(Grid2D(3, 1), gt), std::invalid_argument);
}

TEST(DiceScore, RangeOnRandomSoftPredictions) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (int t = 0; t < 200; ++t) {
    Grid2D p(8, 8);
    for (auto& v : p.values()) v = u(rng);
    BinaryMask g(8, 8);
    for (int i = 0; i < 64; ++i) g.set(i % 8, i / 8, u(rng) < 0.3f);
    g.set(0, 0);
    const double d = dice_score(p, g);
    ASSERT_GE(d, 0.0);
    ASSERT_LE(d, 1.0);
  }
}

TEST(DiceLoss, BatchMeanOfOneMinusDice) {
  nn::FeatureMap<double> p4(1, 2, 1, 4);
  const double a[4] = {1, 1, 0, 0};
  const double b[4] = {1, 0, 0, 0};
  for (int k = 0; k < 4; ++k) {
    p4.plane_ptr(0, 0)[k] = a[k];
    p4.plane_ptr(0, 1)[k] = b[k];
  }
  // Second image: 2*1 / (3 + 1) = 0.5.
  std::vector<BinaryMask> g4 = {BinaryMask(4, 1, {1, 1, 0, 0}), BinaryMask(4, 1, {1, 0, 1, 1})};
  const auto loss = dice_loss<double>(p4, g4);
  EXPECT_NEAR(loss.dice[0], 1.0, 1e-12);
  EXPECT_NEAR(loss.dice[1], 0.5, 1e-12);
  EXPECT_NEAR(loss.loss, 0.25, 1e-12);
}

TEST(DiceLoss, PerfectPredictionHasZeroLoss) {
  nn::FeatureMap<double> p(1, 1, 2, 2);
  const BinaryMask g(2, 2, {1, 0, 0, 1});
  for (int k = 0; k < 4; ++k) p.data[k] = g.bits()[k];
  const auto loss = dice_loss<double>(p, std::vector<BinaryMask>{g});
  EXPECT_NEAR(loss.loss, 0.0, 1e-15);
  for (double d : loss.dprobs.data) EXPECT_EQ(d, 0.0);
}

TEST(DiceLoss, EmptyGroundTruthRejected) {
  nn::FeatureMap<float> p(1, 2, 2, 2);
  std::vector<BinaryMask> gts = {BinaryMask(2, 2, {1, 0, 0, 0}), BinaryMask(2, 2)};
  EXPECT_THROW(dice_loss<float>(p, gts), std::invalid_argument);
  EXPECT_THROW(dice_loss<float>(p, std::span<const BinaryMask>(gts.data(), 1)), std::invalid_argument);
}

TEST(DiceLoss, ProbabilityGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  nn::FeatureMap<double> p(1, 2, 3, 3);
  for (auto& v : p.data) v = u(rng);
  std::vector<BinaryMask> gts = {BinaryMask(3, 3, {1, 1, 0, 0, 1, 0, 0, 0, 0}),
                                 BinaryMask(3, 3, {0, 0, 0, 0, 1, 1, 0, 1, 1})};
  const auto base = dice_loss<double>(p, gts);
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    auto q = p;
    q.data[i] += 1e-6;
    const double up = dice_loss<double>(q, gts).loss;
    q.data[i] -= 2e-6;
    const double down = dice_loss<double>(q, gts).loss;
    EXPECT_NEAR(base.dprobs.data[i], (up - down) / 2e-6, 1e-8);
  }
}

TEST(GradientCheck, SmallStepAgreesForEveryParameter) {
  // A step well inside the activation pieces isolates the backward pass.
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto r = testing::gradient_check(seed, 1e-5, 1e-3);
    EXPECT_EQ(r.failures, 0u) << "seed " << seed << " worst " << r.worst_name << " rel " << r.worst_rel;
    EXPECT_GT(r.checked, 1000u);
  }
}

TEST(GradientCheck, StepOneThousandthMisfitsAreKinkCrossings) {
  const auto r = testing::gradient_check(1, 1e-3, 1e-3);
  std::printf("[gradcheck] step 1e-3: %zu/%zu within tolerance, %zu probes cross a kink, %zu of %zu misfits do\n",
              r.checked - r.failures, r.checked, r.probes_crossing_kink, r.failures_crossing_kink, r.failures);
  EXPECT_LE(r.failures - r.failures_crossing_kink, 2u);
}

TEST(GradientCheck, FloatPathAgreesWithDouble) {
  auto p = testing::make_gradcheck_problem(4);
  UNet<float> f = p.net.cast<float>();
  nn::FeatureMap<float> xf(p.x.c, p.x.n, p.x.h, p.x.w);
  std::transform(p.x.data.begin(), p.x.data.end(), xf.data.begin(), [](double v) { return float(v); });
  Tape<double> td;
  Tape<float> tf;
  const auto ld = dice_loss<double>(p.net.forward_train(p.x, td, false), p.gt);
  const auto lf = dice_loss<float>(f.forward_train(xf, tf, false), p.gt);
  std::vector<double> gd(p.net.parameters().size());
  std::vector<float> gf(gd.size());
  p.net.backward(td, ld.dprobs, gd);
  f.backward(tf, lf.dprobs, gf);
  EXPECT_NEAR(ld.loss, lf.loss, 1e-5);
  double gmax = 0.0;
  for (double g : gd) gmax = std::max(gmax, std::abs(g));
  for (std::size_t i = 0; i < gd.size(); ++i) ASSERT_NEAR(gf[i], gd[i], 1e-3 * gmax);
}

TEST(TrainStep, ZeroLearningRateKeepsParametersButUpdatesRunningStats) {
  ModelState s = ModelState::create(small_arch(), 5);
  const auto params = std::vector<float>(s.net.parameters().begin(), s.net.parameters().end());
  const auto buffers = std::vector<float>(s.net.buffers().begin(), s.net.buffers().end());
  std::vector<TrainingExample> batch = {{input_with_click(random_image(32, 32, 1), 16, 16), disk(32, 32, 16, 16, 6)}};
  train_step(s, batch, AdamConfig{0.0});
  EXPECT_EQ(std::vector<float>(s.net.parameters().begin(), s.net.parameters().end()), params);
  EXPECT_NE(std::vector<float>(s.net.buffers().begin(), s.net.buffers().end()), buffers);
  EXPECT_EQ(s.step_count, 1);
  for (const auto& slot : s.net.buffer_slots()) {
    if (!slot.name.ends_with("running_var")) continue;
    for (float v : s.net.buffers().subspan(slot.offset, slot.count)) ASSERT_GE(v, 0.0f);
  }
}

TEST(TrainStep, AdamMatchesClosedFormFirstStep) {
  std::vector<float> p = {1.0f, -2.0f, 0.5f};
  const std::vector<float> g = {0.3f, -0.1f, 0.0f};
  std::vector<float> m(3, 0.0f), v(3, 0.0f);
  adam_update(p, g, m, v, 1, AdamConfig{0.01});
  // First bias-corrected step moves each parameter by lr * sign(g).
  EXPECT_NEAR(p[0], 1.0f - 0.01f, 1e-6f);
  EXPECT_NEAR(p[1], -2.0f + 0.01f, 1e-6f);
  EXPECT_EQ(p[2], 0.5f);
}

TEST(TrainStep, OverfitsSingleBlob) {
  ModelState s = ModelState::create(ArchConfig{3, 8, 4, 1}, 4242);
  const Grid2D image = random_image(64, 64, 17);
  std::vector<TrainingExample> batch = {{input_with_click(image, 30, 34), disk(64, 64, 30, 34, 12)}};
  double loss = 1.0;
  int steps = 0;
  while (steps < 200 && loss >= 0.05) {
    loss = train_step(s, batch, AdamConfig{1e-2});
    ++steps;
  }
  std::printf("[overfit] loss %.4f after %d steps\n", loss, steps);
  EXPECT_LT(loss, 0.05);
}

TEST(TrainStep, IdenticalRunsGiveIdenticalLossCurves) {
  auto run = [] {
    ModelState s = ModelState::create(small_arch(), 99);
    std::vector<double> curve;
    for (int i = 0; i < 5; ++i) {
      std::vector<TrainingExample> batch = {
          {input_with_click(random_image(32, 32, i), 10 + i, 12), disk(32, 32, 10 + i, 12, 5)},
          {input_with_click(random_image(32, 32, 50 + i), 20, 20 - i), disk(32, 32, 20, 20 - i, 7)}};
      curve.push_back(train_step(s, batch, AdamConfig{1e-3}));
    }
    return std::make_pair(curve, std::vector<float>(s.net.parameters().begin(), s.net.parameters().end()));
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(TrainStep, EmptyGroundTruthAndEmptyBatchRejected) {
  ModelState s = ModelState::create(small_arch(), 1);
  std::vector<TrainingExample> none;
  EXPECT_THROW(train_step(s, none, {}), std::invalid_argument);
  std::vector<TrainingExample> bad = {{input_with_click(random_image(32, 32, 1), 3, 3), BinaryMask(32, 32)}};
  EXPECT_THROW(train_step(s, bad, {}), std::invalid_argument);
}

TEST(TrainStep, NonFiniteLossReported) {
  ModelState s = ModelState::create(small_arch(), 1);
  auto in = input_with_click(random_image(32, 32, 1), 3, 3);
  in.image.values()[5] = std::numeric_limits<float>::quiet_NaN();
  std::vector<TrainingExample> batch = {{in, disk(32, 32, 3, 3, 2)}};
  EXPECT_THROW(train_step(s, batch, {}), NumericError);
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("clickseg_ckpt_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }

  static ModelState trained_state() {
    ModelState s = ModelState::create(small_arch(), 21);
    std::vector<TrainingExample> batch = {{input_with_click(random_image(32, 32, 4), 8, 8), disk(32, 32, 8, 8, 5)}};
    for (int i = 0; i < 3; ++i) train_step(s, batch, AdamConfig{1e-3});
    s.epochs_completed = 2;
    return s;
  }

  std::filesystem::path dir_;
};

TEST_F(CheckpointTest, RoundTripIsBitIdentical) {
  const ModelState s = trained_state();
  const auto path = dir_ / "model.ckpt";
  save_checkpoint(s, path);
  const ModelState r = load_checkpoint(path);
  EXPECT_EQ(r.net.arch(), s.net.arch());
  EXPECT_TRUE(std::equal(r.net.parameters().begin(), r.net.parameters().end(), s.net.parameters().begin()));
  EXPECT_TRUE(std::equal(r.net.buffers().begin(), r.net.buffers().end(), s.net.buffers().begin()));
  EXPECT_EQ(r.adam_m, s.adam_m);
  EXPECT_EQ(r.adam_v, s.adam_v);
  EXPECT_EQ(r.step_count, 3);
  EXPECT_EQ(r.rng_seed, 21u);
  EXPECT_EQ(r.epochs_completed, 2);
  const auto in = input_with_click(random_image(32, 32, 8), 4, 4);
  EXPECT_EQ(predict(r.net, in), predict(s.net, in));
  EXPECT_EQ(serialize_checkpoint(r), serialize_checkpoint(s));
}

TEST_F(CheckpointTest, LayoutStartsWithMagicAndVersion) {
  const auto bytes = serialize_checkpoint(trained_state());
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "CLKSEGCK");
  EXPECT_EQ(bytes[8], 1);
  EXPECT_EQ(bytes[9] | bytes[10] | bytes[11], 0);
}

TEST_F(CheckpointTest, TruncationIsCorrupt) {
  auto bytes = serialize_checkpoint(trained_state());
  for (std::size_t keep : {std::size_t{4}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<unsigned char> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(keep));
    try {
      deserialize_checkpoint(cut);
      ADD_FAILURE() << "truncated to " << keep << " bytes accepted";
    } catch (const CorruptCheckpoint& e) {
      EXPECT_NE(std::string(e.what()).find("corrupt checkpoint"), std::string::npos) << e.what();
    }
  }
  const auto path = dir_ / "cut.ckpt";
  {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size() - 100));
  }
  EXPECT_THROW(load_checkpoint(path), CorruptCheckpoint);
}

TEST_F(CheckpointTest, BitFlipIsCorrupt) {
  auto bytes = serialize_checkpoint(trained_state());
  bytes[bytes.size() / 2] ^= 0x10;
  EXPECT_THROW(deserialize_checkpoint(bytes), CorruptCheckpoint);
}

TEST_F(CheckpointTest, VersionMismatchIsDistinct) {
  auto bytes = serialize_checkpoint(trained_state());
  bytes[8] = 7;
  EXPECT_THROW(deserialize_checkpoint(bytes), CheckpointVersionMismatch);
}

TEST_F(CheckpointTest, ShapeMismatchIsDistinct) {
  // Rewrite the header so its declared section sizes disagree with the arch.
  ModelState s = trained_state();
  auto bytes = serialize_checkpoint(s);
  const std::uint32_t len = bytes[12] | (bytes[13] << 8) | (bytes[14] << 16) | (bytes[15] << 24);
  std::string header(bytes.begin() + 16, bytes.begin() + 16 + len);
  const auto pos = header.find("\"base_width\":4");
  ASSERT_NE(pos, std::string::npos) << header;
  header.replace(pos, 14, "\"base_width\":5");
  std::vector<unsigned char> out(bytes.begin(), bytes.begin() + 16);
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), bytes.begin() + 16 + len, bytes.end() - 4);
  const auto crc = static_cast<std::uint32_t>(::crc32(0L, out.data(), static_cast<uInt>(out.size())));
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(crc >> (8 * i)));
  EXPECT_THROW(deserialize_checkpoint(out), CheckpointShapeMismatch);
}

TEST_F(CheckpointTest, ConfiguredArchConflictRejected) {
  const auto path = dir_ / "w16.ckpt";
  save_checkpoint(ModelState::create(ArchConfig{3, 16, 4, 1}, 1), path);
  EXPECT_THROW(load_checkpoint(path, ArchConfig{3, 32, 4, 1}), ArchMismatch);
  const ModelState ok = load_checkpoint(path, ArchConfig{3, 16, 4, 1});
  EXPECT_EQ(ok.net.arch().base_width, 16);
  EXPECT_THROW(load_checkpoint(dir_ / "missing.ckpt"), CheckpointError);
}

}  // namespace
}  // namespace clickseg
