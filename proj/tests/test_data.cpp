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

#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <set>

#include <unistd.h>

#include "clickseg/data.hpp"
#include "clickseg/dataset.hpp"
#include "clickseg/synthetic.hpp"

namespace clickseg {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("clickseg_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Sample tiny_sample() {
  Sample s;
  s.image = Grid2D(4, 3, std::vector<float>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}, Spacing{1.0, 1.0});
  s.label = LabelMap(4, 3, std::vector<std::uint8_t>{0, 1, 1, 0, 0, 3, 3, 0, 0, 0, 0, 0});
  s.case_id = "case0007";
  s.slice_index = 2;
  s.structures = {{1, "organ"}, {3, "lesion"}};
  return s;
}

double mean_of(const Grid2D& g) {
  double s = 0;
  for (float v : g.values()) s += v;
  return s / double(g.size());
}

double std_of(const Grid2D& g) {
  const double m = mean_of(g);
  double s = 0;
  for (float v : g.values()) s += (v - m) * (v - m);
  return std::sqrt(s / double(g.size()));
}

TEST(Normalize, ConstantImageIsZero) {
  const auto n = normalize_intensities(Grid2D(5, 5, Spacing{}, 3.0f));
  for (float v : n.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Normalize, TwoValues) {
  const auto n = normalize_intensities(Grid2D(2, 2, std::vector<float>{0, 2, 0, 2}));
  EXPECT_FLOAT_EQ(n(0, 0), -1.0f);
  EXPECT_FLOAT_EQ(n(1, 0), 1.0f);
}

TEST(Normalize, MomentsIdempotenceAndAffineInvariance) {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> N(40.0f, 25.0f);
  for (int trial = 0; trial < 20; ++trial) {
    Grid2D g(32, 24);
    for (auto& v : g.values()) v = N(rng);
    const auto n = normalize_intensities(g);
    EXPECT_NEAR(mean_of(n), 0.0, 1e-5);
    EXPECT_NEAR(std_of(n), 1.0, 1e-4);
    const auto nn = normalize_intensities(n);
    Grid2D affine(32, 24);
    for (std::size_t i = 0; i < g.size(); ++i) affine.values()[i] = 3.5f * g.values()[i] - 70.0f;
    const auto na = normalize_intensities(affine);
    for (std::size_t i = 0; i < g.size(); ++i) {
      EXPECT_NEAR(nn.values()[i], n.values()[i], 1e-5);
      EXPECT_NEAR(na.values()[i], n.values()[i], 1e-4);
    }
  }
}

TEST(Explode, OneSamplePerPresentLabel) {
  const auto parts = explode_multilabel(tiny_sample());
  ASSERT_EQ(parts.size(), 2u);
  EXPECT_EQ(parts[0].structure_id, "organ");
  EXPECT_EQ(parts[1].structure_id, "lesion");
  EXPECT_EQ(parts[0].gt.count(), 2u);
  EXPECT_EQ(parts[1].gt.count(), 2u);
  EXPECT_NEAR(mean_of(parts[0].image), 0.0, 1e-5);
}

TEST(Explode, BackgroundOnlySliceIsEmpty) {
  auto s = tiny_sample();
  for (auto& v : s.label.values()) v = 0;
  EXPECT_TRUE(explode_multilabel(s).empty());
  const std::vector<Sample> both{s, tiny_sample()};
  const auto set = explode_all(both);
  EXPECT_EQ(set.skipped_empty_slices, 1u);
  EXPECT_EQ(set.samples.size(), 2u);
}

TEST(Explode, MatchesLabelHistogramAndPreservesPixels) {
  SyntheticConfig cfg;
  cfg.count = 300;  // 30 cases of 10 slices
  cfg.size = 48;
  cfg.seed = 99;
  const auto samples = generate_synthetic(cfg);
  for (const auto& s : samples) {
    std::set<int> distinct;
    for (auto v : s.label.values()) {
      if (v) distinct.insert(v);
    }
    const auto parts = explode_multilabel(s);
    ASSERT_EQ(parts.size(), distinct.size());
    BinaryMask uni(s.image.width(), s.image.height());
    for (const auto& p : parts) {
      EXPECT_TRUE(p.gt.any());
      for (std::size_t i = 0; i < uni.size(); ++i) {
        ASSERT_FALSE(uni.bits()[i] && p.gt.bits()[i]) << "structures overlap";
        uni.bits()[i] |= p.gt.bits()[i];
      }
    }
    for (std::size_t i = 0; i < uni.size(); ++i) ASSERT_EQ(uni.bits()[i], s.label.values()[i] != 0 ? 1 : 0);
  }
}

TEST(FilterStructures, KeepsNamed) {
  auto parts = explode_multilabel(tiny_sample());
  const std::vector<std::string> keep{"lesion"};
  const auto kept = filter_structures(parts, keep);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].label, 3);
}

TEST(Synthetic, DeterministicPerSeed) {
  SyntheticConfig cfg;
  cfg.count = 20;
  EXPECT_EQ(generate_synthetic(cfg), generate_synthetic(cfg));
  auto other = cfg;
  other.seed = cfg.seed + 1;
  const auto a = generate_synthetic(cfg), b = generate_synthetic(other);
  bool differ = false;
  for (std::size_t i = 0; i < a.size(); ++i) differ = differ || !(a[i].label == b[i].label);
  EXPECT_TRUE(differ);
}

TEST(Synthetic, StructuresAreClickableAndSeparated) {
  SyntheticConfig cfg;
  cfg.count = 200;
  const auto samples = generate_synthetic(cfg);
  for (const auto& s : samples) {
    ASSERT_GE(s.structures.size(), 1u);
    ASSERT_LE(s.structures.size(), 3u);
    for (const auto& st : s.structures) {
      EXPECT_GE(s.label.mask_of(static_cast<std::uint8_t>(st.label)).count(), 4u);
    }
  }
}

TEST(Synthetic, RejectsBadConfig) {
  SyntheticConfig cfg;
  cfg.size = 40;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.size = 96;
  cfg.count = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Synthetic, SliceDependsOnlyOnIndex) {
  SyntheticConfig cfg;
  cfg.count = 10;
  const auto all = generate_synthetic(cfg);
  cfg.first_index = 5;
  cfg.count = 5;
  const auto tail = generate_synthetic(cfg);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(all[static_cast<std::size_t>(5 + i)], tail[static_cast<std::size_t>(i)]);
}

TEST(Synthetic, GenerationSpeedAndClassPriors) {
  SyntheticConfig cfg;
  cfg.count = 2000;
  const auto t0 = std::chrono::steady_clock::now();
  const auto samples = generate_synthetic(cfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(secs, 60.0);
  std::map<std::string, double> counts;
  double total = 0;
  for (const auto& s : samples) {
    for (const auto& st : s.structures) {
      counts[st.name] += 1;
      total += 1;
    }
  }
  double prior_total = 0;
  for (const auto& c : cfg.classes) prior_total += c.prior;
  for (const auto& c : cfg.classes) {
    const double expected = c.prior / prior_total;
    EXPECT_NEAR(counts[c.name] / total, expected, 0.1 * expected) << c.name;
  }
}

TEST(SampleIo, RoundTripIsBitIdentical) {
  const auto dir = scratch_dir("io");
  const auto s = tiny_sample();
  write_sample(s, dir / "a" / "2");
  EXPECT_EQ(read_sample(dir / "a" / "2"), s);
  SyntheticConfig cfg;
  cfg.count = 3;
  cfg.spacing = Spacing{0.8, 1.25};
  for (const auto& g : generate_synthetic(cfg)) {
    write_sample(g, dir / "g");
    const auto back = read_sample(dir / "g");
    EXPECT_EQ(back, g);
    EXPECT_EQ(back.spacing(), (Spacing{0.8, 1.25}));
  }
  fs::remove_all(dir);
}

TEST(SampleIo, DefaultSpacingReadsBackExactly) {
  const auto dir = scratch_dir("spacing");
  write_sample(tiny_sample(), dir / "s");
  EXPECT_EQ(read_sample(dir / "s").spacing(), (Spacing{1.0, 1.0}));
  fs::remove_all(dir);
}

TEST(SampleIo, MissingSidecar) {
  const auto dir = scratch_dir("missing");
  write_sample(tiny_sample(), dir / "s");
  fs::remove(dir / "s.json");
  try {
    read_sample(dir / "s");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("missing metadata"), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(SampleIo, TruncatedBlob) {
  const auto dir = scratch_dir("trunc");
  write_sample(tiny_sample(), dir / "s");
  fs::resize_file(dir / "s.img", 8);
  EXPECT_THROW(read_sample(dir / "s"), DataError);
  fs::remove_all(dir);
}

TEST(Manifest, SplitsFoldsAndRoundTrip) {
  SyntheticConfig cfg;
  cfg.count = 60;
  cfg.size = 32;
  const auto samples = generate_synthetic(cfg);
  const auto m = build_manifest(samples, 1, 2, 3);
  EXPECT_EQ(m.cases_for("train").size(), 3u);
  EXPECT_EQ(m.cases_for("val").size(), 1u);
  EXPECT_EQ(m.cases_for("test").size(), 2u);
  EXPECT_EQ(m.cases_for("test", 0).size(), 2u);
  EXPECT_EQ(m.cases_for("train", 0).size(), 4u);
  EXPECT_THROW(m.cases_for("test", 3), DataError);
  EXPECT_THROW(build_manifest(samples, 3, 3, 0), DataError);

  const auto dir = scratch_dir("manifest");
  write_dataset(samples, m, dir);
  const auto back = read_manifest(dir);
  EXPECT_EQ(to_json(back), to_json(m));
  const auto loaded = load_slices(dir, back.slices_of(back.cases_for("val")));
  ASSERT_EQ(loaded.size(), 10u);
  EXPECT_EQ(loaded[0], samples[30]);
  fs::remove_all(dir);
}

TEST(SliceRef, ParseAndFormat) {
  const auto r = parse_slice_ref("case0003:7");
  EXPECT_EQ(r.case_id, "case0003");
  EXPECT_EQ(r.slice_index, 7);
  EXPECT_EQ(r.id(), "case0003:7");
  EXPECT_THROW(parse_slice_ref("nonsense"), DataError);
}

}  // namespace
}  // namespace clickseg
