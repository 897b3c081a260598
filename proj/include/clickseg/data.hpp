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

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "clickseg/grid.hpp"

namespace clickseg {

// Invalid or unreadable data (maps to CLI exit code 3).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Per-pixel integer structure labels, 0 = background.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(int width, int height) : width_(width), height_(height) {
    if (width < 1 || height < 1) throw std::invalid_argument("LabelMap: dimensions must be >= 1");
    labels_.assign(static_cast<std::size_t>(width) * height, 0);
  }
  LabelMap(int width, int height, std::vector<std::uint8_t> labels)
      : width_(width), height_(height), labels_(std::move(labels)) {
    if (width < 1 || height < 1) throw std::invalid_argument("LabelMap: dimensions must be >= 1");
    if (labels_.size() != static_cast<std::size_t>(width) * height) {
      throw std::invalid_argument("LabelMap: label count does not match dimensions");
    }
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return labels_.size(); }
  std::uint8_t operator()(int x, int y) const noexcept { return labels_[index(x, y)]; }
  std::uint8_t& operator()(int x, int y) noexcept { return labels_[index(x, y)]; }
  std::span<const std::uint8_t> values() const noexcept { return labels_; }
  std::span<std::uint8_t> values() noexcept { return labels_; }

  BinaryMask mask_of(std::uint8_t label) const {
    BinaryMask m(width_, height_);
    auto bits = m.bits();
    for (std::size_t i = 0; i < labels_.size(); ++i) bits[i] = labels_[i] == label ? 1 : 0;
    return m;
  }

  // Sorted distinct non-zero labels.
  std::vector<std::uint8_t> present_labels() const {
    std::array<bool, 256> seen{};
    for (auto v : labels_) seen[v] = true;
    std::vector<std::uint8_t> out;
    for (int v = 1; v < 256; ++v) {
      if (seen[static_cast<std::size_t>(v)]) out.push_back(static_cast<std::uint8_t>(v));
    }
    return out;
  }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> labels_;
};

struct StructureInfo {
  int label = 0;
  std::string name;

  friend bool operator==(const StructureInfo&, const StructureInfo&) = default;
};

// One slice with its multi-label ground truth. Spacing lives on the image.
struct Sample {
  Grid2D image;
  LabelMap label;
  std::string case_id;
  int slice_index = 0;
  std::vector<StructureInfo> structures;

  Spacing spacing() const { return image.spacing(); }

  std::string structure_name(int label_value) const {
    for (const auto& s : structures) {
      if (s.label == label_value) return s.name;
    }
    return "label" + std::to_string(label_value);
  }

  void validate() const {
    if (image.width() != label.width() || image.height() != label.height()) {
      throw DataError("sample " + case_id + "/" + std::to_string(slice_index) + ": label dims differ from image");
    }
    if (!image.all_finite()) throw DataError("sample " + case_id + "/" + std::to_string(slice_index) + ": non-finite pixel");
  }

  friend bool operator==(const Sample&, const Sample&) = default;
};

// A slice reduced to one structure: normalized image plus binary target.
struct BinarySample {
  Grid2D image;
  BinaryMask gt;
  std::string structure_id;
  std::string case_id;
  int slice_index = 0;
  int label = 0;
};

enum class NormalizationScope { per_slice, none };

// Zero mean, unit (population) standard deviation. Near-constant images map
// to all zeros.
inline Grid2D normalize_intensities(const Grid2D& image) {
  const auto v = image.values();
  double sum = 0.0;
  for (float f : v) sum += f;
  const double mean = sum / double(v.size());
  double sq = 0.0;
  for (float f : v) sq += (double(f) - mean) * (double(f) - mean);
  const double sd = std::sqrt(sq / double(v.size()));
  Grid2D out(image.width(), image.height(), image.spacing());
  if (sd < 1e-6) return out;
  auto o = out.values();
  for (std::size_t i = 0; i < v.size(); ++i) o[i] = static_cast<float>((double(v[i]) - mean) / sd);
  return out;
}

// One binary sample per label present in the slice, in ascending label order.
inline std::vector<BinarySample> explode_multilabel(const Sample& sample,
                                                    NormalizationScope scope = NormalizationScope::per_slice) {
  sample.validate();
  std::vector<BinarySample> out;
  const auto labels = sample.label.present_labels();
  if (labels.empty()) return out;
  const Grid2D image = scope == NormalizationScope::per_slice ? normalize_intensities(sample.image) : sample.image;
  for (auto l : labels) {
    out.push_back(BinarySample{image, sample.label.mask_of(l), sample.structure_name(l), sample.case_id,
                               sample.slice_index, l});
  }
  return out;
}

struct ExplodedSet {
  std::vector<BinarySample> samples;
  std::size_t skipped_empty_slices = 0;
};

inline ExplodedSet explode_all(std::span<const Sample> samples,
                               NormalizationScope scope = NormalizationScope::per_slice) {
  ExplodedSet out;
  for (const auto& s : samples) {
    auto parts = explode_multilabel(s, scope);
    if (parts.empty()) ++out.skipped_empty_slices;
    for (auto& p : parts) out.samples.push_back(std::move(p));
  }
  return out;
}

inline std::vector<BinarySample> filter_structures(std::vector<BinarySample> samples,
                                                   std::span<const std::string> keep) {
  std::erase_if(samples, [&](const BinarySample& s) {
    return std::find(keep.begin(), keep.end(), s.structure_id) == keep.end();
  });
  return samples;
}

}  // namespace clickseg
