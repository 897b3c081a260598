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
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "clickseg/click.hpp"

namespace clickseg {

// Physical pixel size in millimetres along each axis.
struct Spacing {
  double x = 1.0;
  double y = 1.0;

  friend bool operator==(const Spacing&, const Spacing&) = default;
};

// Dense row-major scalar field. Carries images, probabilities, distance
// fields and guidance maps.
class Grid2D {
 public:
  Grid2D() = default;

  Grid2D(int width, int height, Spacing spacing = {}, float fill = 0.0f)
      : width_(width), height_(height), spacing_(spacing) {
    check_shape();
    values_.assign(static_cast<std::size_t>(width) * height, fill);
  }

  Grid2D(int width, int height, std::vector<float> values, Spacing spacing = {})
      : width_(width), height_(height), spacing_(spacing), values_(std::move(values)) {
    check_shape();
    if (values_.size() != static_cast<std::size_t>(width) * height) {
      throw std::invalid_argument("Grid2D: value count does not match dimensions");
    }
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return values_.size(); }
  Spacing spacing() const noexcept { return spacing_; }
  void set_spacing(Spacing s) {
    if (!(s.x > 0.0) || !(s.y > 0.0)) throw std::invalid_argument("Grid2D: spacing must be positive");
    spacing_ = s;
  }

  float& operator()(int x, int y) noexcept { return values_[index(x, y)]; }
  float operator()(int x, int y) const noexcept { return values_[index(x, y)]; }

  std::span<float> values() noexcept { return values_; }
  std::span<const float> values() const noexcept { return values_; }

  bool contains(int x, int y) const noexcept { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  bool all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](float v) { return std::isfinite(v); });
  }

  friend bool operator==(const Grid2D&, const Grid2D&) = default;

 private:
  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }
  void check_shape() const {
    if (width_ < 1 || height_ < 1) throw std::invalid_argument("Grid2D: dimensions must be >= 1");
    if (!(spacing_.x > 0.0) || !(spacing_.y > 0.0)) throw std::invalid_argument("Grid2D: spacing must be positive");
  }

  int width_ = 0;
  int height_ = 0;
  Spacing spacing_{};
  std::vector<float> values_;
};

// One byte per pixel, each 0 or 1, row-major.
class BinaryMask {
 public:
  BinaryMask() = default;

  BinaryMask(int width, int height) : width_(width), height_(height) {
    if (width < 1 || height < 1) throw std::invalid_argument("BinaryMask: dimensions must be >= 1");
    bits_.assign(static_cast<std::size_t>(width) * height, 0);
  }

  BinaryMask(int width, int height, std::vector<std::uint8_t> bits)
      : width_(width), height_(height), bits_(std::move(bits)) {
    if (width < 1 || height < 1) throw std::invalid_argument("BinaryMask: dimensions must be >= 1");
    if (bits_.size() != static_cast<std::size_t>(width) * height) {
      throw std::invalid_argument("BinaryMask: bit count does not match dimensions");
    }
    for (auto b : bits_) {
      if (b > 1) throw std::invalid_argument("BinaryMask: values must be 0 or 1");
    }
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return bits_.size(); }

  bool operator()(int x, int y) const noexcept { return bits_[index(x, y)] != 0; }
  void set(int x, int y, bool on = true) noexcept { bits_[index(x, y)] = on ? 1 : 0; }

  std::span<const std::uint8_t> bits() const noexcept { return bits_; }
  std::span<std::uint8_t> bits() noexcept { return bits_; }

  std::size_t count() const noexcept {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }
  bool any() const noexcept { return std::find(bits_.begin(), bits_.end(), std::uint8_t{1}) != bits_.end(); }

  bool same_shape(const BinaryMask& o) const noexcept { return width_ == o.width_ && height_ == o.height_; }
  bool contains(int x, int y) const noexcept { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

// False negatives (d_plus) and false positives (d_minus) of a prediction.
struct DisparityPair {
  BinaryMask d_plus;
  BinaryMask d_minus;
};

enum class DistanceUnits { pixels, physical };

namespace detail {

// Lower envelope of parabolas w2 * (q - v)^2 + f[v] sampled at integer q.
// Entries of f equal to +inf are not sites.
inline void lower_envelope_1d(std::span<const double> f, double w2, std::span<double> out,
                              std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  constexpr double inf = std::numeric_limits<double>::infinity();
  v.resize(static_cast<std::size_t>(n));
  z.resize(static_cast<std::size_t>(n) + 1);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    const double fq = f[q] + w2 * double(q) * double(q);
    double s = 0.0;
    while (true) {
      const int p = v[k];
      s = (fq - (f[p] + w2 * double(p) * double(p))) / (2.0 * w2 * double(q - p));
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  if (k < 0) {
    std::fill(out.begin(), out.end(), inf);
    return;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < double(q)) ++k;
    const double d = double(q - v[k]);
    out[q] = w2 * d * d + f[v[k]];
  }
}

// Squared distance from every cell of a width x height lattice to the nearest
// site (sites[i] != 0), with per-axis weights. Returns +inf where no site exists.
inline std::vector<double> squared_edt(std::span<const std::uint8_t> sites, int width, int height,
                                       double wx, double wy) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  const auto w = static_cast<std::size_t>(width);
  const auto h = static_cast<std::size_t>(height);
  std::vector<double> field(w * h);
  std::vector<double> line(std::max(w, h));
  std::vector<double> out(std::max(w, h));
  std::vector<int> v;
  std::vector<double> z;

  const double wy2 = wy * wy;
  for (std::size_t x = 0; x < w; ++x) {
    for (std::size_t y = 0; y < h; ++y) line[y] = sites[y * w + x] ? 0.0 : inf;
    lower_envelope_1d(std::span<const double>(line.data(), h), wy2, std::span<double>(out.data(), h), v, z);
    for (std::size_t y = 0; y < h; ++y) field[y * w + x] = out[y];
  }
  const double wx2 = wx * wx;
  for (std::size_t y = 0; y < h; ++y) {
    std::copy_n(field.begin() + static_cast<std::ptrdiff_t>(y * w), w, line.begin());
    lower_envelope_1d(std::span<const double>(line.data(), w), wx2, std::span<double>(out.data(), w), v, z);
    std::copy_n(out.begin(), w, field.begin() + static_cast<std::ptrdiff_t>(y * w));
  }
  return field;
}

inline double axis_weight(double s, DistanceUnits units) { return units == DistanceUnits::physical ? s : 1.0; }

}  // namespace detail

// Squared distance of every marked pixel to the nearest unmarked pixel, where
// everything outside the image counts as unmarked. Unmarked pixels hold 0.
// Pixel units, so every value is an exact integer.
inline std::vector<std::int64_t> squared_distance_transform(const BinaryMask& mask) {
  const int pw = mask.width() + 2;
  const int ph = mask.height() + 2;
  std::vector<std::uint8_t> sites(static_cast<std::size_t>(pw) * ph, 1);
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      sites[static_cast<std::size_t>(y + 1) * pw + (x + 1)] = mask(x, y) ? 0 : 1;
    }
  }
  const auto padded = detail::squared_edt(sites, pw, ph, 1.0, 1.0);
  std::vector<std::int64_t> out(mask.size());
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      out[static_cast<std::size_t>(y) * mask.width() + x] =
          static_cast<std::int64_t>(padded[static_cast<std::size_t>(y + 1) * pw + (x + 1)]);
    }
  }
  return out;
}

// Exact Euclidean distance transform (separable lower-envelope algorithm).
// Marked pixels get the distance to the nearest unmarked pixel; the outside of
// the image is treated as unmarked. Spacing is applied only in physical units.
inline Grid2D distance_transform(const BinaryMask& mask, Spacing spacing = {},
                                 DistanceUnits units = DistanceUnits::pixels) {
  Grid2D out(mask.width(), mask.height(), spacing);
  if (units == DistanceUnits::pixels) {
    const auto d2 = squared_distance_transform(mask);
    for (std::size_t i = 0; i < d2.size(); ++i) out.values()[i] = static_cast<float>(std::sqrt(double(d2[i])));
    return out;
  }
  const int pw = mask.width() + 2;
  const int ph = mask.height() + 2;
  std::vector<std::uint8_t> sites(static_cast<std::size_t>(pw) * ph, 1);
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) sites[static_cast<std::size_t>(y + 1) * pw + (x + 1)] = mask(x, y) ? 0 : 1;
  }
  const auto padded = detail::squared_edt(sites, pw, ph, spacing.x, spacing.y);
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      out(x, y) = static_cast<float>(std::sqrt(padded[static_cast<std::size_t>(y + 1) * pw + (x + 1)]));
    }
  }
  return out;
}

// Squared distance from every pixel to the nearest set pixel of `targets`
// (no outside-image sites). +inf everywhere when `targets` is empty.
inline std::vector<double> squared_distance_to_set(const BinaryMask& targets, Spacing spacing = {},
                                                   DistanceUnits units = DistanceUnits::physical) {
  return detail::squared_edt(targets.bits(), targets.width(), targets.height(),
                             detail::axis_weight(spacing.x, units), detail::axis_weight(spacing.y, units));
}

inline DisparityPair disparity(const BinaryMask& gt, const BinaryMask& pred) {
  if (!gt.same_shape(pred)) throw std::invalid_argument("disparity: dimension mismatch");
  DisparityPair d{BinaryMask(gt.width(), gt.height()), BinaryMask(gt.width(), gt.height())};
  const auto g = gt.bits();
  const auto p = pred.bits();
  auto plus = d.d_plus.bits();
  auto minus = d.d_minus.bits();
  for (std::size_t i = 0; i < g.size(); ++i) {
    plus[i] = static_cast<std::uint8_t>(g[i] & ~p[i] & 1u);
    minus[i] = static_cast<std::uint8_t>(p[i] & ~g[i] & 1u);
  }
  return d;
}

inline BinaryMask threshold(const Grid2D& probs, float level = 0.5f) {
  BinaryMask m(probs.width(), probs.height());
  auto bits = m.bits();
  const auto v = probs.values();
  for (std::size_t i = 0; i < v.size(); ++i) bits[i] = v[i] >= level ? 1 : 0;
  return m;
}

// Guidance map for clicks of one polarity: a unit-peak Gaussian per click,
// combined by per-pixel maximum, truncated beyond 4 sigma.
inline Grid2D stamp_guidance(std::span<const Click> clicks, int width, int height, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("stamp_guidance: sigma must be positive");
  Grid2D out(width, height);
  if (clicks.empty()) return out;
  const Polarity polarity = clicks.front().polarity;
  const double cutoff2 = 16.0 * sigma * sigma;
  const int radius = static_cast<int>(std::floor(4.0 * sigma));
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (const Click& c : clicks) {
    if (c.polarity != polarity) throw std::invalid_argument("stamp_guidance: clicks must share one polarity");
    if (!out.contains(c.x, c.y)) {
      throw std::out_of_range("stamp_guidance: click (" + std::to_string(c.x) + "," + std::to_string(c.y) +
                              ") outside image");
    }
    const int y0 = std::max(0, c.y - radius), y1 = std::min(height - 1, c.y + radius);
    const int x0 = std::max(0, c.x - radius), x1 = std::min(width - 1, c.x + radius);
    for (int y = y0; y <= y1; ++y) {
      const double dy = y - c.y;
      for (int x = x0; x <= x1; ++x) {
        const double dx = x - c.x;
        const double d2 = dx * dx + dy * dy;
        if (d2 > cutoff2) continue;
        const auto g = static_cast<float>(std::exp(-d2 * inv));
        float& cell = out(x, y);
        cell = std::max(cell, g);
      }
    }
  }
  return out;
}

// Splits a mixed click list by polarity and stamps both channels.
inline std::pair<Grid2D, Grid2D> stamp_guidance_pair(std::span<const Click> clicks, int width, int height,
                                                     double sigma) {
  std::vector<Click> fg, bg;
  for (const Click& c : clicks) (c.polarity == Polarity::foreground ? fg : bg).push_back(c);
  return {stamp_guidance(fg, width, height, sigma), stamp_guidance(bg, width, height, sigma)};
}

}  // namespace clickseg
