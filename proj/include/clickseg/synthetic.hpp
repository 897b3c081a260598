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

// Seeded abdominal-phantom generator: textured background with 1-3
// non-overlapping structures per slice drawn from three classes (ellipse
// "organ", crescent "rim_organ", lobulated "lesion").

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "clickseg/data.hpp"
#include "clickseg/rng.hpp"

namespace clickseg {

enum class ShapeKind { ellipse, crescent, lobulated };

struct ClassSpec {
  std::string name;
  ShapeKind shape = ShapeKind::ellipse;
  double prior = 1.0;
  double intensity_min = 50.0;  // offset over background
  double intensity_max = 90.0;
  double internal_noise = 0.0;

  friend bool operator==(const ClassSpec&, const ClassSpec&) = default;
};

inline std::vector<ClassSpec> default_classes() {
  return {
      {"organ", ShapeKind::ellipse, 1.0, 50.0, 90.0, 0.0},
      {"rim_organ", ShapeKind::crescent, 1.0, -90.0, -50.0, 0.0},
      {"lesion", ShapeKind::lobulated, 1.0, 15.0, 35.0, 8.0},
  };
}

struct SyntheticConfig {
  int size = 96;
  std::vector<ClassSpec> classes = default_classes();
  double background_level = 40.0;
  double texture_amplitude = 20.0;  // low-frequency background variation
  double noise_amplitude = 12.0;    // white noise standard deviation
  int count = 100;
  std::uint64_t seed = 4242;
  int min_structures = 1;
  int max_structures = 3;
  int slices_per_case = 10;
  Spacing spacing{};
  int first_index = 0;  // global index of the first generated slice

  void validate() const {
    if (size < 16 || size % 16 != 0) throw std::invalid_argument("SyntheticConfig: size must be a positive multiple of 16");
    if (count < 1) throw std::invalid_argument("SyntheticConfig: count must be >= 1");
    if (classes.empty()) throw std::invalid_argument("SyntheticConfig: no structure classes");
    if (min_structures < 1 || max_structures < min_structures) {
      throw std::invalid_argument("SyntheticConfig: invalid structure count range");
    }
    if (slices_per_case < 1) throw std::invalid_argument("SyntheticConfig: slices_per_case must be >= 1");
    for (const auto& c : classes) {
      if (!(c.prior > 0.0)) throw std::invalid_argument("SyntheticConfig: class priors must be positive");
    }
  }
};

inline ShapeKind parse_shape_kind(std::string_view s) {
  if (s == "ellipse") return ShapeKind::ellipse;
  if (s == "crescent") return ShapeKind::crescent;
  if (s == "lobulated") return ShapeKind::lobulated;
  throw std::invalid_argument("unknown shape kind: " + std::string(s));
}

inline std::string_view to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::ellipse: return "ellipse";
    case ShapeKind::crescent: return "crescent";
    case ShapeKind::lobulated: return "lobulated";
  }
  return "ellipse";
}

// Keeps only the named classes (in the given order).
inline std::vector<ClassSpec> select_classes(const std::vector<ClassSpec>& all, std::span<const std::string> names) {
  std::vector<ClassSpec> out;
  for (const auto& n : names) {
    auto it = std::find_if(all.begin(), all.end(), [&](const ClassSpec& c) { return c.name == n; });
    if (it == all.end()) throw std::invalid_argument("unknown structure class: " + n);
    out.push_back(*it);
  }
  return out;
}

namespace detail {

inline constexpr int kMinStructurePixels = 4;

struct Shape {
  BinaryMask mask;
  std::size_t area = 0;
};

// Rasterizes a shape of the given kind centred at (cx, cy). Radii are in pixels.
inline Shape rasterize(ShapeKind kind, int size, double cx, double cy, Rng& rng, double& extent) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const double s = size;
  BinaryMask m(size, size);
  auto inside = [&](auto&& pred) {
    std::size_t area = 0;
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        if (pred(x + 0.5 - cx, y + 0.5 - cy)) {
          m.set(x, y);
          ++area;
        }
      }
    }
    return area;
  };
  std::size_t area = 0;
  switch (kind) {
    case ShapeKind::ellipse: {
      const double a = s * (0.09 + 0.11 * U(rng));
      const double b = a * (0.6 + 0.4 * U(rng));
      const double t = std::numbers::pi * U(rng);
      const double ct = std::cos(t), st = std::sin(t);
      extent = a;
      area = inside([&](double dx, double dy) {
        const double u = (dx * ct + dy * st) / a, v = (-dx * st + dy * ct) / b;
        return u * u + v * v <= 1.0;
      });
      break;
    }
    case ShapeKind::crescent: {
      const double r_out = s * (0.10 + 0.09 * U(rng));
      const double r_in = r_out * (0.6 + 0.2 * U(rng));
      const double off = r_out * (0.35 + 0.2 * U(rng));
      const double t = 2.0 * std::numbers::pi * U(rng);
      const double ox = off * std::cos(t), oy = off * std::sin(t);
      extent = r_out;
      area = inside([&](double dx, double dy) {
        const bool outer = dx * dx + dy * dy <= r_out * r_out;
        const double ix = dx - ox, iy = dy - oy;
        return outer && ix * ix + iy * iy > r_in * r_in;
      });
      break;
    }
    case ShapeKind::lobulated: {
      const double r0 = s * (0.07 + 0.08 * U(rng));
      double amp[3], phase[3];
      for (int k = 0; k < 3; ++k) {
        amp[k] = 0.12 * U(rng);
        phase[k] = 2.0 * std::numbers::pi * U(rng);
      }
      extent = r0 * 1.36;
      area = inside([&](double dx, double dy) {
        const double th = std::atan2(dy, dx);
        double r = 1.0;
        for (int k = 0; k < 3; ++k) r += amp[k] * std::cos((k + 2) * th + phase[k]);
        return dx * dx + dy * dy <= (r0 * r) * (r0 * r);
      });
      break;
    }
  }
  return Shape{std::move(m), area};
}

inline BinaryMask dilate(const BinaryMask& m, int radius) {
  BinaryMask out(m.width(), m.height());
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      if (!m(x, y)) continue;
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
          if (out.contains(x + dx, y + dy)) out.set(x + dx, y + dy);
        }
      }
    }
  }
  return out;
}

// 3x3 box blur of a 0/1 mask, giving soft partial-volume edges.
inline std::vector<float> soften(const BinaryMask& m) {
  std::vector<float> out(m.size(), 0.0f);
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      int n = 0, on = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (!m.contains(x + dx, y + dy)) continue;
          ++n;
          on += m(x + dx, y + dy) ? 1 : 0;
        }
      }
      out[static_cast<std::size_t>(y) * m.width() + x] = float(on) / float(n);
    }
  }
  return out;
}

}  // namespace detail

// Generates one slice; `index` is the global slice number.
inline Sample generate_slice(const SyntheticConfig& cfg, int index) {
  Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(index), 0x5e9du}));
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::normal_distribution<double> N(0.0, 1.0);
  const int size = cfg.size;

  Sample sample;
  sample.case_id = "case" + std::to_string(index / cfg.slices_per_case);
  while (sample.case_id.size() < 8) sample.case_id.insert(4, "0");
  sample.slice_index = index % cfg.slices_per_case;
  sample.label = LabelMap(size, size);

  // Background: a few random low-frequency waves plus white noise.
  std::vector<double> img(static_cast<std::size_t>(size) * size, cfg.background_level);
  for (int k = 0; k < 4; ++k) {
    const double wavelength = size * (0.12 + 0.38 * U(rng));
    const double dir = 2.0 * std::numbers::pi * U(rng);
    const double ph = 2.0 * std::numbers::pi * U(rng);
    const double kx = std::cos(dir) * 2.0 * std::numbers::pi / wavelength;
    const double ky = std::sin(dir) * 2.0 * std::numbers::pi / wavelength;
    const double amp = cfg.texture_amplitude * 0.25 * (0.5 + U(rng));
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) img[static_cast<std::size_t>(y) * size + x] += amp * std::sin(kx * x + ky * y + ph);
    }
  }

  double total_prior = 0.0;
  for (const auto& c : cfg.classes) total_prior += c.prior;
  const int wanted = cfg.min_structures +
                     static_cast<int>(U(rng) * (cfg.max_structures - cfg.min_structures + 1));
  BinaryMask occupied(size, size);
  for (int s = 0; s < std::min(wanted, cfg.max_structures); ++s) {
    double pick = U(rng) * total_prior;
    std::size_t ci = 0;
    while (ci + 1 < cfg.classes.size() && pick >= cfg.classes[ci].prior) pick -= cfg.classes[ci++].prior;
    const ClassSpec& cls = cfg.classes[ci];
    const double offset = cls.intensity_min + (cls.intensity_max - cls.intensity_min) * U(rng);
    bool placed = false;
    for (int attempt = 0; attempt < 60 && !placed; ++attempt) {
      const double cx = 4.0 + (size - 8.0) * U(rng);
      const double cy = 4.0 + (size - 8.0) * U(rng);
      double extent = 0.0;
      auto shape = detail::rasterize(cls.shape, size, cx, cy, rng, extent);
      if (cx - extent < 2.0 || cy - extent < 2.0 || cx + extent > size - 2.0 || cy + extent > size - 2.0) continue;
      if (shape.area < static_cast<std::size_t>(detail::kMinStructurePixels)) continue;
      const auto grown = detail::dilate(shape.mask, 2);
      bool overlap = false;
      for (std::size_t i = 0; i < grown.size() && !overlap; ++i) overlap = grown.bits()[i] && occupied.bits()[i];
      if (overlap) continue;
      const int label = static_cast<int>(sample.structures.size()) + 1;
      const auto soft = detail::soften(shape.mask);
      for (std::size_t i = 0; i < soft.size(); ++i) {
        if (shape.mask.bits()[i]) {
          occupied.bits()[i] = 1;
          sample.label.values()[i] = static_cast<std::uint8_t>(label);
        }
        if (soft[i] > 0.0f) img[i] += soft[i] * (offset + cls.internal_noise * N(rng));
      }
      sample.structures.push_back({label, cls.name});
      placed = true;
    }
  }

  for (auto& v : img) v += cfg.noise_amplitude * N(rng);
  std::vector<float> values(img.size());
  std::transform(img.begin(), img.end(), values.begin(), [](double d) { return static_cast<float>(d); });
  sample.image = Grid2D(size, size, std::move(values), cfg.spacing);
  return sample;
}

// Deterministic for a fixed config; slice i depends only on (seed, first_index + i).
inline std::vector<Sample> generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(cfg.count));
  for (int i = 0; i < cfg.count; ++i) out.push_back(generate_slice(cfg, cfg.first_index + i));
  return out;
}

}  // namespace clickseg
