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
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "clickseg/click.hpp"
#include "clickseg/grid.hpp"
#include "clickseg/rng.hpp"

namespace clickseg {

enum class OracleMode { sample, argmax };

inline std::string_view to_string(OracleMode m) { return m == OracleMode::sample ? "sample" : "argmax"; }

inline OracleMode parse_oracle_mode(std::string_view s) {
  if (s == "sample") return OracleMode::sample;
  if (s == "argmax") return OracleMode::argmax;
  throw std::invalid_argument("unknown oracle mode: " + std::string(s));
}

struct OracleConfig {
  OracleMode mode = OracleMode::sample;
  std::uint64_t rng_seed = 4242;
  double exponent_cap = 60.0;
};

namespace detail {

inline double capped_weight(double distance, double cap) { return std::expm1(std::min(distance, cap)); }

inline void check_cap(double cap) {
  if (!(cap > 0.0)) throw std::invalid_argument("oracle: exponent_cap must be positive");
}

}  // namespace detail

// Unnormalized click weights exp(min(dd, cap)) - 1.
inline Grid2D click_probability_field(const Grid2D& dd, double cap = 60.0) {
  detail::check_cap(cap);
  Grid2D out(dd.width(), dd.height(), dd.spacing());
  const auto in = dd.values();
  auto w = out.values();
  for (std::size_t i = 0; i < in.size(); ++i) w[i] = static_cast<float>(detail::capped_weight(in[i], cap));
  return out;
}

// Draws a pixel index with probability proportional to weights. Returns
// nullopt when every weight is zero.
inline std::optional<std::size_t> sample_index(std::span<const double> weights, Rng& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) return std::nullopt;
  const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  double acc = 0.0;
  std::optional<std::size_t> last;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    acc += weights[i];
    last = i;
    if (u < acc) return i;
  }
  return last;
}

// Places a click inside `region` following the configured mode. The region
// must be non-empty.
inline Click place_click(const BinaryMask& region, Polarity polarity, const OracleConfig& cfg, Rng& rng,
                         ClickId id) {
  const auto d2 = squared_distance_transform(region);
  std::size_t chosen = 0;
  if (cfg.mode == OracleMode::argmax) {
    chosen = static_cast<std::size_t>(std::max_element(d2.begin(), d2.end()) - d2.begin());
  } else {
    std::vector<double> weights(d2.size());
    for (std::size_t i = 0; i < d2.size(); ++i) {
      weights[i] = d2[i] > 0 ? detail::capped_weight(std::sqrt(double(d2[i])), cfg.exponent_cap) : 0.0;
    }
    const auto idx = sample_index(weights, rng);
    if (!idx) throw std::logic_error("place_click: empty region");
    chosen = *idx;
  }
  const auto w = static_cast<std::size_t>(region.width());
  return Click{id, polarity, static_cast<int>(chosen % w), static_cast<int>(chosen / w)};
}

// Simulated user: a background click when the false-positive area exceeds the
// false-negative area, a foreground click otherwise; nothing when the
// prediction is perfect.
inline std::optional<Click> next_click(const BinaryMask& gt, const BinaryMask& pred, const OracleConfig& cfg,
                                       Rng& rng, ClickId id = {}) {
  detail::check_cap(cfg.exponent_cap);
  const DisparityPair d = disparity(gt, pred);
  const std::size_t fn = d.d_plus.count();
  const std::size_t fp = d.d_minus.count();
  if (fn == 0 && fp == 0) return std::nullopt;
  if (fp > fn) return place_click(d.d_minus, Polarity::background, cfg, rng, id);
  return place_click(d.d_plus, Polarity::foreground, cfg, rng, id);
}

// First click of an interaction, computed against an all-zero prediction.
inline Click initial_click(const BinaryMask& gt, const OracleConfig& cfg, Rng& rng, ClickId id = {}) {
  if (!gt.any()) throw std::invalid_argument("initial_click: ground truth is empty");
  detail::check_cap(cfg.exponent_cap);
  return place_click(gt, Polarity::foreground, cfg, rng, id);
}

}  // namespace clickseg
