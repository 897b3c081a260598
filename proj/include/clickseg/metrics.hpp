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
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "clickseg/grid.hpp"

namespace clickseg {

// Dice of two binary masks; 1 when both are empty, 0 when exactly one is.
inline double dice_binary(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("dice_binary: dimension mismatch");
  std::size_t na = 0, nb = 0, both = 0;
  const auto x = a.bits(), y = b.bits();
  for (std::size_t i = 0; i < x.size(); ++i) {
    na += x[i];
    nb += y[i];
    both += x[i] & y[i];
  }
  if (na == 0 && nb == 0) return 1.0;
  return 2.0 * double(both) / double(na + nb);
}

// Mask pixels with a 4-neighbour that is background or outside the image.
inline BinaryMask boundary(const BinaryMask& m) {
  BinaryMask out(m.width(), m.height());
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      if (!m(x, y)) continue;
      const bool edge = x == 0 || y == 0 || x == m.width() - 1 || y == m.height() - 1 || !m(x - 1, y) ||
                        !m(x + 1, y) || !m(x, y - 1) || !m(x, y + 1);
      if (edge) out.set(x, y);
    }
  }
  return out;
}

struct SurfaceDistances {
  double hd = 0.0;   // mm
  double mad = 0.0;  // mm
};

// Symmetric Hausdorff and mean boundary-to-boundary distance in mm. The mean
// pools both directed distance sets.
inline SurfaceDistances surface_distances(const BinaryMask& a, const BinaryMask& b, Spacing spacing = {}) {
  if (!a.same_shape(b)) throw std::invalid_argument("surface_distances: dimension mismatch");
  if (!a.any() || !b.any()) throw std::domain_error("undefined surface distance: empty mask");
  const BinaryMask ba = boundary(a);
  const BinaryMask bb = boundary(b);
  const auto to_b = squared_distance_to_set(bb, spacing);
  const auto to_a = squared_distance_to_set(ba, spacing);
  double max_d2 = 0.0, sum = 0.0;
  std::size_t n = 0;
  auto accumulate = [&](const BinaryMask& from, const std::vector<double>& field) {
    const auto bits = from.bits();
    for (std::size_t i = 0; i < bits.size(); ++i) {
      if (!bits[i]) continue;
      max_d2 = std::max(max_d2, field[i]);
      sum += std::sqrt(field[i]);
      ++n;
    }
  };
  accumulate(ba, to_b);
  accumulate(bb, to_a);
  return SurfaceDistances{std::sqrt(max_d2), sum / double(n)};
}

struct SliceMetrics {
  double dice = 0.0;
  std::optional<double> hd;   // absent when either mask is empty
  std::optional<double> mad;
  std::string structure_id;
  std::string slice_ref;
};

inline SliceMetrics evaluate_slice(const BinaryMask& pred, const BinaryMask& gt, Spacing spacing,
                                   std::string structure_id = {}, std::string slice_ref = {}) {
  SliceMetrics m;
  m.dice = dice_binary(pred, gt);
  if (pred.any() && gt.any()) {
    const auto sd = surface_distances(pred, gt, spacing);
    m.hd = sd.hd;
    m.mad = sd.mad;
  }
  m.structure_id = std::move(structure_id);
  m.slice_ref = std::move(slice_ref);
  return m;
}

// Box-plot statistics. Percentiles interpolate linearly between order
// statistics; outliers lie more than 1.5 IQR beyond the quartiles and the
// whiskers are the extreme non-outlier values.
struct Summary {
  std::size_t n = 0;
  double mean = 0.0;
  double median = 0.0;
  double p25 = 0.0;
  double p75 = 0.0;
  double min = 0.0;
  double max = 0.0;
  double whisker_low = 0.0;
  double whisker_high = 0.0;
  std::vector<double> outliers;
};

inline double percentile_sorted(std::span<const double> sorted, double q) {
  const double pos = q * double(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - double(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

inline Summary summarize(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("summarize: empty list");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  Summary s;
  s.n = v.size();
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / double(v.size());
  s.median = percentile_sorted(v, 0.5);
  s.p25 = percentile_sorted(v, 0.25);
  s.p75 = percentile_sorted(v, 0.75);
  s.min = v.front();
  s.max = v.back();
  const double iqr = s.p75 - s.p25;
  const double lo = s.p25 - 1.5 * iqr, hi = s.p75 + 1.5 * iqr;
  s.whisker_low = s.max;
  s.whisker_high = s.min;
  for (double x : v) {
    if (x < lo || x > hi) {
      s.outliers.push_back(x);
    } else {
      s.whisker_low = std::min(s.whisker_low, x);
      s.whisker_high = std::max(s.whisker_high, x);
    }
  }
  return s;
}

struct MetricSummary {
  Summary dice;
  std::optional<Summary> hd;
  std::optional<Summary> mad;
  std::size_t n_slices = 0;
  std::size_t n_undefined_surface = 0;
};

struct AggregateReport {
  std::map<std::string, MetricSummary> per_structure;
  MetricSummary overall;
};

inline MetricSummary summarize_metrics(std::span<const SliceMetrics> metrics) {
  if (metrics.empty()) throw std::invalid_argument("aggregate: empty list");
  std::vector<double> dice, hd, mad;
  MetricSummary out;
  for (const auto& m : metrics) {
    dice.push_back(m.dice);
    if (m.hd && m.mad) {
      hd.push_back(*m.hd);
      mad.push_back(*m.mad);
    } else {
      ++out.n_undefined_surface;
    }
  }
  out.n_slices = metrics.size();
  out.dice = summarize(dice);
  if (!hd.empty()) {
    out.hd = summarize(hd);
    out.mad = summarize(mad);
  }
  return out;
}

inline AggregateReport aggregate(std::span<const SliceMetrics> metrics) {
  if (metrics.empty()) throw std::invalid_argument("aggregate: empty list");
  AggregateReport r;
  std::map<std::string, std::vector<SliceMetrics>> groups;
  for (const auto& m : metrics) groups[m.structure_id].push_back(m);
  for (const auto& [name, list] : groups) r.per_structure[name] = summarize_metrics(list);
  r.overall = summarize_metrics(metrics);
  return r;
}

}  // namespace clickseg
