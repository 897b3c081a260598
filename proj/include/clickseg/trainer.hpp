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
#include <chrono>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "clickseg/checkpoint.hpp"
#include "clickseg/data.hpp"
#include "clickseg/metrics.hpp"
#include "clickseg/model.hpp"
#include "clickseg/oracle.hpp"
#include "clickseg/rng.hpp"

namespace clickseg {

inline constexpr float kPredictionThreshold = 0.5f;

// Anything that maps a batch of inputs to thresholded masks.
template <typename P>
concept MaskPredictor = requires(const P& p, std::span<const InputStack> in) {
  { p(in) } -> std::convertible_to<std::vector<BinaryMask>>;
};

// Infer-mode network prediction thresholded at 0.5.
struct NetworkPredictor {
  const UNet<float>* net = nullptr;

  std::vector<BinaryMask> operator()(std::span<const InputStack> inputs) const {
    std::vector<BinaryMask> out;
    for (const auto& probs : predict(*net, inputs)) out.push_back(threshold(probs, kPredictionThreshold));
    return out;
  }
};

struct RolloutConfig {
  OracleConfig oracle{};
  double click_sigma = kClickSigma;
};

struct RolloutItem {
  InputStack input;
  BinaryMask gt;
  std::vector<Click> clicks;
  int t = 0;  // realized interactions
};

// Probability that round k (1-based) adds a click: certain for the first
// round, then decreasing linearly, 1 - (k - 1) / K.
inline double interaction_probability(int k, int max_interactions) {
  if (k <= 1) return 1.0;
  return std::max(0.0, 1.0 - double(k - 1) / double(max_interactions));
}

// Simulates up to K clicks per image against the current predictor without
// touching any parameters. Each image uses its own stream seeded from `rng`.
template <MaskPredictor Predictor>
std::vector<RolloutItem> rollout(std::span<const BinarySample> batch, const Predictor& predictor, int max_interactions,
                                 const RolloutConfig& cfg, Rng& rng) {
  if (max_interactions < 1) throw std::invalid_argument("rollout: max_interactions must be >= 1");
  std::vector<RolloutItem> items;
  std::vector<Rng> streams;
  std::vector<bool> active;
  items.reserve(batch.size());
  for (const auto& s : batch) {
    if (!s.gt.any()) throw std::invalid_argument("rollout: empty ground truth in batch");
    streams.emplace_back(rng());
  }
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& s = batch[i];
    Click first = initial_click(s.gt, cfg.oracle, streams[i], ClickId{1});
    RolloutItem item{make_input(s.image, std::span<const Click>(&first, 1), cfg.click_sigma), s.gt, {first}, 1};
    items.push_back(std::move(item));
    active.push_back(true);
  }
  for (int k = 2; k <= max_interactions; ++k) {
    const double p = interaction_probability(k, max_interactions);
    std::vector<std::size_t> chosen;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (!active[i]) continue;
      if (std::bernoulli_distribution(p)(streams[i])) chosen.push_back(i);
    }
    if (chosen.empty()) continue;
    std::vector<InputStack> inputs;
    inputs.reserve(chosen.size());
    for (auto i : chosen) inputs.push_back(items[i].input);
    const std::vector<BinaryMask> preds = predictor(std::span<const InputStack>(inputs));
    if (preds.size() != chosen.size()) throw std::logic_error("rollout: predictor returned wrong batch size");
    for (std::size_t j = 0; j < chosen.size(); ++j) {
      auto& item = items[chosen[j]];
      const ClickId id{static_cast<std::uint64_t>(item.clicks.size() + 1)};
      auto click = next_click(item.gt, preds[j], cfg.oracle, streams[chosen[j]], id);
      if (!click) {
        // The prediction is already perfect; guidance will not change again.
        active[chosen[j]] = false;
        continue;
      }
      item.clicks.push_back(*click);
      item.t = static_cast<int>(item.clicks.size());
      item.input = make_input(item.input.image, item.clicks, cfg.click_sigma);
    }
  }
  return items;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalConfig {
  std::vector<int> budgets{1, 2, 5};
  OracleConfig oracle{};
  double click_sigma = kClickSigma;
  int workers = 1;
};

struct EvalResult {
  std::vector<int> budgets;
  std::map<int, std::vector<SliceMetrics>> per_budget;
  std::size_t skipped_empty = 0;
  std::size_t evaluated = 0;
};

// Click trace of one simulated interaction session.
struct SimulatedStep {
  Click click;
  BinaryMask mask;
  double dice = 0.0;
};

// Initial click plus up to (max_clicks - 1) corrective clicks, each followed by
// a prediction. Stops early when the prediction becomes perfect.
template <MaskPredictor Predictor>
std::vector<SimulatedStep> simulate_interaction(const BinarySample& s, const Predictor& predictor, int max_clicks,
                                                const OracleConfig& oracle, double sigma, Rng& rng) {
  std::vector<SimulatedStep> steps;
  std::vector<Click> clicks{initial_click(s.gt, oracle, rng, ClickId{1})};
  for (int c = 1;; ++c) {
    InputStack input = make_input(s.image, clicks, sigma);
    BinaryMask mask = predictor(std::span<const InputStack>(&input, 1)).front();
    const double d = dice_binary(mask, s.gt);
    steps.push_back({clicks.back(), mask, d});
    if (c >= max_clicks) break;
    auto next = next_click(s.gt, mask, oracle, rng, ClickId{static_cast<std::uint64_t>(c + 1)});
    if (!next) break;
    clicks.push_back(*next);
  }
  return steps;
}

template <MaskPredictor Predictor>
EvalResult evaluate(const Predictor& predictor, std::span<const BinarySample> samples, const EvalConfig& cfg) {
  if (cfg.budgets.empty()) throw std::invalid_argument("evaluate: no click budgets");
  for (int b : cfg.budgets) {
    if (b < 1) throw std::invalid_argument("evaluate: click budgets must be >= 1");
  }
  EvalResult result;
  result.budgets = cfg.budgets;
  const int max_budget = *std::max_element(cfg.budgets.begin(), cfg.budgets.end());

  // per_slice[i][j] = metrics for slice i at budgets[j]
  std::vector<std::optional<std::vector<SliceMetrics>>> per_slice(samples.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& s = samples[i];
      if (!s.gt.any()) continue;
      Rng rng(derive_seed(cfg.oracle.rng_seed, {static_cast<std::uint64_t>(i)}));
      const auto steps = simulate_interaction(s, predictor, max_budget, cfg.oracle, cfg.click_sigma, rng);
      std::vector<SliceMetrics> row;
      const std::string ref = s.case_id + ":" + std::to_string(s.slice_index);
      for (int b : cfg.budgets) {
        const auto& step = steps[std::min<std::size_t>(static_cast<std::size_t>(b), steps.size()) - 1];
        row.push_back(evaluate_slice(step.mask, s.gt, s.image.spacing(), s.structure_id, ref));
      }
      per_slice[i] = std::move(row);
    }
  };
  const int workers = std::max(1, cfg.workers);
  if (workers == 1 || samples.size() < 2) {
    work(0, samples.size());
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (samples.size() + workers - 1) / static_cast<std::size_t>(workers);
    for (std::size_t b = 0; b < samples.size(); b += chunk) pool.emplace_back(work, b, std::min(samples.size(), b + chunk));
  }
  for (const auto& row : per_slice) {
    if (!row) {
      ++result.skipped_empty;
      continue;
    }
    ++result.evaluated;
    for (std::size_t j = 0; j < cfg.budgets.size(); ++j) result.per_budget[cfg.budgets[j]].push_back((*row)[j]);
  }
  return result;
}

inline double mean_dice(const EvalResult& r, int budget) {
  const auto it = r.per_budget.find(budget);
  if (it == r.per_budget.end() || it->second.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& m : it->second) sum += m.dice;
  return sum / double(it->second.size());
}

inline nlohmann::json summary_json(const Summary& s) {
  return {{"n", s.n},         {"mean", s.mean},       {"median", s.median},           {"p25", s.p25},
          {"p75", s.p75},     {"min", s.min},         {"max", s.max},                 {"whisker_low", s.whisker_low},
          {"whisker_high", s.whisker_high}, {"outliers", s.outliers}};
}

inline nlohmann::json metric_row(const MetricSummary& m) {
  nlohmann::json row = {
      {"dice", m.dice.mean},
      {"hd_mm", m.hd ? nlohmann::json(m.hd->mean) : nlohmann::json(nullptr)},
      {"mad_mm", m.mad ? nlohmann::json(m.mad->mean) : nlohmann::json(nullptr)},
      {"n_slices", m.n_slices},
      {"n_undefined_surface", m.n_undefined_surface},
      {"stats", {{"dice", summary_json(m.dice)}}},
  };
  if (m.hd) row["stats"]["hd_mm"] = summary_json(*m.hd);
  if (m.mad) row["stats"]["mad_mm"] = summary_json(*m.mad);
  return row;
}

// Evaluation report: one row per (structure, budget) and one overall row per budget.
inline nlohmann::json report_json(const EvalResult& r) {
  nlohmann::json rows = nlohmann::json::array();
  nlohmann::json overall = nlohmann::json::array();
  for (int b : r.budgets) {
    const auto it = r.per_budget.find(b);
    if (it == r.per_budget.end() || it->second.empty()) continue;
    const auto agg = aggregate(it->second);
    for (const auto& [name, m] : agg.per_structure) {
      auto row = metric_row(m);
      row["structure"] = name;
      row["budget"] = b;
      rows.push_back(std::move(row));
    }
    auto row = metric_row(agg.overall);
    row["budget"] = b;
    overall.push_back(std::move(row));
  }
  return {{"budgets", r.budgets},
          {"evaluated_samples", r.evaluated},
          {"skipped_empty", r.skipped_empty},
          {"rows", rows},
          {"overall", overall}};
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  ArchConfig arch{};
  int max_interactions = 5;
  int batch_size = 16;
  double learning_rate = 1e-4;
  int epochs = 20;
  std::uint64_t seed = 4242;
  OracleMode oracle_mode = OracleMode::sample;
  double exponent_cap = 60.0;
  double click_sigma = kClickSigma;
  int checkpoint_every = 1;
  std::size_t validation_limit = 64;  // held-out binary samples scored per epoch
  std::filesystem::path checkpoint_path;  // empty: no checkpoints
  std::filesystem::path log_path;         // empty: no log file

  void validate() const {
    arch.validate();
    if (max_interactions < 1) throw std::invalid_argument("TrainConfig: max_interactions must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be >= 0");
    if (checkpoint_every < 1) throw std::invalid_argument("TrainConfig: checkpoint_every must be >= 1");
  }

  RolloutConfig rollout_config() const {
    return RolloutConfig{OracleConfig{oracle_mode, seed, exponent_cap}, click_sigma};
  }
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double loss = 0.0;
  double dice_at_1 = 0.0;
  double dice_at_k = 0.0;
  double wall_ms = 0.0;
};

inline nlohmann::json to_json(const EpochRecord& r, int max_interactions) {
  return {{"epoch", r.epoch},        {"loss", r.loss},       {"dice@1", r.dice_at_1},
          {"dice@K", r.dice_at_k},   {"K", max_interactions}, {"wall_ms", r.wall_ms}};
}

// Order of training samples in an epoch; a function of (seed, epoch) only.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(epoch), 0xE90C7ull}));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

// Rolled-out training tuples of one batch; reproducible from (seed, epoch, batch).
inline std::vector<TrainingExample> prepare_batch(const TrainConfig& cfg, const UNet<float>& net,
                                                  std::span<const BinarySample> train_set,
                                                  std::span<const std::size_t> indices, int epoch, int batch) {
  std::vector<BinarySample> samples;
  samples.reserve(indices.size());
  for (auto i : indices) samples.push_back(train_set[i]);
  Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(batch)}));
  auto items = rollout(std::span<const BinarySample>(samples), NetworkPredictor{&net}, cfg.max_interactions,
                       cfg.rollout_config(), rng);
  std::vector<TrainingExample> out;
  out.reserve(items.size());
  for (auto& it : items) out.push_back(TrainingExample{std::move(it.input), std::move(it.gt)});
  return out;
}

struct TrainResult {
  ModelState state;
  std::vector<EpochRecord> log;
};

using EpochCallback = std::function<void(const EpochRecord&, const ModelState&)>;

// Iterated-interaction training: per batch a prediction-only rollout, then a
// single Adam step on the final tuples. Resumes from `state` when it already
// has completed epochs.
inline TrainResult train(const TrainConfig& cfg, std::span<const BinarySample> train_set,
                         std::span<const BinarySample> val_set, std::optional<ModelState> resume = std::nullopt,
                         const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_set.empty()) throw DataError("train: empty training set");
  ModelState state = resume ? std::move(*resume) : ModelState::create(cfg.arch, cfg.seed);
  if (!(state.net.arch() == cfg.arch)) {
    throw ArchMismatch("train: resumed state architecture differs from the configured one");
  }
  const AdamConfig adam{cfg.learning_rate};
  const auto val = val_set.first(std::min(val_set.size(), cfg.validation_limit));
  EvalConfig eval_cfg{{1, cfg.max_interactions}, OracleConfig{cfg.oracle_mode, cfg.seed, cfg.exponent_cap},
                      cfg.click_sigma, 1};
  if (cfg.max_interactions == 1) eval_cfg.budgets = {1};

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    if (cfg.log_path.has_parent_path()) std::filesystem::create_directories(cfg.log_path.parent_path());
    log.open(cfg.log_path, std::ios::app);
    if (!log) throw DataError("cannot open training log " + cfg.log_path.string());
  }

  TrainResult result{ModelState{UNet<float>(cfg.arch), {}, {}}, {}};
  const auto batches = (train_set.size() + cfg.batch_size - 1) / static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = state.epochs_completed; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = epoch_order(train_set.size(), cfg.seed, epoch);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const auto first = b * static_cast<std::size_t>(cfg.batch_size);
      const auto count = std::min<std::size_t>(cfg.batch_size, order.size() - first);
      const auto batch = prepare_batch(cfg, state.net, train_set, std::span(order).subspan(first, count), epoch,
                                       static_cast<int>(b));
      loss_sum += train_step(state, batch, adam);
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.loss = loss_sum / double(batches);
    if (!std::isfinite(rec.loss)) throw NumericError("train: non-finite epoch loss");
    if (!val.empty()) {
      const auto ev = evaluate(NetworkPredictor{&state.net}, val, eval_cfg);
      rec.dice_at_1 = mean_dice(ev, 1);
      rec.dice_at_k = mean_dice(ev, cfg.max_interactions);
    }
    state.epochs_completed = epoch + 1;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(rec);
    if (log) {
      log << to_json(rec, cfg.max_interactions).dump() << '\n';
      log.flush();
    }
    if (!cfg.checkpoint_path.empty() && ((epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs)) {
      save_checkpoint(state, cfg.checkpoint_path);
    }
    if (on_epoch) on_epoch(rec, state);
  }
  result.state = std::move(state);
  return result;
}

}  // namespace clickseg
