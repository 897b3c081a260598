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
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "clickseg/click.hpp"
#include "clickseg/grid.hpp"
#include "clickseg/model.hpp"
#include "clickseg/rle.hpp"

namespace clickseg {

// Holds the network used for interactive prediction. A prediction grabs a
// snapshot at its start, so installing a new network never affects a forward
// pass already running.
class ModelHost {
 public:
  explicit ModelHost(std::shared_ptr<const UNet<float>> net) : net_(std::move(net)) {
    if (!net_) throw std::invalid_argument("ModelHost: null network");
  }

  std::shared_ptr<const UNet<float>> snapshot() const {
    std::lock_guard lock(mu_);
    return net_;
  }

  void install(std::shared_ptr<const UNet<float>> net) {
    if (!net) throw std::invalid_argument("ModelHost: null network");
    std::lock_guard lock(mu_);
    net_ = std::move(net);
    ++generation_;
  }

  std::uint64_t generation() const {
    std::lock_guard lock(mu_);
    return generation_;
  }

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const UNet<float>> net_;
  std::uint64_t generation_ = 0;
};

struct AddEvent {
  Polarity polarity = Polarity::foreground;
  int x = 0;
  int y = 0;
};
struct MoveEvent {
  ClickId id;
  int x = 0;
  int y = 0;
};
struct DeleteEvent {
  ClickId id;
};
struct UndoEvent {};
struct ResetEvent {};

using SessionEvent = std::variant<AddEvent, MoveEvent, DeleteEvent, UndoEvent, ResetEvent>;

class SessionError : public std::invalid_argument {
 public:
  enum class Kind { unknown_click, out_of_bounds, no_foreground, empty_history };

  SessionError(Kind kind, const std::string& what) : std::invalid_argument(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

// Reflected index into [0, n) without repeating the edge sample.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

// Pads right and bottom by reflection so both sides are multiples of `multiple`.
inline Grid2D reflect_pad(const Grid2D& g, int multiple) {
  const int pw = (g.width() + multiple - 1) / multiple * multiple;
  const int ph = (g.height() + multiple - 1) / multiple * multiple;
  if (pw == g.width() && ph == g.height()) return g;
  Grid2D out(pw, ph, g.spacing());
  for (int y = 0; y < ph; ++y) {
    const int sy = reflect_index(y, g.height());
    for (int x = 0; x < pw; ++x) out(x, y) = g(reflect_index(x, g.width()), sy);
  }
  return out;
}

inline Grid2D crop(const Grid2D& g, int width, int height) {
  if (g.width() == width && g.height() == height) return g;
  Grid2D out(width, height, g.spacing());
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) out(x, y) = g(x, y);
  }
  return out;
}

struct SessionConfig {
  std::size_t history_limit = 64;
  double click_sigma = kClickSigma;
  float threshold = 0.5f;
};

// Live annotation state for one image. Not thread-safe; each session is
// driven by one executor at a time.
class Session {
 public:
  Session(std::string id, Grid2D image, std::shared_ptr<const ModelHost> host, SessionConfig cfg = {})
      : id_(std::move(id)),
        image_(std::move(image)),
        host_(std::move(host)),
        cfg_(cfg),
        mask_(image_.width(), image_.height()),
        probs_(image_.width(), image_.height(), image_.spacing()) {
    if (!host_) throw std::invalid_argument("Session: null model host");
    const int multiple = host_->snapshot()->arch().divisor();
    padded_ = reflect_pad(image_, multiple);
  }

  const std::string& id() const noexcept { return id_; }
  const Grid2D& image() const noexcept { return image_; }
  int padded_width() const noexcept { return padded_.width(); }
  int padded_height() const noexcept { return padded_.height(); }
  const std::vector<Click>& clicks() const noexcept { return clicks_; }
  const BinaryMask& latest_mask() const noexcept { return mask_; }
  const Grid2D& latest_probs() const noexcept { return probs_; }
  double last_latency_ms() const noexcept { return latency_ms_; }
  std::size_t history_depth() const noexcept { return history_.size(); }
  bool predicted() const noexcept { return predicted_; }
  bool stale() const noexcept { return stale_; }

  // Validates and applies the click-list change without predicting.
  void stage(const SessionEvent& event) {
    std::visit([this](const auto& e) { stage_one(e); }, event);
    stale_ = true;
  }

  // Runs one forward pass for the current click list. With no clicks the mask
  // is empty and no forward pass is made.
  const BinaryMask& refresh() {
    const auto t0 = std::chrono::steady_clock::now();
    if (clicks_.empty()) {
      mask_ = BinaryMask(image_.width(), image_.height());
      probs_ = Grid2D(image_.width(), image_.height(), image_.spacing());
    } else {
      const auto net = host_->snapshot();
      const InputStack input = make_input(padded_, clicks_, cfg_.click_sigma);
      probs_ = crop(predict(*net, input), image_.width(), image_.height());
      mask_ = threshold(probs_, cfg_.threshold);
    }
    latency_ms_ = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    predicted_ = true;
    stale_ = false;
    return mask_;
  }

  const BinaryMask& apply_event(const SessionEvent& event) {
    stage(event);
    return refresh();
  }

  // Applies several events with a single prediction at the end. Stops at the
  // first invalid event; events before it stay applied and are predicted.
  const BinaryMask& apply_events(std::span<const SessionEvent> events) {
    try {
      for (const auto& e : events) stage(e);
    } catch (...) {
      if (stale_) refresh();
      throw;
    }
    return refresh();
  }

 private:
  void check_bounds(int x, int y) const {
    if (!image_.contains(x, y)) {
      throw SessionError(SessionError::Kind::out_of_bounds, "click (" + std::to_string(x) + ", " + std::to_string(y) +
                                                                ") outside image " + std::to_string(image_.width()) +
                                                                "x" + std::to_string(image_.height()));
    }
  }

  std::vector<Click>::iterator find_click(ClickId id) {
    auto it = std::find_if(clicks_.begin(), clicks_.end(), [&](const Click& c) { return c.id == id; });
    if (it == clicks_.end()) {
      throw SessionError(SessionError::Kind::unknown_click, "unknown click id " + std::to_string(id.value));
    }
    return it;
  }

  static bool has_foreground(const std::vector<Click>& clicks) {
    return std::any_of(clicks.begin(), clicks.end(), [](const Click& c) { return c.polarity == Polarity::foreground; });
  }

  void push_history() {
    history_.push_back(clicks_);
    if (history_.size() > cfg_.history_limit) history_.pop_front();
  }

  void stage_one(const AddEvent& e) {
    check_bounds(e.x, e.y);
    if (e.polarity == Polarity::background && !has_foreground(clicks_)) {
      throw SessionError(SessionError::Kind::no_foreground, "background click requires a foreground click first");
    }
    push_history();
    clicks_.push_back(Click{ClickId{next_id_++}, e.polarity, e.x, e.y});
  }

  void stage_one(const MoveEvent& e) {
    auto it = find_click(e.id);
    check_bounds(e.x, e.y);
    push_history();
    // Delete followed by an add of the same polarity at the end of the list.
    Click moved = *it;
    moved.x = e.x;
    moved.y = e.y;
    clicks_.erase(it);
    clicks_.push_back(moved);
  }

  void stage_one(const DeleteEvent& e) {
    auto it = find_click(e.id);
    std::vector<Click> next = clicks_;
    next.erase(next.begin() + (it - clicks_.begin()));
    if (!next.empty() && !has_foreground(next)) {
      throw SessionError(SessionError::Kind::no_foreground, "deleting the last foreground click leaves background clicks only");
    }
    push_history();
    clicks_ = std::move(next);
  }

  void stage_one(const UndoEvent&) {
    if (history_.empty()) throw SessionError(SessionError::Kind::empty_history, "nothing to undo");
    clicks_ = std::move(history_.back());
    history_.pop_back();
  }

  void stage_one(const ResetEvent&) {
    push_history();
    clicks_.clear();
  }

  std::string id_;
  Grid2D image_;
  Grid2D padded_;
  std::shared_ptr<const ModelHost> host_;
  SessionConfig cfg_;
  std::vector<Click> clicks_;
  std::deque<std::vector<Click>> history_;
  std::uint64_t next_id_ = 1;
  BinaryMask mask_;
  Grid2D probs_;
  double latency_ms_ = 0.0;
  bool predicted_ = false;
  bool stale_ = false;
};

inline nlohmann::json to_json(const Click& c) {
  return {{"id", c.id.value}, {"polarity", std::string(to_string(c.polarity))}, {"x", c.x}, {"y", c.y}};
}

// Consistent snapshot of a session for clients and exports.
inline nlohmann::json session_report(const Session& s) {
  nlohmann::json clicks = nlohmann::json::array();
  for (const auto& c : s.clicks()) clicks.push_back(to_json(c));
  const auto probs = s.latest_probs().values();
  double lo = 0.0, hi = 0.0, sum = 0.0;
  if (!probs.empty()) {
    const auto [mn, mx] = std::minmax_element(probs.begin(), probs.end());
    lo = *mn;
    hi = *mx;
    for (float p : probs) sum += p;
  }
  return {
      {"session_id", s.id()},
      {"width", s.image().width()},
      {"height", s.image().height()},
      {"clicks", clicks},
      {"rle", rle_encode(s.latest_mask())},
      {"mask_pixels", s.latest_mask().count()},
      {"probs", {{"min", lo}, {"max", hi}, {"mean", probs.empty() ? 0.0 : sum / double(probs.size())}}},
      {"latency_ms", s.last_latency_ms()},
      {"history_depth", s.history_depth()},
  };
}

}  // namespace clickseg
