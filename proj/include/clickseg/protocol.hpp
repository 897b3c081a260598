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

// Wire protocol of the interactive service, independent of any socket code.
//
// Client messages are JSON objects with a "type" field:
//   begin {image_id}   click {polarity, x, y}   move {click_id, x, y}
//   delete {click_id}  undo  reset
// Any message may carry an integer "seq" that is echoed back.
//
// Server messages:
//   mask  {session_id, rle, width, height, latency_ms, click_ids, acks, seqs}
//   error {code, message, seq?}   code is bad_request, not_found, busy or internal
//
// Each client message is acknowledged exactly once: either by an error or by
// being counted in the "acks" of one mask. Consecutive valid events received
// while a prediction is running are coalesced into a single mask.

#include <cstdlib>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "clickseg/data.hpp"
#include "clickseg/dataset.hpp"
#include "clickseg/engine.hpp"
#include "clickseg/png.hpp"
#include "clickseg/rle.hpp"

namespace clickseg {

enum class ErrorCode { bad_request, not_found, busy, internal };

inline std::string_view to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::bad_request: return "bad_request";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::busy: return "busy";
    case ErrorCode::internal: return "internal";
  }
  return "internal";
}

class ServiceError : public std::runtime_error {
 public:
  ServiceError(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct LoadedImage {
  std::string id;
  Sample sample;      // raw intensities, as stored
  Grid2D normalized;  // what the model sees
};

// Read-only view of a dataset directory, loading slices on first use.
class ImageStore {
 public:
  explicit ImageStore(std::filesystem::path root) : root_(std::move(root)) {
    const auto manifest = read_manifest(root_);
    for (const auto& ref : manifest.all_slices()) refs_.emplace(ref.id(), ref);
  }

  explicit ImageStore(std::vector<Sample> samples) {
    for (auto& s : samples) {
      SliceRef ref{s.case_id, s.slice_index};
      refs_.emplace(ref.id(), ref);
      auto img = std::make_shared<LoadedImage>();
      img->id = ref.id();
      img->normalized = normalize_intensities(s.image);
      img->sample = std::move(s);
      cache_.emplace(ref.id(), std::move(img));
    }
  }

  const std::filesystem::path& root() const noexcept { return root_; }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& [id, ref] : refs_) out.push_back(id);
    return out;
  }

  bool contains(const std::string& id) const { return refs_.count(id) != 0; }

  std::shared_ptr<const LoadedImage> get(const std::string& id) const {
    const auto it = refs_.find(id);
    if (it == refs_.end()) throw ServiceError(ErrorCode::not_found, "unknown image_id '" + id + "'");
    std::lock_guard lock(mu_);
    if (auto c = cache_.find(id); c != cache_.end()) return c->second;
    auto img = std::make_shared<LoadedImage>();
    img->id = id;
    img->sample = read_sample(sample_stem(root_, it->second));
    img->normalized = normalize_intensities(img->sample.image);
    cache_.emplace(id, img);
    return img;
  }

  nlohmann::json listing() const {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& [id, ref] : refs_) {
      out.push_back({{"id", id}, {"case_id", ref.case_id}, {"slice_index", ref.slice_index}});
    }
    return out;
  }

 private:
  std::filesystem::path root_;
  std::map<std::string, SliceRef> refs_;
  mutable std::mutex mu_;
  mutable std::map<std::string, std::shared_ptr<const LoadedImage>> cache_;
};

// A session plus the lock that confines it to one executor at a time.
struct SessionSlot {
  SessionSlot(std::string id, std::shared_ptr<const LoadedImage> img, std::shared_ptr<const ModelHost> host,
              SessionConfig cfg)
      : image(std::move(img)), session(std::move(id), image->normalized, std::move(host), cfg) {}

  std::shared_ptr<const LoadedImage> image;
  std::mutex mu;
  Session session;
};

// Tracks live sessions by id. A session lives while its connection holds it.
class SessionRegistry {
 public:
  explicit SessionRegistry(std::size_t max_sessions) : max_sessions_(max_sessions) {}

  std::shared_ptr<SessionSlot> create(std::shared_ptr<const LoadedImage> image, std::shared_ptr<const ModelHost> host,
                                      const SessionConfig& cfg) {
    std::lock_guard lock(mu_);
    purge();
    if (live_.size() >= max_sessions_) {
      throw ServiceError(ErrorCode::busy, "session limit reached (" + std::to_string(max_sessions_) + ")");
    }
    const std::string id = "s" + std::to_string(++counter_);
    auto slot = std::make_shared<SessionSlot>(id, std::move(image), std::move(host), cfg);
    live_.emplace(id, slot);
    return slot;
  }

  std::shared_ptr<SessionSlot> find(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = live_.find(id);
    if (it == live_.end()) return nullptr;
    return it->second.lock();
  }

  std::size_t active() const {
    std::lock_guard lock(mu_);
    std::size_t n = 0;
    for (const auto& [id, w] : live_) n += w.expired() ? 0 : 1;
    return n;
  }

  std::size_t max_sessions() const noexcept { return max_sessions_; }

 private:
  void purge() {
    std::erase_if(live_, [](const auto& kv) { return kv.second.expired(); });
  }

  std::size_t max_sessions_;
  mutable std::mutex mu_;
  std::map<std::string, std::weak_ptr<SessionSlot>> live_;
  std::uint64_t counter_ = 0;
};

struct ServiceContext {
  ServiceContext(std::shared_ptr<const ImageStore> images_, std::shared_ptr<ModelHost> host_, std::size_t max_sessions,
                 std::filesystem::path export_root_ = {}, SessionConfig session_cfg_ = {})
      : images(std::move(images_)),
        host(std::move(host_)),
        registry(max_sessions),
        export_root(std::move(export_root_)),
        session_cfg(session_cfg_) {}

  std::shared_ptr<const ImageStore> images;
  std::shared_ptr<ModelHost> host;
  SessionRegistry registry;
  std::filesystem::path export_root;
  SessionConfig session_cfg;
};

inline std::string error_message(ErrorCode code, const std::string& message, const std::optional<std::int64_t>& seq) {
  nlohmann::json j = {{"type", "error"}, {"code", std::string(to_string(code))}, {"message", message}};
  if (seq) j["seq"] = *seq;
  return j.dump();
}

inline std::string mask_message(const Session& s, std::size_t acks, const std::vector<std::int64_t>& seqs) {
  std::vector<std::uint64_t> ids;
  for (const auto& c : s.clicks()) ids.push_back(c.id.value);
  return nlohmann::json{{"type", "mask"},
                        {"session_id", s.id()},
                        {"rle", rle_encode(s.latest_mask())},
                        {"width", s.image().width()},
                        {"height", s.image().height()},
                        {"latency_ms", s.last_latency_ms()},
                        {"click_ids", ids},
                        {"acks", acks},
                        {"seqs", seqs}}
      .dump();
}

// Parsed client message.
struct ClientMessage {
  std::string type;
  std::optional<std::int64_t> seq;
  std::optional<SessionEvent> event;  // unset for begin
  std::string image_id;
};

inline ClientMessage parse_client_message(std::string_view text) {
  const auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ServiceError(ErrorCode::bad_request, "message is not a JSON object");
  ClientMessage m;
  if (auto it = j.find("seq"); it != j.end()) {
    if (!it->is_number_integer()) throw ServiceError(ErrorCode::bad_request, "seq must be an integer");
    m.seq = it->get<std::int64_t>();
  }
  const auto type_it = j.find("type");
  if (type_it == j.end() || !type_it->is_string()) throw ServiceError(ErrorCode::bad_request, "missing type");
  m.type = type_it->get<std::string>();
  auto int_field = [&](const char* key) {
    const auto it = j.find(key);
    if (it == j.end() || !it->is_number_integer()) {
      throw ServiceError(ErrorCode::bad_request, m.type + ": field '" + key + "' must be an integer");
    }
    return it->get<std::int64_t>();
  };
  auto coord = [&](const char* key) {
    const auto v = int_field(key);
    if (v < INT32_MIN || v > INT32_MAX) throw ServiceError(ErrorCode::bad_request, m.type + ": coordinate out of range");
    return static_cast<int>(v);
  };
  auto click_id = [&]() {
    const auto v = int_field("click_id");
    if (v < 0) throw ServiceError(ErrorCode::bad_request, m.type + ": click_id must be non-negative");
    return ClickId{static_cast<std::uint64_t>(v)};
  };
  if (m.type == "begin") {
    const auto it = j.find("image_id");
    if (it == j.end() || !it->is_string()) throw ServiceError(ErrorCode::bad_request, "begin: image_id must be a string");
    m.image_id = it->get<std::string>();
  } else if (m.type == "click") {
    const auto it = j.find("polarity");
    if (it == j.end() || !it->is_string()) throw ServiceError(ErrorCode::bad_request, "click: polarity must be a string");
    const auto p = it->get<std::string>();
    if (p != "foreground" && p != "background") {
      throw ServiceError(ErrorCode::bad_request, "click: polarity must be foreground or background");
    }
    m.event = AddEvent{p == "foreground" ? Polarity::foreground : Polarity::background, coord("x"), coord("y")};
  } else if (m.type == "move") {
    m.event = MoveEvent{click_id(), coord("x"), coord("y")};
  } else if (m.type == "delete") {
    m.event = DeleteEvent{click_id()};
  } else if (m.type == "undo") {
    m.event = UndoEvent{};
  } else if (m.type == "reset") {
    m.event = ResetEvent{};
  } else {
    throw ServiceError(ErrorCode::bad_request, "unknown message type '" + m.type + "'");
  }
  return m;
}

// Per-connection protocol state. Not thread-safe; one connection drives it.
class ProtocolHandler {
 public:
  explicit ProtocolHandler(std::shared_ptr<ServiceContext> ctx) : ctx_(std::move(ctx)) {}

  const std::shared_ptr<SessionSlot>& slot() const noexcept { return slot_; }

  // Handles messages queued since the previous call, returning replies in order.
  std::vector<std::string> handle(std::span<const std::string> messages) {
    std::vector<std::string> out;
    std::size_t pending = 0;
    std::vector<std::int64_t> seqs;
    auto flush = [&] {
      if (pending == 0) return;
      try {
        std::lock_guard lock(slot_->mu);
        slot_->session.refresh();
        out.push_back(mask_message(slot_->session, pending, seqs));
      } catch (const std::exception& e) {
        out.push_back(error_message(ErrorCode::internal, std::string("prediction failed: ") + e.what(),
                                    seqs.empty() ? std::nullopt : std::optional(seqs.back())));
      }
      pending = 0;
      seqs.clear();
    };
    for (const auto& text : messages) {
      std::optional<std::int64_t> seq;
      try {
        ClientMessage m = parse_client_message(text);
        seq = m.seq;
        if (!m.event) {
          flush();
          begin(m.image_id);
          std::lock_guard lock(slot_->mu);
          out.push_back(mask_message(slot_->session, 1, seq ? std::vector{*seq} : std::vector<std::int64_t>{}));
          continue;
        }
        if (!slot_) throw ServiceError(ErrorCode::bad_request, m.type + ": no active session (send begin first)");
        try {
          std::lock_guard lock(slot_->mu);
          slot_->session.stage(*m.event);
        } catch (const SessionError& e) {
          throw ServiceError(ErrorCode::bad_request, e.what());
        }
        ++pending;
        if (seq) seqs.push_back(*seq);
      } catch (const ServiceError& e) {
        flush();
        out.push_back(error_message(e.code(), e.what(), seq));
      } catch (const std::exception& e) {
        flush();
        out.push_back(error_message(ErrorCode::internal, e.what(), seq));
      }
    }
    flush();
    return out;
  }

  std::vector<std::string> handle(const std::string& message) { return handle(std::span<const std::string>(&message, 1)); }

 private:
  void begin(const std::string& image_id) {
    auto image = ctx_->images->get(image_id);
    slot_.reset();  // the previous session ends with the new begin
    slot_ = ctx_->registry.create(std::move(image), ctx_->host, ctx_->session_cfg);
  }

  std::shared_ptr<ServiceContext> ctx_;
  std::shared_ptr<SessionSlot> slot_;
};

struct HttpReply {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

inline HttpReply json_reply(int status, const nlohmann::json& j) { return {status, "application/json", j.dump()}; }

inline HttpReply error_reply(int status, ErrorCode code, const std::string& message) {
  return {status, "application/json", error_message(code, message, std::nullopt)};
}

inline std::string url_decode(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '%' && i + 2 < s.size()) {
      const auto hex = std::string(s.substr(i + 1, 2));
      char* end = nullptr;
      const long v = std::strtol(hex.c_str(), &end, 16);
      if (end == hex.c_str() + 2) {
        out.push_back(static_cast<char>(v));
        i += 2;
        continue;
      }
    }
    out.push_back(s[i]);
  }
  return out;
}

// Writes the session's click list and mask as a dataset sample.
inline nlohmann::json export_session(const ServiceContext& ctx, SessionSlot& slot) {
  if (ctx.export_root.empty()) throw ServiceError(ErrorCode::internal, "export directory not configured");
  std::lock_guard lock(slot.mu);
  const Session& s = slot.session;
  const Sample& src = slot.image->sample;
  Sample out;
  out.image = src.image;
  out.case_id = src.case_id;
  out.slice_index = src.slice_index;
  out.label = LabelMap(s.image().width(), s.image().height(),
                       std::vector<std::uint8_t>(s.latest_mask().bits().begin(), s.latest_mask().bits().end()));
  out.structures = {StructureInfo{1, "annotation"}};
  const auto dir = ctx.export_root / s.id();
  const auto stem = dir / (src.case_id + "_" + std::to_string(src.slice_index));
  write_sample(out, stem);
  auto report = session_report(s);
  report["image_id"] = slot.image->id;
  const std::string text = report.dump(2);
  detail::write_file(dir / "clicks.json", text.data(), text.size());
  return {{"session_id", s.id()}, {"image_id", slot.image->id}, {"sample", stem.string()},
          {"clicks", (dir / "clicks.json").string()}};
}

// HTTP routes other than the WebSocket upgrade.
inline HttpReply route_http(ServiceContext& ctx, std::string_view method, std::string_view target) {
  if (const auto q = target.find('?'); q != std::string_view::npos) target = target.substr(0, q);
  try {
    if (target == "/healthz") {
      if (method != "GET") return error_reply(405, ErrorCode::bad_request, "use GET");
      return json_reply(200, {{"status", "ok"},
                              {"sessions", ctx.registry.active()},
                              {"max_sessions", ctx.registry.max_sessions()},
                              {"model_generation", ctx.host->generation()}});
    }
    if (target == "/images") {
      if (method != "GET") return error_reply(405, ErrorCode::bad_request, "use GET");
      return json_reply(200, ctx.images->listing());
    }
    constexpr std::string_view images_prefix = "/images/";
    if (target.starts_with(images_prefix)) {
      if (method != "GET") return error_reply(405, ErrorCode::bad_request, "use GET");
      const auto img = ctx.images->get(url_decode(target.substr(images_prefix.size())));
      const auto png = render_png(img->normalized);
      return {200, "image/png", std::string(png.begin(), png.end())};
    }
    constexpr std::string_view sessions_prefix = "/sessions/";
    constexpr std::string_view export_suffix = "/export";
    if (target.starts_with(sessions_prefix) && target.ends_with(export_suffix) &&
        target.size() > sessions_prefix.size() + export_suffix.size()) {
      if (method != "POST") return error_reply(405, ErrorCode::bad_request, "use POST");
      const auto id = url_decode(
          target.substr(sessions_prefix.size(), target.size() - sessions_prefix.size() - export_suffix.size()));
      auto slot = ctx.registry.find(id);
      if (!slot) return error_reply(404, ErrorCode::not_found, "unknown session '" + id + "'");
      return json_reply(200, export_session(ctx, *slot));
    }
    return error_reply(404, ErrorCode::not_found, "no route for " + std::string(target));
  } catch (const ServiceError& e) {
    const int status = e.code() == ErrorCode::not_found ? 404 : e.code() == ErrorCode::bad_request ? 400 : 500;
    return error_reply(status, e.code(), e.what());
  } catch (const std::exception& e) {
    return error_reply(500, ErrorCode::internal, e.what());
  }
}

}  // namespace clickseg
