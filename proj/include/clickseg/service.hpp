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

#include <boost/asio/dispatch.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/post.hpp>
#include <boost/asio/strand.hpp>
#include <boost/asio/thread_pool.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "clickseg/protocol.hpp"

namespace clickseg {

namespace service_detail {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

inline constexpr std::size_t kMaxRequestBody = 1 << 20;
inline constexpr std::size_t kMaxMessage = 1 << 20;

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket&& socket, std::shared_ptr<ServiceContext> ctx, net::thread_pool& compute)
      : ws_(std::move(socket)), handler_(std::move(ctx)), compute_(compute) {}

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.read_message_max(kMaxMessage);
    ws_.text(true);
    ws_.async_accept(req, beast::bind_front_handler(&WsSession::on_accept, shared_from_this()));
  }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) return;
    do_read();
  }

  void do_read() { ws_.async_read(buffer_, beast::bind_front_handler(&WsSession::on_read, shared_from_this())); }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) return;  // closed or failed; the session ends with this object
    std::string text = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    bool start = false;
    {
      std::lock_guard lock(mu_);
      inbox_.push_back(std::move(text));
      if (!busy_) busy_ = start = true;
    }
    if (start) net::post(compute_, [self = shared_from_this()] { self->drain(); });
    do_read();
  }

  // Runs on the compute pool; at most one drain per connection at a time.
  void drain() {
    for (;;) {
      std::vector<std::string> batch;
      {
        std::lock_guard lock(mu_);
        if (inbox_.empty()) {
          busy_ = false;
          return;
        }
        batch.assign(std::make_move_iterator(inbox_.begin()), std::make_move_iterator(inbox_.end()));
        inbox_.clear();
      }
      auto replies = handler_.handle(batch);
      net::post(ws_.get_executor(), [self = shared_from_this(), replies = std::move(replies)]() mutable {
        self->enqueue(std::move(replies));
      });
    }
  }

  void enqueue(std::vector<std::string> replies) {
    const bool idle = outbox_.empty();
    for (auto& r : replies) outbox_.push_back(std::move(r));
    if (idle && !outbox_.empty()) do_write();
  }

  void do_write() {
    ws_.async_write(net::buffer(outbox_.front()), beast::bind_front_handler(&WsSession::on_write, shared_from_this()));
  }

  void on_write(beast::error_code ec, std::size_t) {
    if (ec) return;
    outbox_.pop_front();
    if (!outbox_.empty()) do_write();
  }

  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  ProtocolHandler handler_;
  net::thread_pool& compute_;
  std::mutex mu_;
  std::vector<std::string> inbox_;
  bool busy_ = false;
  std::deque<std::string> outbox_;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket&& socket, std::shared_ptr<ServiceContext> ctx, net::thread_pool& compute)
      : stream_(std::move(socket)), ctx_(std::move(ctx)), compute_(compute) {}

  void run() {
    net::dispatch(stream_.get_executor(), beast::bind_front_handler(&HttpSession::do_read, shared_from_this()));
  }

 private:
  void do_read() {
    parser_.emplace();
    parser_->body_limit(kMaxRequestBody);
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, *parser_, beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
      return;
    }
    auto req = parser_->release();
    if (websocket::is_upgrade(req)) {
      const auto target = std::string(req.target());
      if (target == "/session" || target.starts_with("/session?")) {
        stream_.expires_never();
        std::make_shared<WsSession>(stream_.release_socket(), ctx_, compute_)->run(std::move(req));
        return;
      }
    }
    const HttpReply reply = route_http(*ctx_, std::string(req.method_string()), std::string(req.target()));
    auto res = std::make_shared<http::response<http::string_body>>(static_cast<http::status>(reply.status),
                                                                   req.version());
    res->set(http::field::server, "clickseg");
    res->set(http::field::content_type, reply.content_type);
    res->set(http::field::access_control_allow_origin, "*");
    res->keep_alive(req.keep_alive());
    res->body() = reply.body;
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code wec, std::size_t) {
      if (wec) return;
      if (!res->keep_alive()) {
        beast::error_code ignored;
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        return;
      }
      self->do_read();
    });
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  std::optional<http::request_parser<http::string_body>> parser_;
  std::shared_ptr<ServiceContext> ctx_;
  net::thread_pool& compute_;
};

}  // namespace service_detail

// HTTP and WebSocket front end. Socket I/O runs on `io_threads`; predictions
// run on a separate pool of `compute_threads`.
class Server {
 public:
  Server(std::shared_ptr<ServiceContext> ctx, const std::string& address, unsigned short port, int io_threads = 1,
         int compute_threads = 1)
      : ctx_(std::move(ctx)),
        io_threads_(std::max(1, io_threads)),
        compute_(static_cast<std::size_t>(std::max(1, compute_threads))),
        acceptor_(service_detail::net::make_strand(ioc_)) {
    namespace net = service_detail::net;
    const service_detail::tcp::endpoint endpoint(net::ip::make_address(address), port);
    acceptor_.open(endpoint.protocol());
    acceptor_.set_option(net::socket_base::reuse_address(true));
    acceptor_.bind(endpoint);
    acceptor_.listen(net::socket_base::max_listen_connections);
  }

  ~Server() { stop(); }

  unsigned short port() const { return acceptor_.local_endpoint().port(); }

  // Starts accepting on background threads and returns.
  void start() {
    do_accept();
    for (int i = 0; i < io_threads_; ++i) threads_.emplace_back([this] { ioc_.run(); });
  }

  // Blocks until stop() is called from another thread or a signal handler.
  void run() {
    start();
    for (auto& t : threads_) t.join();
    threads_.clear();
  }

  void stop() {
    ioc_.stop();
    for (auto& t : threads_) {
      if (t.joinable()) t.join();
    }
    threads_.clear();
    compute_.join();
  }

  service_detail::net::io_context& io_context() noexcept { return ioc_; }

 private:
  void do_accept() {
    acceptor_.async_accept(service_detail::net::make_strand(ioc_),
                           [this](service_detail::beast::error_code ec, service_detail::tcp::socket socket) {
                             if (!ec) {
                               std::make_shared<service_detail::HttpSession>(std::move(socket), ctx_, compute_)->run();
                             }
                             if (acceptor_.is_open()) do_accept();
                           });
  }

  std::shared_ptr<ServiceContext> ctx_;
  int io_threads_;
  service_detail::net::io_context ioc_;
  service_detail::net::thread_pool compute_;
  service_detail::tcp::acceptor acceptor_;
  std::vector<std::thread> threads_;
};

}  // namespace clickseg
