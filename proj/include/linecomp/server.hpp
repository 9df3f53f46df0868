#pragma once

/**
 * Line-oriented completion service.
 *
 * One JSON object per line in, one per line out. Requests carry id, path,
 * extension, text, and caret (codepoint offset); responses echo the id and
 * carry suggestion (string or null), score, latency_ms, and cache_hit.
 * A line that is not valid JSON answers {"error":"parse","id":null}; a
 * structurally wrong request answers {"error":"request"} with the id when
 * one was present. The service never crashes on malformed input.
 *
 * Transports: stdio (one implicit session) and TCP with a thread per
 * connection, each connection owning its own session so caches never mix.
 * Requests on a connection are handled strictly sequentially.
 */

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstdint>
#include <istream>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "linecomp/common.hpp"
#include "linecomp/engine.hpp"

namespace linecomp::server {

namespace detail_srv {

inline std::string error_response(const char* kind, const nlohmann::json& id) {
  return nlohmann::json{{"error", kind}, {"id", id}}.dump();
}

}  // namespace detail_srv

/// Processes one request line and returns the response line (no newline).
inline std::string handle_line(engine::Session& session, const std::string& line) {
  const auto parsed = nlohmann::json::parse(line, nullptr, false);
  if (parsed.is_discarded() || !parsed.is_object())
    return detail_srv::error_response("parse", nullptr);

  const nlohmann::json id = parsed.contains("id") ? parsed.at("id") : nlohmann::json(nullptr);
  const auto str_field = [&](const char* name) -> const std::string* {
    const auto it = parsed.find(name);
    if (it == parsed.end() || !it->is_string()) return nullptr;
    return it->get_ptr<const std::string*>();
  };
  const std::string* path = str_field("path");
  const std::string* extension = str_field("extension");
  const std::string* text = str_field("text");
  const auto caret_it = parsed.find("caret");
  const bool caret_ok = caret_it != parsed.end() && caret_it->is_number_integer() &&
                        caret_it->get<std::int64_t>() >= 0;
  if (!path || !extension || !text || !caret_ok) return detail_srv::error_response("request", id);

  try {
    const engine::CompletionRequest request{
        *path, *extension, *text, static_cast<std::size_t>(caret_it->get<std::int64_t>())};
    const engine::CompletionResult result = session.complete(request);
    nlohmann::json response{{"id", id},
                            {"suggestion", nullptr},
                            {"score", nullptr},
                            {"latency_ms", result.latency_ms},
                            {"cache_hit", result.cache_hit}};
    if (result.suggestion) {
      response["suggestion"] = *result.suggestion;
      response["score"] = result.score;
    }
    return response.dump();
  } catch (const Error&) {
    return detail_srv::error_response("request", id);
  } catch (const std::exception&) {
    return detail_srv::error_response("internal", id);
  }
}

/// Serves newline-delimited requests from a stream pair until EOF. Empty
/// lines are skipped.
inline void serve_stdio(const engine::Engine& eng, std::istream& in, std::ostream& out) {
  engine::Session session(eng);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    out << handle_line(session, line) << '\n' << std::flush;
  }
}

/// TCP transport: one thread and one session per connection.
class TcpServer {
 public:
  /// Binds immediately; port 0 picks an ephemeral port, readable via
  /// port() afterwards. A busy port is a startup error.
  TcpServer(const engine::Engine& eng, const std::string& host, std::uint16_t port)
      : engine_(&eng) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw Error("server: socket creation failed");
    const int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
      ::close(listen_fd_);
      throw Error("server: bad listen address '" + host + "'");
    }
    if (::bind(listen_fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) {
      const int err = errno;
      ::close(listen_fd_);
      throw Error(err == EADDRINUSE ? "server: listen port is busy" : "server: bind failed");
    }
    if (::listen(listen_fd_, 16) != 0) {
      ::close(listen_fd_);
      throw Error("server: listen failed");
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }

  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  ~TcpServer() { stop(); }

  std::uint16_t port() const { return port_; }

  /// Starts the accept loop on a background thread.
  void start() {
    running_ = true;
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  /// Blocks serving connections on the calling thread.
  void run() {
    running_ = true;
    accept_loop();
  }

  void stop() {
    if (!running_.exchange(false)) {
      if (listen_fd_ >= 0) {
        ::close(listen_fd_);
        listen_fd_ = -1;
      }
      if (accept_thread_.joinable()) accept_thread_.join();
      return;
    }
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    listen_fd_ = -1;
    {
      const std::lock_guard<std::mutex> lock(mutex_);
      for (int fd : connection_fds_) ::shutdown(fd, SHUT_RDWR);
    }
    if (accept_thread_.joinable()) accept_thread_.join();
    for (auto& t : connection_threads_) {
      if (t.joinable()) t.join();
    }
    connection_threads_.clear();
  }

 private:
  void accept_loop() {
    while (running_) {
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) {
        if (!running_) break;
        if (errno == EINTR) continue;
        break;
      }
      {
        const std::lock_guard<std::mutex> lock(mutex_);
        connection_fds_.push_back(fd);
        connection_threads_.emplace_back([this, fd] { serve_connection(fd); });
      }
    }
  }

  void serve_connection(int fd) {
    engine::Session session(*engine_);
    std::string buffer;
    char chunk[4096];
    bool open = true;
    while (open && running_) {
      const ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
      if (n <= 0) break;
      buffer.append(chunk, static_cast<std::size_t>(n));
      std::size_t pos;
      while ((pos = buffer.find('\n')) != std::string::npos) {
        std::string line = buffer.substr(0, pos);
        buffer.erase(0, pos + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string response = handle_line(session, line) + "\n";
        if (!send_all(fd, response)) {
          open = false;
          break;
        }
      }
    }
    {
      // Deregister before closing so stop() never touches a reused fd.
      const std::lock_guard<std::mutex> lock(mutex_);
      std::erase(connection_fds_, fd);
    }
    ::close(fd);
  }

  static bool send_all(int fd, std::string_view data) {
    std::size_t sent = 0;
    while (sent < data.size()) {
      const ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
      if (n <= 0) return false;
      sent += static_cast<std::size_t>(n);
    }
    return true;
  }

  const engine::Engine* engine_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::thread accept_thread_;
  std::mutex mutex_;
  std::vector<int> connection_fds_;
  std::vector<std::thread> connection_threads_;
};

}  // namespace linecomp::server
