#pragma once

// Minimal RFC 6455 WebSocket server over POSIX sockets: text frames, ping/pong and close.
// One thread per connection; each connection gets its own handler instance.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <openssl/evp.h>
#include <openssl/sha.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace dexqp::ws {

inline std::string accept_key(const std::string & client_key)
{
  static constexpr const char * kGuid = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
  const std::string in = client_key + kGuid;
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char *>(in.data()), in.size(), digest);
  unsigned char out[4 * ((SHA_DIGEST_LENGTH + 2) / 3) + 1];
  const int len = EVP_EncodeBlock(out, digest, SHA_DIGEST_LENGTH);
  return std::string(reinterpret_cast<char *>(out), static_cast<std::size_t>(len));
}

enum class Opcode : std::uint8_t { Continuation = 0x0, Text = 0x1, Binary = 0x2, Close = 0x8, Ping = 0x9, Pong = 0xA };

/// Blocking frame I/O on a connected socket.
class Connection
{
public:
  explicit Connection(int fd) : fd_(fd) {}
  Connection(const Connection &) = delete;
  Connection & operator=(const Connection &) = delete;
  ~Connection()
  {
    if (fd_ >= 0) { ::close(fd_); }
  }

  int fd() const { return fd_; }

  bool read_exact(void * buf, std::size_t n)
  {
    auto * p = static_cast<char *>(buf);
    while (n > 0) {
      const ssize_t r = ::recv(fd_, p, n, 0);
      if (r <= 0) { return false; }
      p += r;
      n -= static_cast<std::size_t>(r);
    }
    return true;
  }

  bool write_all(const void * buf, std::size_t n)
  {
    const auto * p = static_cast<const char *>(buf);
    while (n > 0) {
      const ssize_t r = ::send(fd_, p, n, MSG_NOSIGNAL);
      if (r <= 0) { return false; }
      p += r;
      n -= static_cast<std::size_t>(r);
    }
    return true;
  }

  /// Reads the HTTP request head (through the blank line).
  std::optional<std::string> read_http_head(std::size_t limit = 16384)
  {
    std::string head;
    char c;
    while (head.size() < limit) {
      if (!read_exact(&c, 1)) { return std::nullopt; }
      head.push_back(c);
      if (head.size() >= 4 && head.compare(head.size() - 4, 4, "\r\n\r\n") == 0) { return head; }
    }
    return std::nullopt;
  }

  /// Sends one unfragmented frame; `mask` is required for client-to-server frames.
  bool send_frame(Opcode op, const std::string & payload, bool mask = false)
  {
    std::vector<unsigned char> out;
    out.push_back(static_cast<unsigned char>(0x80 | static_cast<unsigned>(op)));
    const std::uint64_t len = payload.size();
    const unsigned char mask_bit = mask ? 0x80 : 0x00;
    if (len < 126) {
      out.push_back(static_cast<unsigned char>(mask_bit | len));
    } else if (len <= 0xFFFF) {
      out.push_back(mask_bit | 126);
      out.push_back(static_cast<unsigned char>(len >> 8));
      out.push_back(static_cast<unsigned char>(len));
    } else {
      out.push_back(mask_bit | 127);
      for (int i = 7; i >= 0; --i) { out.push_back(static_cast<unsigned char>(len >> (8 * i))); }
    }
    unsigned char key[4] = {0x12, 0x34, 0x56, 0x78};
    if (mask) { out.insert(out.end(), key, key + 4); }
    const std::size_t start = out.size();
    out.insert(out.end(), payload.begin(), payload.end());
    if (mask) {
      for (std::size_t i = start; i < out.size(); ++i) { out[i] ^= key[(i - start) % 4]; }
    }
    std::lock_guard<std::mutex> lock(write_mutex_);
    return write_all(out.data(), out.size());
  }

  struct Message
  {
    Opcode op;
    std::string payload;
  };

  /// Next complete message (continuations joined). nullopt on EOF or protocol error.
  std::optional<Message> read_message(std::uint64_t max_size = 1 << 24)
  {
    std::optional<Opcode> first;
    std::string data;
    for (;;) {
      unsigned char hdr[2];
      if (!read_exact(hdr, 2)) { return std::nullopt; }
      const bool fin = hdr[0] & 0x80;
      const auto op = static_cast<Opcode>(hdr[0] & 0x0F);
      const bool masked = hdr[1] & 0x80;
      std::uint64_t len = hdr[1] & 0x7F;
      if (len == 126) {
        unsigned char ext[2];
        if (!read_exact(ext, 2)) { return std::nullopt; }
        len = (std::uint64_t{ext[0]} << 8) | ext[1];
      } else if (len == 127) {
        unsigned char ext[8];
        if (!read_exact(ext, 8)) { return std::nullopt; }
        len = 0;
        for (unsigned char b : ext) { len = (len << 8) | b; }
      }
      if (len > max_size) { return std::nullopt; }
      unsigned char key[4] = {0, 0, 0, 0};
      if (masked && !read_exact(key, 4)) { return std::nullopt; }
      std::string payload(len, '\0');
      if (len && !read_exact(payload.data(), len)) { return std::nullopt; }
      if (masked) {
        for (std::size_t i = 0; i < payload.size(); ++i) { payload[i] = static_cast<char>(payload[i] ^ key[i % 4]); }
      }
      // control frames may interleave with fragments
      if (op == Opcode::Ping || op == Opcode::Pong || op == Opcode::Close) { return Message{op, payload}; }
      if (op != Opcode::Continuation) {
        first = op;
        data.clear();
      } else if (!first) {
        return std::nullopt;
      }
      data += payload;
      if (fin) { return Message{*first, std::move(data)}; }
    }
  }

private:
  int fd_;
  std::mutex write_mutex_;
};

/// Per-connection message handler: returns replies for one incoming text message.
struct Handler
{
  virtual ~Handler() = default;
  virtual std::vector<std::string> on_open() = 0;
  virtual std::vector<std::string> on_text(const std::string & text) = 0;
};

using HandlerFactory = std::function<std::unique_ptr<Handler>()>;

inline std::string header_value(const std::string & head, const std::string & name)
{
  std::string lower_head = head;
  std::string lower_name = name;
  for (auto & c : lower_head) { c = static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }
  for (auto & c : lower_name) { c = static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }
  const auto pos = lower_head.find("\r\n" + lower_name + ":");
  if (pos == std::string::npos) { return {}; }
  auto start = pos + 2 + lower_name.size() + 1;
  const auto end = head.find("\r\n", start);
  while (start < end && (head[start] == ' ' || head[start] == '\t')) { ++start; }
  auto stop = end;
  while (stop > start && (head[stop - 1] == ' ' || head[stop - 1] == '\t')) { --stop; }
  return head.substr(start, stop - start);
}

class Server
{
public:
  explicit Server(HandlerFactory factory) : factory_(std::move(factory)) {}
  Server(const Server &) = delete;
  Server & operator=(const Server &) = delete;
  ~Server() { stop(); }

  /// Binds and listens; port 0 picks a free port. Returns the bound port.
  int listen(int port, const std::string & host = "127.0.0.1")
  {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) { throw std::runtime_error("socket() failed"); }
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) { throw std::runtime_error("bad host address " + host); }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr *>(&addr), sizeof(addr)) < 0) {
      const std::string err = std::strerror(errno);
      ::close(listen_fd_);
      listen_fd_ = -1;
      throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port) + ": " + err);
    }
    if (::listen(listen_fd_, 16) < 0) { throw std::runtime_error("listen() failed"); }
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr *>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    return port_;
  }

  /// Accepts connections until stop(); blocks the calling thread.
  void run()
  {
    while (!stopping_) {
      pollfd pfd{listen_fd_, POLLIN, 0};
      const int ready = ::poll(&pfd, 1, 100);
      if (ready <= 0) { continue; }
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) { continue; }
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      std::lock_guard<std::mutex> lock(threads_mutex_);
      workers_.emplace_back([this, fd] { serve_connection(fd); });
    }
  }

  void stop()
  {
    stopping_ = true;
    {
      std::lock_guard<std::mutex> lock(threads_mutex_);
      for (int fd : open_fds_) { ::shutdown(fd, SHUT_RDWR); }
    }
    std::vector<std::thread> workers;
    {
      std::lock_guard<std::mutex> lock(threads_mutex_);
      workers.swap(workers_);
    }
    for (auto & t : workers) {
      if (t.joinable()) { t.join(); }
    }
    if (listen_fd_ >= 0) {
      ::close(listen_fd_);
      listen_fd_ = -1;
    }
  }

  int port() const { return port_; }

private:
  void serve_connection(int fd)
  {
    {
      std::lock_guard<std::mutex> lock(threads_mutex_);
      open_fds_.push_back(fd);
    }
    {
      Connection conn(fd);
      if (handshake(conn)) { pump(conn); }
    }
    std::lock_guard<std::mutex> lock(threads_mutex_);
    open_fds_.erase(std::remove(open_fds_.begin(), open_fds_.end(), fd), open_fds_.end());
  }

  bool handshake(Connection & conn)
  {
    const auto head = conn.read_http_head();
    if (!head) { return false; }
    const std::string key = header_value(*head, "Sec-WebSocket-Key");
    if (key.empty()) {
      static const std::string bad = "HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\nConnection: close\r\n\r\n";
      conn.write_all(bad.data(), bad.size());
      return false;
    }
    const std::string resp = "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
                             "Sec-WebSocket-Accept: " +
                             accept_key(key) + "\r\n\r\n";
    return conn.write_all(resp.data(), resp.size());
  }

  void pump(Connection & conn)
  {
    auto handler = factory_();
    for (const auto & out : handler->on_open()) {
      if (!conn.send_frame(Opcode::Text, out)) { return; }
    }
    while (!stopping_) {
      auto msg = conn.read_message();
      if (!msg) { return; }
      switch (msg->op) {
        case Opcode::Text:
          for (const auto & out : handler->on_text(msg->payload)) {
            if (!conn.send_frame(Opcode::Text, out)) { return; }
          }
          break;
        case Opcode::Ping: conn.send_frame(Opcode::Pong, msg->payload); break;
        case Opcode::Close: conn.send_frame(Opcode::Close, msg->payload.substr(0, 2)); return;
        case Opcode::Binary:
          for (const auto & out : handler->on_text(msg->payload)) {
            if (!conn.send_frame(Opcode::Text, out)) { return; }
          }
          break;
        default: break;
      }
    }
  }

  HandlerFactory factory_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> stopping_{false};
  std::mutex threads_mutex_;
  std::vector<std::thread> workers_;
  std::vector<int> open_fds_;
};

/// Blocking client used by tests and scripted sessions.
class Client
{
public:
  /// Connects and completes the opening handshake.
  Client(const std::string & host, int port)
  {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) { throw std::runtime_error("socket() failed"); }
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    ::inet_pton(AF_INET, host.c_str(), &addr.sin_addr);
    if (::connect(fd, reinterpret_cast<sockaddr *>(&addr), sizeof(addr)) < 0) {
      ::close(fd);
      throw std::runtime_error("connect failed");
    }
    conn_ = std::make_unique<Connection>(fd);
    const std::string key = "dGhlIHNhbXBsZSBub25jZQ==";
    const std::string req = "GET / HTTP/1.1\r\nHost: " + host + "\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
                            "Sec-WebSocket-Key: " + key + "\r\nSec-WebSocket-Version: 13\r\n\r\n";
    conn_->write_all(req.data(), req.size());
    const auto head = conn_->read_http_head();
    if (!head || head->rfind("HTTP/1.1 101", 0) != 0 || header_value(*head, "Sec-WebSocket-Accept") != accept_key(key)) {
      throw std::runtime_error("websocket handshake failed");
    }
  }

  void send_text(const std::string & text) { conn_->send_frame(Opcode::Text, text, true); }

  /// Next text message, answering pings; nullopt on close.
  std::optional<std::string> receive()
  {
    for (;;) {
      auto msg = conn_->read_message();
      if (!msg || msg->op == Opcode::Close) { return std::nullopt; }
      if (msg->op == Opcode::Ping) {
        conn_->send_frame(Opcode::Pong, msg->payload, true);
        continue;
      }
      if (msg->op == Opcode::Text) { return msg->payload; }
    }
  }

  void close() { conn_->send_frame(Opcode::Close, std::string("\x03\xe8", 2), true); }

private:
  std::unique_ptr<Connection> conn_;
};

}  // namespace dexqp::ws
