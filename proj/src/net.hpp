#pragma once

// Blocking line-oriented TCP helpers shared by the server and the client.

#include <string>

#include "latnas/errors.hpp"

namespace latnas::net {

class ConnectionLost : public Error {
 public:
  using Error::Error;
};

inline constexpr std::size_t kMaxLine = 1 << 20;

class LineSocket {
 public:
  LineSocket() = default;
  explicit LineSocket(int fd) : fd_(fd) {}
  LineSocket(const LineSocket&) = delete;
  LineSocket& operator=(const LineSocket&) = delete;
  LineSocket(LineSocket&& o) noexcept : fd_(o.fd_), buf_(std::move(o.buf_)) { o.fd_ = -1; }
  LineSocket& operator=(LineSocket&& o) noexcept;
  ~LineSocket() { close(); }

  int fd() const noexcept { return fd_; }
  bool open() const noexcept { return fd_ >= 0; }

  /// Next line without its '\n'. Throws ConnectionLost on EOF or error, and
  /// ProtocolError if a line exceeds kMaxLine.
  std::string read_line();
  void write_line(const std::string& line);
  void close();

 private:
  int fd_ = -1;
  std::string buf_;
};

/// Listening socket bound to host:port (port 0 picks a free port). Throws Error.
int listen_on(const std::string& host, int port, int* bound_port);

/// Throws ConnectionLost when the server is unreachable.
LineSocket connect_to(const std::string& host, int port);

/// Splits "host:port". Throws Error.
std::pair<std::string, int> split_address(const std::string& address);

}  // namespace latnas::net
