#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "mailtls/bytes.hpp"

namespace mailtls::net {

using Clock = std::chrono::steady_clock;
using Deadline = Clock::time_point;
using std::chrono::milliseconds;

enum class NetErrorKind { Timeout, Refused, Unreachable, Reset, Closed, Other };

std::string_view to_string(NetErrorKind k);

class NetError : public std::runtime_error {
 public:
  NetError(NetErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  NetErrorKind kind() const { return kind_; }

 private:
  NetErrorKind kind_;
};

/// Owning wrapper around a stream socket file descriptor.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(o.release()) {}
  Socket& operator=(Socket&& o) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  int release() {
    int f = fd_;
    fd_ = -1;
    return f;
  }
  void close();

  /// Reads up to `cap` bytes. Returns an empty buffer on orderly EOF.
  /// Throws NetError (Timeout, Reset, Other).
  Bytes read_some(std::size_t cap, Deadline deadline);
  void write_all(ByteView data, Deadline deadline);

 private:
  int fd_ = -1;
};

/// Non-blocking connect to an IPv4 address with a timeout.
/// Throws NetError: Timeout, Refused, Unreachable or Other.
Socket connect_tcp(const std::string& ipv4, std::uint16_t port, milliseconds timeout);

/// Bound, listening, non-blocking IPv4 socket. Port 0 picks an ephemeral port.
Socket listen_tcp(const std::string& ipv4, std::uint16_t port, int backlog = 512);
std::uint16_t local_port(const Socket& s);

bool is_valid_ipv4(std::string_view s);

inline Deadline deadline_after(milliseconds d) { return Clock::now() + d; }

}  // namespace mailtls::net
