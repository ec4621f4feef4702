#include "mailtls/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace mailtls::net {

namespace {

std::string errno_text(const char* what, int err) { return std::string(what) + ": " + std::strerror(err); }

void set_nonblocking(int fd) {
  int flags = ::fcntl(fd, F_GETFL, 0);
  if (flags < 0 || ::fcntl(fd, F_SETFL, flags | O_NONBLOCK) < 0)
    throw NetError(NetErrorKind::Other, errno_text("fcntl", errno));
}

sockaddr_in make_addr(const std::string& ip, std::uint16_t port) {
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(port);
  if (::inet_pton(AF_INET, ip.c_str(), &sa.sin_addr) != 1)
    throw NetError(NetErrorKind::Other, "invalid IPv4 address: " + ip);
  return sa;
}

// Waits for `events`; returns false on timeout.
bool wait_for(int fd, short events, Deadline deadline) {
  for (;;) {
    auto left = std::chrono::duration_cast<milliseconds>(deadline - Clock::now()).count();
    if (left <= 0) left = 0;
    pollfd p{fd, events, 0};
    int rc = ::poll(&p, 1, static_cast<int>(left));
    if (rc > 0) return true;
    if (rc == 0) return false;
    if (errno != EINTR) throw NetError(NetErrorKind::Other, errno_text("poll", errno));
  }
}

NetErrorKind classify_connect_errno(int err) {
  switch (err) {
    case ECONNREFUSED: return NetErrorKind::Refused;
    case ENETUNREACH:
    case EHOSTUNREACH:
    case EADDRNOTAVAIL: return NetErrorKind::Unreachable;
    case ETIMEDOUT: return NetErrorKind::Timeout;
    case ECONNRESET: return NetErrorKind::Reset;
    default: return NetErrorKind::Other;
  }
}

}  // namespace

std::string_view to_string(NetErrorKind k) {
  switch (k) {
    case NetErrorKind::Timeout: return "timeout";
    case NetErrorKind::Refused: return "refused";
    case NetErrorKind::Unreachable: return "unreachable";
    case NetErrorKind::Reset: return "reset";
    case NetErrorKind::Closed: return "closed";
    case NetErrorKind::Other: return "other";
  }
  return "other";
}

Socket& Socket::operator=(Socket&& o) noexcept {
  if (this != &o) {
    close();
    fd_ = o.release();
  }
  return *this;
}

void Socket::close() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

Bytes Socket::read_some(std::size_t cap, Deadline deadline) {
  Bytes buf(cap);
  for (;;) {
    ssize_t n = ::recv(fd_, buf.data(), cap, 0);
    if (n >= 0) {
      buf.resize(static_cast<std::size_t>(n));
      return buf;
    }
    if (errno == EINTR) continue;
    if (errno == EAGAIN || errno == EWOULDBLOCK) {
      if (!wait_for(fd_, POLLIN, deadline)) throw NetError(NetErrorKind::Timeout, "read timeout");
      continue;
    }
    if (errno == ECONNRESET) throw NetError(NetErrorKind::Reset, "connection reset");
    throw NetError(NetErrorKind::Other, errno_text("recv", errno));
  }
}

void Socket::write_all(ByteView data, Deadline deadline) {
  std::size_t off = 0;
  while (off < data.size()) {
    ssize_t n = ::send(fd_, data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n >= 0) {
      off += static_cast<std::size_t>(n);
      continue;
    }
    if (errno == EINTR) continue;
    if (errno == EAGAIN || errno == EWOULDBLOCK) {
      if (!wait_for(fd_, POLLOUT, deadline)) throw NetError(NetErrorKind::Timeout, "write timeout");
      continue;
    }
    if (errno == ECONNRESET || errno == EPIPE) throw NetError(NetErrorKind::Reset, "connection reset");
    throw NetError(NetErrorKind::Other, errno_text("send", errno));
  }
}

Socket connect_tcp(const std::string& ipv4, std::uint16_t port, milliseconds timeout) {
  auto sa = make_addr(ipv4, port);
  Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_NONBLOCK | SOCK_CLOEXEC, 0));
  if (!s.valid()) throw NetError(NetErrorKind::Other, errno_text("socket", errno));
  int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  auto deadline = deadline_after(timeout);
  if (::connect(s.fd(), reinterpret_cast<sockaddr*>(&sa), sizeof sa) == 0) return s;
  if (errno != EINPROGRESS) throw NetError(classify_connect_errno(errno), errno_text("connect", errno));
  if (!wait_for(s.fd(), POLLOUT, deadline)) throw NetError(NetErrorKind::Timeout, "connect timeout");
  int err = 0;
  socklen_t len = sizeof err;
  ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
  if (err != 0) throw NetError(classify_connect_errno(err), errno_text("connect", err));
  return s;
}

Socket listen_tcp(const std::string& ipv4, std::uint16_t port, int backlog) {
  auto sa = make_addr(ipv4, port);
  Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!s.valid()) throw NetError(NetErrorKind::Other, errno_text("socket", errno));
  int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(s.fd(), reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0)
    throw NetError(NetErrorKind::Other, errno_text("bind", errno));
  if (::listen(s.fd(), backlog) != 0) throw NetError(NetErrorKind::Other, errno_text("listen", errno));
  set_nonblocking(s.fd());
  return s;
}

std::uint16_t local_port(const Socket& s) {
  sockaddr_in sa{};
  socklen_t len = sizeof sa;
  if (::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&sa), &len) != 0)
    throw NetError(NetErrorKind::Other, errno_text("getsockname", errno));
  return ntohs(sa.sin_port);
}

bool is_valid_ipv4(std::string_view s) {
  in_addr a{};
  return ::inet_pton(AF_INET, std::string(s).c_str(), &a) == 1;
}

}  // namespace mailtls::net
