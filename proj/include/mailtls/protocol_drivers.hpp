#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mailtls/bytes.hpp"
#include "mailtls/net.hpp"

namespace mailtls {

enum class AppProtocol : std::uint8_t { SMTP, Submission, POP3, IMAP, SMTPS, IMAPS, POP3S };
enum class TlsMode : std::uint8_t { StartTls, Implicit };

inline constexpr AppProtocol kAllProtocols[] = {AppProtocol::SMTP,  AppProtocol::Submission, AppProtocol::POP3,
                                                AppProtocol::IMAP,  AppProtocol::SMTPS,      AppProtocol::IMAPS,
                                                AppProtocol::POP3S};

std::string_view to_string(AppProtocol p);
std::string_view to_string(TlsMode m);
std::optional<AppProtocol> parse_app_protocol(std::string_view s);
std::optional<TlsMode> parse_tls_mode(std::string_view s);

TlsMode tls_mode_of(AppProtocol p);
/// Well-known port for the protocol: 25, 587, 110, 143, 465, 993, 995.
std::uint16_t standard_port(AppProtocol p);
std::optional<AppProtocol> protocol_for_port(std::uint16_t port);

/// Which plaintext dialect a protocol speaks (SMTPS speaks SMTP after TLS).
enum class Dialect { SMTP, POP3, IMAP };
Dialect dialect_of(AppProtocol p);

struct Endpoint {
  std::string ip;
  std::uint16_t port = 0;
  AppProtocol protocol = AppProtocol::SMTP;
  TlsMode mode = TlsMode::StartTls;

  /// Protocol and mode taken from the port map; throws ConfigError for ports
  /// outside it.
  static Endpoint for_port(std::string ip, std::uint16_t port);
  static Endpoint make(std::string ip, std::uint16_t port, AppProtocol protocol);

  friend bool operator==(const Endpoint&, const Endpoint&) = default;
};

struct PlaintextCapabilities {
  std::string banner_line;
  std::vector<std::string> capability_lines;
  bool advertises_starttls = false;
  bool advertises_auth_plain_pre_tls = false;
  /// SMTP only: EHLO was refused and HELO accepted.
  bool helo_fallback = false;

  friend bool operator==(const PlaintextCapabilities&, const PlaintextCapabilities&) = default;
};

enum class DriverFailure { BannerRejected, EhloRejected, Malformed, Closed };

std::string_view to_string(DriverFailure f);

/// Protocol-level refusal or garbage from the server. Timeouts and resets
/// surface as net::NetError instead.
class DriverError : public std::runtime_error {
 public:
  DriverError(DriverFailure kind, std::string detail)
      : std::runtime_error(std::string(to_string(kind)) + ": " + detail), kind_(kind), detail_(std::move(detail)) {}
  DriverFailure kind() const { return kind_; }
  const std::string& detail() const { return detail_; }

 private:
  DriverFailure kind_;
  std::string detail_;
};

inline constexpr std::size_t kMaxLine = 4096;
inline constexpr std::size_t kMaxResponse = 64 * 1024;

/// Line-oriented view of a byte stream.
class TextStream {
 public:
  virtual ~TextStream() = default;
  /// Next line without its terminator (CRLF or bare LF). Throws DriverError
  /// (Closed, Malformed for over-long lines) or net::NetError.
  virtual std::string read_line() = 0;
  virtual void write(std::string_view text) = 0;
};

class SocketTextStream : public TextStream {
 public:
  SocketTextStream(net::Socket& socket, net::milliseconds read_timeout, net::Deadline hard_deadline)
      : socket_(socket), read_timeout_(read_timeout), hard_deadline_(hard_deadline) {}

  std::string read_line() override;
  void write(std::string_view text) override;
  /// Bytes received past the last returned line.
  Bytes take_buffered();

 private:
  net::Deadline next_deadline() const;

  net::Socket& socket_;
  net::milliseconds read_timeout_;
  net::Deadline hard_deadline_;
  Bytes buffer_;
};

/// In-memory stream for tests: replays canned server lines and records what
/// the client wrote.
class ScriptedTextStream : public TextStream {
 public:
  explicit ScriptedTextStream(std::vector<std::string> server_lines) : lines_(server_lines.begin(), server_lines.end()) {}

  std::string read_line() override;
  void write(std::string_view text) override { written_.emplace_back(text); }
  const std::vector<std::string>& written() const { return written_; }

 private:
  std::deque<std::string> lines_;
  std::vector<std::string> written_;
};

struct DriverOptions {
  std::string ehlo_name = "mailtls.invalid";
};

/// Runs banner and capability exchange for a STARTTLS endpoint.
/// Throws DriverError (BannerRejected, EhloRejected, Malformed, Closed).
PlaintextCapabilities negotiate_plaintext(const Endpoint& endpoint, TextStream& stream, const DriverOptions& opts = {});

struct StartTlsResult {
  bool ok = false;
  std::string detail;  // server response line on rejection
};

/// Sends the protocol's STARTTLS command and checks the positive reply.
StartTlsResult upgrade_starttls(const Endpoint& endpoint, TextStream& stream);

enum class AuthExposure { NoStartTls, StartTlsButPreTlsAuth, Safe };
std::string_view to_string(AuthExposure e);

AuthExposure detect_plaintext_auth_exposure(const PlaintextCapabilities& caps);

}  // namespace mailtls
