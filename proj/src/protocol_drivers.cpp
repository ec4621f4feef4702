#include "mailtls/protocol_drivers.hpp"

#include <algorithm>
#include <cctype>

#include "mailtls/errors.hpp"

namespace mailtls {

namespace {

std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> tokens(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    auto j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    if (j > i) out.push_back(upper(line.substr(i, j - i)));
    i = j;
  }
  return out;
}

bool has_token(const std::vector<std::string>& t, std::string_view tok) {
  return std::find(t.begin(), t.end(), tok) != t.end();
}

// Tracks the per-response byte cap.
struct ResponseReader {
  TextStream& s;
  std::size_t used = 0;

  std::string line() {
    auto l = s.read_line();
    used += l.size() + 2;
    if (used > kMaxResponse) throw DriverError(DriverFailure::Malformed, "response too large");
    return l;
  }
};

struct SmtpReply {
  int code = 0;
  std::vector<std::string> lines;  // text after the code and separator
  std::string first;               // first raw line
};

SmtpReply read_smtp_reply(TextStream& s) {
  ResponseReader r{s};
  SmtpReply reply;
  for (;;) {
    auto l = r.line();
    if (l.size() < 3 || !std::isdigit(static_cast<unsigned char>(l[0])) ||
        !std::isdigit(static_cast<unsigned char>(l[1])) || !std::isdigit(static_cast<unsigned char>(l[2])))
      throw DriverError(DriverFailure::Malformed, "bad SMTP reply: " + l);
    int code = (l[0] - '0') * 100 + (l[1] - '0') * 10 + (l[2] - '0');
    if (reply.lines.empty()) {
      reply.code = code;
      reply.first = l;
    } else if (code != reply.code) {
      throw DriverError(DriverFailure::Malformed, "inconsistent multiline reply");
    }
    char sep = l.size() > 3 ? l[3] : ' ';
    if (sep != '-' && sep != ' ') throw DriverError(DriverFailure::Malformed, "bad SMTP reply: " + l);
    reply.lines.push_back(l.size() > 4 ? l.substr(4) : std::string{});
    if (sep == ' ') return reply;
  }
}

bool smtp_auth_plain(const std::vector<std::string>& t) {
  if (t.empty()) return false;
  if (t[0] == "AUTH") return has_token(t, "PLAIN");
  if (t[0].starts_with("AUTH=")) {
    if (t[0] == "AUTH=PLAIN") return true;
    return has_token(t, "PLAIN");
  }
  return false;
}

PlaintextCapabilities negotiate_smtp(TextStream& s, const DriverOptions& opts) {
  PlaintextCapabilities caps;
  auto banner = read_smtp_reply(s);
  caps.banner_line = banner.first;
  if (banner.code != 220) throw DriverError(DriverFailure::BannerRejected, banner.first);
  s.write("EHLO " + opts.ehlo_name + "\r\n");
  auto ehlo = read_smtp_reply(s);
  if (ehlo.code != 250) {
    s.write("HELO " + opts.ehlo_name + "\r\n");
    auto helo = read_smtp_reply(s);
    if (helo.code != 250)
      throw DriverError(DriverFailure::EhloRejected, "EHLO: " + ehlo.first + "; HELO: " + helo.first);
    caps.helo_fallback = true;
    return caps;
  }
  for (std::size_t i = 1; i < ehlo.lines.size(); ++i) {
    caps.capability_lines.push_back(ehlo.lines[i]);
    auto t = tokens(ehlo.lines[i]);
    if (!t.empty() && t[0] == "STARTTLS") caps.advertises_starttls = true;
    if (smtp_auth_plain(t)) caps.advertises_auth_plain_pre_tls = true;
  }
  return caps;
}

PlaintextCapabilities negotiate_pop3(TextStream& s) {
  PlaintextCapabilities caps;
  ResponseReader r{s};
  caps.banner_line = r.line();
  if (!caps.banner_line.starts_with("+OK")) throw DriverError(DriverFailure::BannerRejected, caps.banner_line);
  s.write("CAPA\r\n");
  ResponseReader cr{s};
  auto status = cr.line();
  if (!status.starts_with("+OK")) return caps;  // CAPA unsupported: nothing advertised
  for (;;) {
    auto l = cr.line();
    if (l == ".") break;
    if (l.starts_with(".")) l.erase(0, 1);
    caps.capability_lines.push_back(l);
    auto t = tokens(l);
    if (t.empty()) continue;
    if (t[0] == "STLS") caps.advertises_starttls = true;
    if ((t[0] == "SASL" && has_token(t, "PLAIN")) || t[0] == "USER") caps.advertises_auth_plain_pre_tls = true;
  }
  return caps;
}

void reject_literal(const std::string& line) {
  if (!line.empty() && line.back() == '}') {
    auto open = line.rfind('{');
    if (open != std::string::npos) throw DriverError(DriverFailure::Malformed, "IMAP literal: " + line);
  }
}

PlaintextCapabilities negotiate_imap(TextStream& s) {
  PlaintextCapabilities caps;
  ResponseReader r{s};
  caps.banner_line = r.line();
  reject_literal(caps.banner_line);
  auto bt = tokens(caps.banner_line);
  if (bt.size() < 2 || bt[0] != "*") throw DriverError(DriverFailure::Malformed, "bad IMAP greeting: " + caps.banner_line);
  if (bt[1] != "OK" && bt[1] != "PREAUTH") throw DriverError(DriverFailure::BannerRejected, caps.banner_line);
  s.write("a1 CAPABILITY\r\n");
  ResponseReader cr{s};
  for (;;) {
    auto l = cr.line();
    reject_literal(l);
    auto t = tokens(l);
    if (t.size() >= 2 && t[0] == "A1") {
      if (t[1] != "OK") throw DriverError(DriverFailure::EhloRejected, l);
      return caps;
    }
    if (t.size() >= 2 && t[0] == "*" && t[1] == "CAPABILITY") {
      caps.capability_lines.push_back(l);
      for (std::size_t i = 2; i < t.size(); ++i) {
        if (t[i] == "STARTTLS") caps.advertises_starttls = true;
        if (t[i] == "AUTH=PLAIN") caps.advertises_auth_plain_pre_tls = true;
      }
    }
  }
}

}  // namespace

std::string_view to_string(AppProtocol p) {
  switch (p) {
    case AppProtocol::SMTP: return "SMTP";
    case AppProtocol::Submission: return "Submission";
    case AppProtocol::POP3: return "POP3";
    case AppProtocol::IMAP: return "IMAP";
    case AppProtocol::SMTPS: return "SMTPS";
    case AppProtocol::IMAPS: return "IMAPS";
    case AppProtocol::POP3S: return "POP3S";
  }
  return "?";
}

std::string_view to_string(TlsMode m) { return m == TlsMode::StartTls ? "STARTTLS" : "implicit"; }

std::optional<AppProtocol> parse_app_protocol(std::string_view s) {
  auto u = upper(s);
  for (auto p : kAllProtocols)
    if (upper(to_string(p)) == u) return p;
  return std::nullopt;
}

std::optional<TlsMode> parse_tls_mode(std::string_view s) {
  auto u = upper(s);
  if (u == "STARTTLS") return TlsMode::StartTls;
  if (u == "IMPLICIT") return TlsMode::Implicit;
  return std::nullopt;
}

TlsMode tls_mode_of(AppProtocol p) {
  switch (p) {
    case AppProtocol::SMTPS:
    case AppProtocol::IMAPS:
    case AppProtocol::POP3S: return TlsMode::Implicit;
    default: return TlsMode::StartTls;
  }
}

std::uint16_t standard_port(AppProtocol p) {
  switch (p) {
    case AppProtocol::SMTP: return 25;
    case AppProtocol::Submission: return 587;
    case AppProtocol::POP3: return 110;
    case AppProtocol::IMAP: return 143;
    case AppProtocol::SMTPS: return 465;
    case AppProtocol::IMAPS: return 993;
    case AppProtocol::POP3S: return 995;
  }
  return 0;
}

std::optional<AppProtocol> protocol_for_port(std::uint16_t port) {
  for (auto p : kAllProtocols)
    if (standard_port(p) == port) return p;
  return std::nullopt;
}

Dialect dialect_of(AppProtocol p) {
  switch (p) {
    case AppProtocol::POP3:
    case AppProtocol::POP3S: return Dialect::POP3;
    case AppProtocol::IMAP:
    case AppProtocol::IMAPS: return Dialect::IMAP;
    default: return Dialect::SMTP;
  }
}

Endpoint Endpoint::for_port(std::string ip, std::uint16_t port) {
  auto p = protocol_for_port(port);
  if (!p) throw ConfigError("no protocol known for port " + std::to_string(port) + "; name it explicitly");
  return make(std::move(ip), port, *p);
}

Endpoint Endpoint::make(std::string ip, std::uint16_t port, AppProtocol protocol) {
  return Endpoint{std::move(ip), port, protocol, tls_mode_of(protocol)};
}

std::string_view to_string(DriverFailure f) {
  switch (f) {
    case DriverFailure::BannerRejected: return "bannerRejected";
    case DriverFailure::EhloRejected: return "ehloRejected";
    case DriverFailure::Malformed: return "malformed";
    case DriverFailure::Closed: return "closed";
  }
  return "?";
}

std::string_view to_string(AuthExposure e) {
  switch (e) {
    case AuthExposure::NoStartTls: return "noStartTls";
    case AuthExposure::StartTlsButPreTlsAuth: return "startTlsButPreTlsAuth";
    case AuthExposure::Safe: return "safe";
  }
  return "?";
}

net::Deadline SocketTextStream::next_deadline() const {
  return std::min(net::Clock::now() + read_timeout_, hard_deadline_);
}

std::string SocketTextStream::read_line() {
  for (;;) {
    auto nl = std::find(buffer_.begin(), buffer_.end(), '\n');
    if (nl != buffer_.end()) {
      std::string line(buffer_.begin(), nl);
      buffer_.erase(buffer_.begin(), nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.size() > kMaxLine) throw DriverError(DriverFailure::Malformed, "line too long");
      return line;
    }
    if (buffer_.size() > kMaxLine) throw DriverError(DriverFailure::Malformed, "line too long");
    if (net::Clock::now() >= hard_deadline_) throw net::NetError(net::NetErrorKind::Timeout, "probe deadline");
    auto chunk = socket_.read_some(kMaxLine, next_deadline());
    if (chunk.empty()) throw DriverError(DriverFailure::Closed, "connection closed");
    buffer_.insert(buffer_.end(), chunk.begin(), chunk.end());
  }
}

void SocketTextStream::write(std::string_view text) {
  socket_.write_all(as_bytes(text), next_deadline());
}

Bytes SocketTextStream::take_buffered() { return std::exchange(buffer_, {}); }

std::string ScriptedTextStream::read_line() {
  if (lines_.empty()) throw DriverError(DriverFailure::Closed, "script exhausted");
  auto l = std::move(lines_.front());
  lines_.pop_front();
  if (l.size() > kMaxLine) throw DriverError(DriverFailure::Malformed, "line too long");
  return l;
}

PlaintextCapabilities negotiate_plaintext(const Endpoint& endpoint, TextStream& stream, const DriverOptions& opts) {
  if (endpoint.mode != TlsMode::StartTls) throw ContractViolation("plaintext negotiation on an implicit-TLS endpoint");
  switch (dialect_of(endpoint.protocol)) {
    case Dialect::SMTP: return negotiate_smtp(stream, opts);
    case Dialect::POP3: return negotiate_pop3(stream);
    case Dialect::IMAP: return negotiate_imap(stream);
  }
  return {};
}

StartTlsResult upgrade_starttls(const Endpoint& endpoint, TextStream& stream) {
  if (endpoint.mode != TlsMode::StartTls) throw ContractViolation("STARTTLS on an implicit-TLS endpoint");
  switch (dialect_of(endpoint.protocol)) {
    case Dialect::SMTP: {
      stream.write("STARTTLS\r\n");
      auto reply = read_smtp_reply(stream);
      return {reply.code == 220, reply.first};
    }
    case Dialect::POP3: {
      stream.write("STLS\r\n");
      auto l = stream.read_line();
      return {l.starts_with("+OK"), l};
    }
    case Dialect::IMAP: {
      stream.write("a2 STARTTLS\r\n");
      ResponseReader r{stream};
      for (;;) {
        auto l = r.line();
        auto t = tokens(l);
        if (!t.empty() && t[0] == "A2") return {t.size() >= 2 && t[1] == "OK", l};
      }
    }
  }
  return {};
}

AuthExposure detect_plaintext_auth_exposure(const PlaintextCapabilities& caps) {
  if (!caps.advertises_auth_plain_pre_tls) return AuthExposure::Safe;
  return caps.advertises_starttls ? AuthExposure::StartTlsButPreTlsAuth : AuthExposure::NoStartTls;
}

}  // namespace mailtls
