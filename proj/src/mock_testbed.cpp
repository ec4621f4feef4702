#include "mailtls/mock_testbed.hpp"

#include <poll.h>
#include <sys/eventfd.h>
#include <sys/socket.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <unistd.h>

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <random>
#include <mutex>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

#include "mailtls/cert_analysis.hpp"
#include "mailtls/crypto_params.hpp"
#include "mailtls/net.hpp"
#include "mailtls/tls_wire.hpp"

namespace mailtls {

using nlohmann::json;

namespace {

constexpr std::size_t kMaxHello = 64 * 1024;

SuiteId resolve_suite(const json& j, const Registry& registry) {
  auto s = j.get<std::string>();
  const auto* info = registry.find_by_name(s);
  if (!info) throw ConfigError("unknown suite '" + s + "'");
  return info->id;
}

ProtocolVersion resolve_version(const std::string& s) {
  auto v = parse_version(s);
  if (!v) throw ConfigError("unknown version '" + s + "'");
  return *v;
}

MockPolicy policy_from_json(const json& j, const Registry& registry, const std::filesystem::path& base) {
  MockPolicy p;
  auto proto = j.value("protocol", std::string("SMTP"));
  auto ap = parse_app_protocol(proto);
  if (!ap) throw ConfigError("unknown protocol '" + proto + "'");
  p.protocol = *ap;
  if (auto it = j.find("accepted"); it != j.end()) {
    for (const auto& [ver, suites] : it->items()) {
      auto v = resolve_version(ver);
      for (const auto& s : suites) p.accepted.insert({v, resolve_suite(s, registry)});
    }
  }
  if (auto it = j.find("preferenceOrder"); it != j.end())
    for (const auto& s : *it) p.preference_order.push_back(resolve_suite(s, registry));
  if (auto it = j.find("certChainPem"); it != j.end()) {
    std::filesystem::path path = it->get<std::string>();
    if (path.is_relative()) path = base / path;
    p.cert_chain = read_pem_bundle(path);
    if (p.cert_chain.empty()) throw ConfigError("no certificates in " + path.string());
  }
  if (auto it = j.find("certChain"); it != j.end())
    for (const auto& b : *it) p.cert_chain.push_back(from_base64(b.get<std::string>()));
  if (auto it = j.find("dhPrime"); it != j.end()) {
    auto s = it->get<std::string>();
    if (s.starts_with("known:")) {
      const auto* k = find_known_prime(std::string_view(s).substr(6));
      if (!k) throw ConfigError("unknown known prime '" + s + "'");
      p.dh_prime = k->value;
    } else {
      p.dh_prime = from_hex(s);
    }
  }
  if (auto it = j.find("curve"); it != j.end()) {
    if (it->is_number()) {
      p.curve = it->get<std::uint16_t>();
    } else {
      auto id = tls::curve_id(it->get<std::string>());
      if (!id) throw ConfigError("unknown curve '" + it->get<std::string>() + "'");
      p.curve = *id;
    }
  }
  if (auto it = j.find("startTls"); it != j.end()) {
    if (it->is_object()) {
      p.starttls = StartTlsBehavior::Reject;
      p.starttls_code = it->at("reject").get<int>();
    } else if (*it == "ok") {
      p.starttls = StartTlsBehavior::Ok;
    } else if (*it == "strip") {
      p.starttls = StartTlsBehavior::Strip;
    } else if (*it == "reject") {
      p.starttls = StartTlsBehavior::Reject;
    } else {
      throw ConfigError("bad startTls behaviour");
    }
  }
  if (auto it = j.find("banner"); it != j.end()) {
    if (it->is_object()) {
      p.banner = BannerBehavior::Reject;
      p.banner_code = it->at("reject").get<int>();
    } else if (*it == "ok") {
      p.banner = BannerBehavior::Ok;
    } else if (*it == "silent") {
      p.banner = BannerBehavior::Silent;
    } else if (*it == "reject") {
      p.banner = BannerBehavior::Reject;
    } else {
      throw ConfigError("bad banner behaviour");
    }
  }
  if (auto it = j.find("ehlo"); it != j.end()) {
    if (*it == "ok")
      p.ehlo = EhloBehavior::Ok;
    else if (*it == "reject")
      p.ehlo = EhloBehavior::Reject;
    else if (*it == "heloOnly")
      p.ehlo = EhloBehavior::HeloOnly;
    else
      throw ConfigError("bad ehlo behaviour");
  }
  p.auth_plain_pre_tls = j.value("authPlainPreTls", false);
  p.refuse = j.value("refuse", false);
  if (auto it = j.find("forceSelect"); it != j.end()) p.force_select = resolve_suite(*it, registry);
  if (auto it = j.find("forceVersion"); it != j.end()) p.force_version = resolve_version(it->get<std::string>());
  p.validate(registry);
  return p;
}

// Blocking line/byte I/O on an accepted connection.
class Conn {
 public:
  Conn(int fd, std::chrono::milliseconds idle) : sock_(fd), idle_(idle) {}

  bool read_line(std::string& line) {
    for (;;) {
      auto nl = std::find(buf_.begin(), buf_.end(), '\n');
      if (nl != buf_.end()) {
        line.assign(buf_.begin(), nl);
        buf_.erase(buf_.begin(), nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return true;
      }
      if (buf_.size() > kMaxLine || !fill()) return false;
    }
  }

  // Reads one framed client hello.
  std::optional<Bytes> read_hello() {
    for (;;) {
      if (auto n = tls::client_hello_frame_size(buf_)) {
        if (*n > kMaxHello) return std::nullopt;
        if (buf_.size() >= *n) {
          Bytes frame(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(*n));
          buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(*n));
          return frame;
        }
      }
      if (!fill()) return std::nullopt;
    }
  }

  void send(std::string_view s) { send(as_bytes(s)); }
  void send(ByteView b) { sock_.write_all(b, net::deadline_after(idle_)); }

  // Waits for the peer to close (or the idle timeout).
  void drain() {
    try {
      while (!sock_.read_some(4096, net::deadline_after(idle_)).empty()) {
      }
    } catch (const net::NetError&) {
    }
  }

 private:
  bool fill() {
    auto chunk = sock_.read_some(4096, net::deadline_after(idle_));
    if (chunk.empty()) return false;
    buf_.insert(buf_.end(), chunk.begin(), chunk.end());
    return true;
  }

  net::Socket sock_;
  std::chrono::milliseconds idle_;
  Bytes buf_;
};

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

// Runs the plaintext dialogue; true when STARTTLS was granted.
bool smtp_dialog(Conn& c, const MockPolicy& p) {
  if (p.banner == BannerBehavior::Reject) {
    c.send(fmt::format("{} 5.3.2 No SMTP service here\r\n", p.banner_code));
    return false;
  }
  c.send("220 mock.test ESMTP ready\r\n");
  std::string line;
  while (c.read_line(line)) {
    auto cmd = upper(line.substr(0, line.find(' ')));
    if (cmd == "EHLO") {
      if (p.ehlo != EhloBehavior::Ok) {
        c.send("502 5.5.2 Error: command not recognized\r\n");
        continue;
      }
      std::string r = "250-mock.test\r\n250-PIPELINING\r\n";
      if (p.starttls != StartTlsBehavior::Strip) r += "250-STARTTLS\r\n";
      if (p.auth_plain_pre_tls) r += "250-AUTH PLAIN LOGIN\r\n";
      r += "250 8BITMIME\r\n";
      c.send(r);
    } else if (cmd == "HELO") {
      c.send(p.ehlo == EhloBehavior::Reject ? "502 5.5.2 Error: command not recognized\r\n" : "250 mock.test\r\n");
    } else if (cmd == "STARTTLS") {
      switch (p.starttls) {
        case StartTlsBehavior::Ok: c.send("220 2.0.0 Ready to start TLS\r\n"); return true;
        case StartTlsBehavior::Reject: c.send(fmt::format("{} 4.7.0 TLS not available\r\n", p.starttls_code)); break;
        case StartTlsBehavior::Strip: c.send("502 5.5.1 Unrecognized command\r\n"); break;
      }
    } else if (cmd == "QUIT") {
      c.send("221 2.0.0 Bye\r\n");
      return false;
    } else {
      c.send("500 5.5.2 Syntax error\r\n");
    }
  }
  return false;
}

bool pop3_dialog(Conn& c, const MockPolicy& p) {
  if (p.banner == BannerBehavior::Reject) {
    c.send("-ERR service unavailable\r\n");
    return false;
  }
  c.send("+OK mock POP3 ready\r\n");
  std::string line;
  while (c.read_line(line)) {
    auto cmd = upper(line.substr(0, line.find(' ')));
    if (cmd == "CAPA") {
      if (p.ehlo == EhloBehavior::Reject) {
        c.send("-ERR unknown command\r\n");
        continue;
      }
      std::string r = "+OK Capability list follows\r\nTOP\r\nUIDL\r\n";
      if (p.starttls != StartTlsBehavior::Strip) r += "STLS\r\n";
      if (p.auth_plain_pre_tls) r += "SASL PLAIN\r\n";
      r += ".\r\n";
      c.send(r);
    } else if (cmd == "STLS") {
      switch (p.starttls) {
        case StartTlsBehavior::Ok: c.send("+OK Begin TLS negotiation\r\n"); return true;
        case StartTlsBehavior::Reject: c.send("-ERR TLS not available\r\n"); break;
        case StartTlsBehavior::Strip: c.send("-ERR unknown command\r\n"); break;
      }
    } else if (cmd == "QUIT") {
      c.send("+OK bye\r\n");
      return false;
    } else {
      c.send("-ERR unknown command\r\n");
    }
  }
  return false;
}

bool imap_dialog(Conn& c, const MockPolicy& p) {
  if (p.banner == BannerBehavior::Reject) {
    c.send("* BYE service unavailable\r\n");
    return false;
  }
  c.send("* OK mock IMAP4rev1 ready\r\n");
  std::string line;
  while (c.read_line(line)) {
    auto sp = line.find(' ');
    if (sp == std::string::npos) {
      c.send("* BAD missing command\r\n");
      continue;
    }
    auto tag = line.substr(0, sp);
    auto cmd = upper(line.substr(sp + 1));
    if (cmd == "CAPABILITY") {
      if (p.ehlo == EhloBehavior::Reject) {
        c.send(tag + " NO capability denied\r\n");
        continue;
      }
      std::string caps = "* CAPABILITY IMAP4rev1 LITERAL+";
      if (p.starttls != StartTlsBehavior::Strip) caps += " STARTTLS";
      if (p.auth_plain_pre_tls) caps += " AUTH=PLAIN";
      c.send(caps + "\r\n" + tag + " OK CAPABILITY completed\r\n");
    } else if (cmd == "STARTTLS") {
      switch (p.starttls) {
        case StartTlsBehavior::Ok: c.send(tag + " OK Begin TLS negotiation now\r\n"); return true;
        case StartTlsBehavior::Reject: c.send(tag + " NO TLS not available\r\n"); break;
        case StartTlsBehavior::Strip: c.send(tag + " BAD unknown command\r\n"); break;
      }
    } else if (cmd == "LOGOUT") {
      c.send("* BYE\r\n" + tag + " OK LOGOUT completed\r\n");
      return false;
    } else {
      c.send(tag + " BAD unknown command\r\n");
    }
  }
  return false;
}

template <typename Arr>
void fill_random(Arr& a) {
  thread_local std::mt19937_64 rng{std::random_device{}()};
  for (auto& b : a) b = static_cast<std::uint8_t>(rng());
}

Bytes tls_response(const MockPolicy& p, const tls::ClientHelloInfo& hello, const Registry& registry) {
  auto v = hello.client_version;
  if (v == ProtocolVersion::SSLv2) v = ProtocolVersion::SSLv3;
  auto choice = mock_select(p, hello.client_version, hello.suites);
  if (!choice) return tls::build_alert(v, tls::AlertLevel::Fatal, tls::kAlertHandshakeFailure);
  auto out_v = p.force_version.value_or(v);
  if (out_v == ProtocolVersion::SSLv2) out_v = ProtocolVersion::SSLv3;
  tls::Random32 rnd;
  fill_random(rnd);
  Bytes out = tls::build_server_hello(out_v, *choice, rnd);
  auto append = [&](const Bytes& b) { out.insert(out.end(), b.begin(), b.end()); };
  const auto* info = registry.find(*choice);
  bool anon = info && info->anonymous();
  if (!anon && !p.cert_chain.empty()) append(tls::build_certificate(out_v, p.cert_chain));
  if (info && info->uses_dh() && p.dh_prime) {
    tls::DhParameters dh;
    dh.prime = *p.dh_prime;
    dh.generator = {2};
    dh.server_public = Bytes(std::max<std::size_t>(1, dh.prime.size() - 1), 0x5a);
    append(tls::build_dh_server_key_exchange(out_v, dh, !anon));
  } else if (info && info->uses_ecdh() && p.curve) {
    Bytes point(65, 0x11);
    point[0] = 0x04;
    append(tls::build_ecdh_server_key_exchange(out_v, *p.curve, point, !anon));
  }
  append(tls::build_server_hello_done(out_v));
  return out;
}

Bytes sslv2_response(const MockPolicy& p, const tls::ClientHelloInfo& hello) {
  std::vector<SuiteId> common;
  for (auto s : hello.suites)
    if (p.accepted.contains({ProtocolVersion::SSLv2, s})) common.push_back(s);
  if (p.force_select) common = {*p.force_select};
  if (common.empty()) return tls::build_sslv2_error(tls::kSslv2NoCipherError);
  std::array<std::uint8_t, 16> cid;
  fill_random(cid);
  Bytes cert = p.cert_chain.empty() ? Bytes{} : p.cert_chain.front();
  return tls::build_sslv2_server_hello(common, cert, cid);
}

}  // namespace

void MockPolicy::validate(const Registry& registry) const {
  bool need_dh = false;
  bool need_ec = false;
  for (const auto& e : accepted) {
    const auto* info = registry.find(e.suite);
    if (!info) throw ConfigError("policy accepts unknown suite " + e.suite.to_hex());
    if (e.suite.is_sslv2() != (e.version == ProtocolVersion::SSLv2))
      throw ConfigError("suite " + e.suite.to_hex() + " cannot be offered at " + std::string(to_string(e.version)));
    need_dh = need_dh || info->uses_dh();
    need_ec = need_ec || info->uses_ecdh();
  }
  if (need_dh && !dh_prime) throw ConfigError("policy accepts DH suites but has no dhPrime");
  if (need_ec && !curve) throw ConfigError("policy accepts ECDH suites but has no curve");
  if (dh_prime && (dh_prime->empty() || std::all_of(dh_prime->begin(), dh_prime->end(), [](auto b) { return b == 0; })))
    throw ConfigError("dhPrime must be positive");
}

std::optional<SuiteId> mock_select(const MockPolicy& policy, ProtocolVersion version, std::span<const SuiteId> offer) {
  if (policy.force_select) return policy.force_select;
  auto ok = [&](SuiteId s) { return policy.accepted.contains({version, s}); };
  auto offered = [&](SuiteId s) { return std::find(offer.begin(), offer.end(), s) != offer.end(); };
  for (auto s : policy.preference_order)
    if (offered(s) && ok(s)) return s;
  for (auto s : offer)
    if (ok(s)) return s;
  return std::nullopt;
}

std::vector<MockPolicy> parse_policies(std::string_view json_text, const Registry& registry,
                                       const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("policy file: ") + e.what());
  }
  if (j.is_object() && j.contains("policies")) j = j["policies"];
  if (!j.is_array()) throw ParseError("policy file must hold a JSON array");
  std::vector<MockPolicy> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    try {
      out.push_back(policy_from_json(j[i], registry, base_dir));
    } catch (const json::exception& e) {
      throw ParseError(fmt::format("policy {}: {}", i, e.what()));
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("policy {}: {}", i, e.what()));
    }
  }
  return out;
}

std::vector<MockPolicy> load_policies(const std::filesystem::path& path, const Registry& registry) {
  if (!std::filesystem::is_regular_file(path)) throw ConfigError("cannot open policy file " + path.string());
  return parse_policies(read_file(path), registry, path.parent_path());
}

std::string mock_ip(const FarmOptions& opts, std::size_t index) {
  if (index >= 250 * 256) throw ContractViolation("too many mocks for the addressing scheme");
  return fmt::format("127.{}.{}.{}", opts.second_octet, index / 250, index % 250 + 1);
}

std::uint16_t mock_port(const FarmOptions& opts, AppProtocol protocol) {
  if (opts.use_standard_ports) return standard_port(protocol);
  return static_cast<std::uint16_t>(opts.base_port + static_cast<int>(protocol));
}

struct MockFarm::Impl {
  const Registry& registry;
  FarmOptions opts;
  const std::vector<MockPolicy>& policies;
  std::vector<std::pair<net::Socket, std::size_t>> listeners;
  int wake_fd = -1;
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::pair<int, std::size_t>> queue;
  bool stopping = false;
  std::atomic<std::uint64_t> served{0};
  std::thread acceptor;
  std::vector<std::thread> workers;

  Impl(const Registry& r, FarmOptions o, const std::vector<MockPolicy>& p) : registry(r), opts(o), policies(p) {}

  void accept_loop() {
    std::vector<pollfd> fds;
    for (const auto& [s, _] : listeners) fds.push_back({s.fd(), POLLIN, 0});
    fds.push_back({wake_fd, POLLIN, 0});
    for (;;) {
      int rc = ::poll(fds.data(), fds.size(), -1);
      if (rc < 0) {
        if (errno == EINTR) continue;
        return;
      }
      if (fds.back().revents) return;
      for (std::size_t i = 0; i + 1 < fds.size(); ++i) {
        if (!(fds[i].revents & POLLIN)) continue;
        for (;;) {
          int c = ::accept4(fds[i].fd, nullptr, nullptr, SOCK_NONBLOCK | SOCK_CLOEXEC);
          if (c < 0) break;
          int one = 1;
          ::setsockopt(c, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
          {
            std::lock_guard lock(mu);
            queue.emplace_back(c, listeners[i].second);
          }
          cv.notify_one();
        }
      }
    }
  }

  void worker_loop() {
    for (;;) {
      std::pair<int, std::size_t> job;
      {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return stopping || !queue.empty(); });
        if (stopping && queue.empty()) return;
        job = queue.front();
        queue.pop_front();
      }
      serve(job.first, policies[job.second]);
      served.fetch_add(1, std::memory_order_relaxed);
    }
  }

  void serve(int fd, const MockPolicy& p) {
    Conn c(fd, opts.idle_timeout);
    try {
      // Silent: accept the connection and never say anything, in any mode.
      if (p.banner == BannerBehavior::Silent) {
        c.drain();
        return;
      }
      if (tls_mode_of(p.protocol) == TlsMode::StartTls) {
        bool upgraded = false;
        switch (dialect_of(p.protocol)) {
          case Dialect::SMTP: upgraded = smtp_dialog(c, p); break;
          case Dialect::POP3: upgraded = pop3_dialog(c, p); break;
          case Dialect::IMAP: upgraded = imap_dialog(c, p); break;
        }
        if (!upgraded) return;
      }
      auto frame = c.read_hello();
      if (!frame) return;
      tls::ClientHelloInfo hello;
      try {
        hello = tls::parse_client_hello(*frame);
      } catch (const ParseError&) {
        return;
      }
      c.send(hello.sslv2_format ? sslv2_response(p, hello) : tls_response(p, hello, registry));
    } catch (const net::NetError&) {
    }
  }
};

MockFarm::MockFarm(std::vector<MockPolicy> policies, const Registry& registry, FarmOptions opts)
    : policies_(std::move(policies)), impl_(std::make_unique<Impl>(registry, opts, policies_)) {
  for (std::size_t i = 0; i < policies_.size(); ++i) {
    policies_[i].validate(registry);
    auto ip = mock_ip(opts, i);
    auto port = mock_port(opts, policies_[i].protocol);
    endpoints_.push_back(Endpoint::make(ip, port, policies_[i].protocol));
    if (policies_[i].refuse) continue;
    impl_->listeners.emplace_back(net::listen_tcp(ip, port), i);
  }
  impl_->wake_fd = ::eventfd(0, EFD_CLOEXEC);
  if (impl_->wake_fd < 0) throw net::NetError(net::NetErrorKind::Other, "eventfd failed");
  impl_->acceptor = std::thread([this] { impl_->accept_loop(); });
  for (std::size_t i = 0; i < std::max<std::size_t>(1, opts.workers); ++i)
    impl_->workers.emplace_back([this] { impl_->worker_loop(); });
}

MockFarm::~MockFarm() { stop(); }

std::uint64_t MockFarm::connections_served() const { return impl_->served.load(); }

void MockFarm::stop() {
  if (!impl_ || !impl_->acceptor.joinable()) return;
  std::uint64_t one = 1;
  [[maybe_unused]] auto n = ::write(impl_->wake_fd, &one, sizeof one);
  impl_->acceptor.join();
  {
    std::lock_guard lock(impl_->mu);
    impl_->stopping = true;
  }
  impl_->cv.notify_all();
  for (auto& t : impl_->workers) t.join();
  for (auto& [fd, _] : impl_->queue) ::close(fd);
  impl_->queue.clear();
  impl_->listeners.clear();
  ::close(impl_->wake_fd);
}

}  // namespace mailtls
