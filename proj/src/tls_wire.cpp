#include "mailtls/tls_wire.hpp"

#include <algorithm>

namespace mailtls::tls {

namespace {

// clang-format off
constexpr NamedCurve kCurves[] = {
    {1, "sect163k1"},  {2, "sect163r1"},  {3, "sect163r2"},  {4, "sect193r1"},
    {5, "sect193r2"},  {6, "sect233k1"},  {7, "sect233r1"},  {8, "sect239k1"},
    {9, "sect283k1"},  {10, "sect283r1"}, {11, "sect409k1"}, {12, "sect409r1"},
    {13, "sect571k1"}, {14, "sect571r1"}, {15, "secp160k1"}, {16, "secp160r1"},
    {17, "secp160r2"}, {18, "secp192k1"}, {19, "secp192r1"}, {20, "secp224k1"},
    {21, "secp224r1"}, {22, "secp256k1"}, {23, "secp256r1"}, {24, "secp384r1"},
    {25, "secp521r1"}, {26, "brainpoolP256r1"}, {27, "brainpoolP384r1"},
    {28, "brainpoolP512r1"},
};
// clang-format on

constexpr std::size_t kMaxPlaintext = 16384;

std::array<std::uint8_t, 2> require_wire(ProtocolVersion v) {
  auto w = wire_bytes(v);
  if (!w) throw ContractViolation("SSLv2 has no record-layer version");
  return *w;
}

void put_version(ByteWriter& w, ProtocolVersion v) {
  auto b = require_wire(v);
  w.u8(b[0]);
  w.u8(b[1]);
}

Bytes handshake(ProtocolVersion v, HandshakeType type, ByteView body) {
  ByteWriter w;
  w.u8(static_cast<std::uint8_t>(type));
  w.u24(static_cast<std::uint32_t>(body.size()));
  w.bytes(body);
  return build_record(ContentType::Handshake, v, w.data());
}

// Compares unsigned big-endian integers.
int compare_unsigned(ByteView a, ByteView b) {
  auto sa = strip_leading_zeros(a);
  auto sb = strip_leading_zeros(b);
  if (sa.size() != sb.size()) return sa.size() < sb.size() ? -1 : 1;
  auto c = std::lexicographical_compare_three_way(sa.begin(), sa.end(), sb.begin(), sb.end());
  return c < 0 ? -1 : (c > 0 ? 1 : 0);
}

bool is_zero(ByteView v) {
  return std::all_of(v.begin(), v.end(), [](std::uint8_t b) { return b == 0; });
}

void put_placeholder_signature(ByteWriter& w, ProtocolVersion v) {
  if (v == ProtocolVersion::TLSv1_2) {
    w.u8(2);  // sha1
    w.u8(1);  // rsa
  }
  Bytes sig(64, 0x5a);
  w.vec(2, sig);
}

}  // namespace

std::span<const NamedCurve> named_curves() { return kCurves; }

std::optional<std::string_view> curve_name(std::uint16_t id) {
  for (const auto& c : kCurves)
    if (c.id == id) return c.name;
  return std::nullopt;
}

std::optional<std::uint16_t> curve_id(std::string_view name) {
  for (const auto& c : kCurves)
    if (c.name == name) return c.id;
  return std::nullopt;
}

std::string_view AlertInfo::name() const {
  if (sslv2_error) {
    switch (code) {
      case 1: return "no_cipher";
      case 2: return "no_certificate";
      case 4: return "bad_certificate";
      case 6: return "unsupported_certificate_type";
      default: return "unknown";
    }
  }
  switch (code) {
    case 0: return "close_notify";
    case 10: return "unexpected_message";
    case 20: return "bad_record_mac";
    case 21: return "decryption_failed";
    case 22: return "record_overflow";
    case 30: return "decompression_failure";
    case 40: return "handshake_failure";
    case 41: return "no_certificate";
    case 42: return "bad_certificate";
    case 43: return "unsupported_certificate";
    case 44: return "certificate_revoked";
    case 45: return "certificate_expired";
    case 46: return "certificate_unknown";
    case 47: return "illegal_parameter";
    case 48: return "unknown_ca";
    case 49: return "access_denied";
    case 50: return "decode_error";
    case 51: return "decrypt_error";
    case 60: return "export_restriction";
    case 70: return "protocol_version";
    case 71: return "insufficient_security";
    case 80: return "internal_error";
    case 86: return "inappropriate_fallback";
    case 90: return "user_canceled";
    case 100: return "no_renegotiation";
    case 110: return "unsupported_extension";
    case 112: return "unrecognized_name";
    default: return "unknown";
  }
}

bool is_ec_suite(SuiteId id) {
  if (id.is_sslv2()) return false;
  auto v = id.value();
  return (v >= 0xc001 && v <= 0xc019) || (v >= 0xc023 && v <= 0xc03b) || (v >= 0xc072 && v <= 0xc079) ||
         (v >= 0xc086 && v <= 0xc08d) || (v >= 0xc0ac && v <= 0xc0af) || v == 0xcca8 || v == 0xcca9 ||
         v == 0xccac;
}

Bytes build_record(ContentType type, ProtocolVersion version, ByteView payload) {
  auto vb = require_wire(version);
  ByteWriter w;
  std::size_t off = 0;
  do {
    auto n = std::min(kMaxPlaintext, payload.size() - off);
    w.u8(static_cast<std::uint8_t>(type));
    w.u8(vb[0]);
    w.u8(vb[1]);
    w.vec(2, payload.subspan(off, n));
    off += n;
  } while (off < payload.size());
  return std::move(w).take();
}

Bytes build_client_hello(ProtocolVersion version, std::span<const SuiteId> suites, const Random32& random) {
  if (version == ProtocolVersion::SSLv2) throw ContractViolation("use build_sslv2_client_hello for SSLv2");
  if (suites.empty()) throw ContractViolation("ClientHello needs at least one suite");
  ByteWriter body;
  put_version(body, version);
  body.bytes(random);
  body.u8(0);  // session id
  auto slen = body.begin_length(2);
  bool ec = false;
  for (auto s : suites) {
    if (s.is_sslv2()) throw ContractViolation("SSLv2 cipher spec in an SSLv3+ hello");
    body.u16(static_cast<std::uint16_t>(s.value()));
    ec = ec || is_ec_suite(s);
  }
  body.patch_length(slen, 2);
  body.u8(1);
  body.u8(0);
  if (ec) {
    auto ext = body.begin_length(2);
    body.u16(10);  // supported_groups
    auto e1 = body.begin_length(2);
    auto list = body.begin_length(2);
    for (const auto& c : kCurves) body.u16(c.id);
    body.patch_length(list, 2);
    body.patch_length(e1, 2);
    body.u16(11);  // ec_point_formats
    auto e2 = body.begin_length(2);
    body.u8(1);
    body.u8(0);  // uncompressed
    body.patch_length(e2, 2);
    body.patch_length(ext, 2);
  }
  return handshake(version, HandshakeType::ClientHello, body.data());
}

Bytes build_sslv2_client_hello(std::span<const SuiteId> suites, const Challenge16& challenge) {
  if (suites.empty()) throw ContractViolation("SSLv2 hello needs at least one cipher spec");
  ByteWriter body;
  body.u8(1);
  body.u16(0x0002);
  body.u16(static_cast<std::uint16_t>(3 * suites.size()));
  body.u16(0);
  body.u16(static_cast<std::uint16_t>(challenge.size()));
  for (auto s : suites) {
    if (!s.is_sslv2()) throw ContractViolation("SSLv2 hello requires 3-byte cipher specs");
    body.bytes(s.bytes());
  }
  body.bytes(challenge);
  if (body.size() > 0x7fff) throw ContractViolation("SSLv2 hello too large");
  ByteWriter w;
  w.u16(static_cast<std::uint16_t>(0x8000 | body.size()));
  w.bytes(body.data());
  return std::move(w).take();
}

std::optional<std::size_t> client_hello_frame_size(ByteView prefix) {
  if (prefix.size() < 2) return std::nullopt;
  if (prefix[0] & 0x80) return 2 + (((prefix[0] & 0x7fu) << 8) | prefix[1]);
  if (prefix.size() < 5) return std::nullopt;
  return 5 + ((std::size_t{prefix[3]} << 8) | prefix[4]);
}

ClientHelloInfo parse_client_hello(ByteView frame) {
  ClientHelloInfo out;
  ByteReader r(frame);
  if (!frame.empty() && (frame[0] & 0x80)) {
    auto len = r.u16() & 0x7fffu;
    if (len != r.remaining()) throw ParseError("SSLv2 length mismatch");
    if (r.u8() != 1) throw ParseError("not an SSLv2 CLIENT-HELLO");
    out.sslv2_format = true;
    auto major = r.u8();
    auto minor = r.u8();
    auto cv = (major == 0 && minor == 2) ? std::optional(ProtocolVersion::SSLv2) : version_from_wire(major, minor);
    if (!cv) throw ParseError("unknown client version");
    out.client_version = out.record_version = *cv;
    auto specs_len = r.u16();
    auto sid_len = r.u16();
    auto chal_len = r.u16();
    if (specs_len % 3 != 0) throw ParseError("cipher spec length not a multiple of 3");
    ByteReader specs(r.take(specs_len));
    while (!specs.empty()) {
      out.suites.push_back(SuiteId::sslv2(specs.u24()));
    }
    auto sid = r.take(sid_len);
    out.session_id.assign(sid.begin(), sid.end());
    auto ch = r.take(chal_len);
    out.random.assign(ch.begin(), ch.end());
    if (!r.empty()) throw ParseError("trailing bytes");
    return out;
  }
  if (r.u8() != static_cast<std::uint8_t>(ContentType::Handshake)) throw ParseError("not a handshake record");
  auto rmaj = r.u8();
  auto rmin = r.u8();
  auto rv = version_from_wire(rmaj, rmin);
  if (!rv) throw ParseError("unknown record version");
  out.record_version = *rv;
  auto rec = r.vec(2);
  if (!r.empty()) throw ParseError("trailing bytes");
  ByteReader h(rec);
  if (h.u8() != static_cast<std::uint8_t>(HandshakeType::ClientHello)) throw ParseError("not a ClientHello");
  auto body = h.take(h.u24());
  if (!h.empty()) throw ParseError("trailing handshake bytes");
  ByteReader b(body);
  auto cmaj = b.u8();
  auto cmin = b.u8();
  auto cv = version_from_wire(cmaj, cmin);
  if (!cv) throw ParseError("unknown client version");
  out.client_version = *cv;
  auto rnd = b.take(32);
  out.random.assign(rnd.begin(), rnd.end());
  auto sid = b.vec(1);
  if (sid.size() > 32) throw ParseError("session id too long");
  out.session_id.assign(sid.begin(), sid.end());
  auto suites = b.vec(2);
  if (suites.size() % 2 != 0 || suites.empty()) throw ParseError("bad cipher suite vector");
  ByteReader s(suites);
  while (!s.empty()) out.suites.push_back(SuiteId::tls(s.u16()));
  auto comp = b.vec(1);
  if (comp.empty()) throw ParseError("no compression methods");
  out.compression_methods.assign(comp.begin(), comp.end());
  if (!b.empty()) {
    ByteReader ext(b.vec(2));
    if (!b.empty()) throw ParseError("trailing bytes after extensions");
    while (!ext.empty()) {
      auto type = ext.u16();
      ByteReader data(ext.vec(2));
      if (type == 10) {
        ByteReader list(data.vec(2));
        while (!list.empty()) out.supported_groups.push_back(list.u16());
      } else if (type == 11) {
        auto pf = data.vec(1);
        out.point_formats.assign(pf.begin(), pf.end());
      }
    }
  }
  return out;
}

Bytes build_server_hello(ProtocolVersion version, SuiteId suite, const Random32& random) {
  ByteWriter b;
  put_version(b, version);
  b.bytes(random);
  b.u8(0);
  b.u16(static_cast<std::uint16_t>(suite.value()));
  b.u8(0);
  return handshake(version, HandshakeType::ServerHello, b.data());
}

Bytes build_certificate(ProtocolVersion version, std::span<const Bytes> chain) {
  ByteWriter b;
  auto all = b.begin_length(3);
  for (const auto& c : chain) b.vec(3, c);
  b.patch_length(all, 3);
  return handshake(version, HandshakeType::Certificate, b.data());
}

Bytes build_dh_server_key_exchange(ProtocolVersion version, const DhParameters& params, bool signed_params) {
  ByteWriter b;
  b.vec(2, params.prime);
  b.vec(2, params.generator);
  b.vec(2, params.server_public);
  if (signed_params) put_placeholder_signature(b, version);
  return handshake(version, HandshakeType::ServerKeyExchange, b.data());
}

Bytes build_ecdh_server_key_exchange(ProtocolVersion version, std::uint16_t curve, ByteView point, bool signed_params) {
  ByteWriter b;
  b.u8(3);
  b.u16(curve);
  b.vec(1, point);
  if (signed_params) put_placeholder_signature(b, version);
  return handshake(version, HandshakeType::ServerKeyExchange, b.data());
}

Bytes build_server_hello_done(ProtocolVersion version) {
  return handshake(version, HandshakeType::ServerHelloDone, {});
}

Bytes build_alert(ProtocolVersion version, AlertLevel level, std::uint8_t code) {
  std::uint8_t payload[2] = {static_cast<std::uint8_t>(level), code};
  return build_record(ContentType::Alert, version, payload);
}

Bytes build_sslv2_server_hello(std::span<const SuiteId> cipher_specs, ByteView certificate, ByteView connection_id) {
  ByteWriter body;
  body.u8(4);
  body.u8(0);  // session id hit
  body.u8(1);  // X.509 certificate
  body.u16(0x0002);
  body.u16(static_cast<std::uint16_t>(certificate.size()));
  body.u16(static_cast<std::uint16_t>(3 * cipher_specs.size()));
  body.u16(static_cast<std::uint16_t>(connection_id.size()));
  body.bytes(certificate);
  for (auto s : cipher_specs) body.bytes(SuiteId::sslv2(s.value()).bytes());
  body.bytes(connection_id);
  if (body.size() > 0x7fff) throw ContractViolation("SSLv2 SERVER-HELLO too large");
  ByteWriter w;
  w.u16(static_cast<std::uint16_t>(0x8000 | body.size()));
  w.bytes(body.data());
  return std::move(w).take();
}

Bytes build_sslv2_error(std::uint16_t code) {
  return {0x80, 0x03, 0x00, static_cast<std::uint8_t>(code >> 8), static_cast<std::uint8_t>(code)};
}

// ---------------------------------------------------------------------------

ServerFlightParser::ServerFlightParser(ProtocolVersion offered_version, std::vector<SuiteId> offered_suites,
                                       const Registry& registry, FlightLimits limits)
    : offered_version_(offered_version), offered_(std::move(offered_suites)), registry_(registry), limits_(limits) {}

std::optional<FlightResult> ServerFlightParser::feed(ByteView data) {
  if (result_) return result_;
  auto room = limits_.max_flight - total_;
  auto take = std::min(room, data.size());
  buffer_.insert(buffer_.end(), data.begin(), data.begin() + static_cast<std::ptrdiff_t>(take));
  total_ += take;
  try {
    step();
  } catch (const ParseError&) {
    malformed("decode error");
  }
  if (!result_ && take < data.size()) malformed("flight too large");
  return result_;
}

FlightResult ServerFlightParser::finish() {
  if (result_) return *result_;
  if (total_ == 0) return Malformed{std::string(kClosedBeforeResponse)};
  if (hello_ && buffer_.empty() && handshake_.empty()) return *hello_;
  return Malformed{"truncated"};
}

void ServerFlightParser::step() {
  if (buffer_.empty()) return;
  bool tls_framing = buffer_[0] >= 20 && buffer_[0] <= 23;
  if (offered_version_ == ProtocolVersion::SSLv2 && !tls_framing) {
    step_sslv2();
    return;
  }
  std::size_t off = 0;
  while (!result_ && buffer_.size() - off >= 5) {
    ByteView hdr(buffer_.data() + off, 5);
    auto type = hdr[0];
    if (type < 20 || type > 23) {
      malformed("unexpected record type");
      return;
    }
    if (hdr[1] != 3 || hdr[2] > 3) {
      malformed("bad record version");
      return;
    }
    std::size_t len = (std::size_t{hdr[3]} << 8) | hdr[4];
    if (len > limits_.max_record) {
      malformed("record too large");
      return;
    }
    if (buffer_.size() - off < 5 + len) break;
    ByteView payload(buffer_.data() + off + 5, len);
    off += 5 + len;
    on_record(static_cast<ContentType>(type), payload);
  }
  buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(off));
}

void ServerFlightParser::step_sslv2() {
  if (!(buffer_[0] & 0x80)) {
    malformed("unexpected record type");
    return;
  }
  if (buffer_.size() < 2) return;
  std::size_t len = ((buffer_[0] & 0x7fu) << 8) | buffer_[1];
  if (buffer_.size() < 2 + len) return;
  ByteReader r(ByteView(buffer_).subspan(2, len));
  auto type = r.u8();
  if (type == 0) {
    auto code = r.u16();
    set(AlertResult{AlertInfo{AlertLevel::Fatal, static_cast<std::uint8_t>(code), true}});
    return;
  }
  if (type != 4) {
    malformed("unexpected SSLv2 message");
    return;
  }
  r.u8();
  r.u8();
  auto ver = r.u16();
  if (ver != 0x0002) {
    malformed("version mismatch");
    return;
  }
  auto cert_len = r.u16();
  auto specs_len = r.u16();
  auto cid_len = r.u16();
  auto cert = r.take(cert_len);
  auto specs = r.take(specs_len);
  r.take(cid_len);
  if (specs_len % 3 != 0) {
    malformed("bad cipher spec list");
    return;
  }
  if (specs_len == 0) {
    set(AlertResult{AlertInfo{AlertLevel::Fatal, kSslv2NoCipherError, true}});
    return;
  }
  ByteReader sr(specs);
  Accepted acc;
  acc.version = ProtocolVersion::SSLv2;
  bool first = true;
  while (!sr.empty()) {
    auto id = SuiteId::sslv2(sr.u24());
    if (std::find(offered_.begin(), offered_.end(), id) == offered_.end()) {
      malformed("suite not offered");
      return;
    }
    if (first) acc.selected = id;
    first = false;
  }
  if (!cert.empty()) acc.chain.emplace_back(cert.begin(), cert.end());
  acc.saw_server_hello_done = true;
  buffer_.clear();
  set(std::move(acc));
}

void ServerFlightParser::on_record(ContentType type, ByteView payload) {
  switch (type) {
    case ContentType::Alert: {
      if (payload.size() < 2) {
        malformed("truncated alert");
        return;
      }
      auto level = payload[0];
      if (level != 1 && level != 2) {
        malformed("bad alert level");
        return;
      }
      AlertInfo a{static_cast<AlertLevel>(level), payload[1], false};
      if (!hello_ || a.level == AlertLevel::Fatal) set(AlertResult{a});
      return;
    }
    case ContentType::Handshake: {
      handshake_.insert(handshake_.end(), payload.begin(), payload.end());
      std::size_t off = 0;
      while (!result_ && handshake_.size() - off >= 4) {
        std::size_t len = (std::size_t{handshake_[off + 1]} << 16) | (std::size_t{handshake_[off + 2]} << 8) |
                          handshake_[off + 3];
        if (len > limits_.max_flight) {
          malformed("handshake message too large");
          return;
        }
        if (handshake_.size() - off < 4 + len) break;
        auto htype = static_cast<HandshakeType>(handshake_[off]);
        Bytes body(handshake_.begin() + static_cast<std::ptrdiff_t>(off + 4),
                   handshake_.begin() + static_cast<std::ptrdiff_t>(off + 4 + len));
        off += 4 + len;
        on_handshake(htype, body);
      }
      if (!result_) handshake_.erase(handshake_.begin(), handshake_.begin() + static_cast<std::ptrdiff_t>(off));
      return;
    }
    default:
      malformed("unexpected record");
  }
}

void ServerFlightParser::on_handshake(HandshakeType type, ByteView body) {
  if (type == HandshakeType::HelloRequest) return;
  if (!hello_) {
    if (type != HandshakeType::ServerHello) {
      malformed("unexpected handshake message");
      return;
    }
    on_server_hello(body);
    return;
  }
  switch (type) {
    case HandshakeType::Certificate:
      on_certificate(body);
      return;
    case HandshakeType::ServerKeyExchange:
      on_server_key_exchange(body);
      return;
    case HandshakeType::CertificateRequest:
    case HandshakeType::CertificateStatus:
      return;
    case HandshakeType::ServerHelloDone:
      hello_->saw_server_hello_done = true;
      set(*hello_);
      return;
    default:
      malformed("unexpected handshake message");
  }
}

void ServerFlightParser::on_server_hello(ByteView body) {
  ByteReader r(body);
  auto major = r.u8();
  auto minor = r.u8();
  auto v = version_from_wire(major, minor);
  r.take(32);
  auto sid = r.vec(1);
  if (sid.size() > 32) {
    malformed("session id too long");
    return;
  }
  auto suite = SuiteId::tls(r.u16());
  auto compression = r.u8();
  if (!r.empty()) r.vec(2);
  if (!r.empty()) {
    malformed("trailing bytes in ServerHello");
    return;
  }
  if (!v || *v != offered_version_) {
    malformed("version mismatch");
    return;
  }
  if (std::find(offered_.begin(), offered_.end(), suite) == offered_.end()) {
    malformed("suite not offered");
    return;
  }
  if (compression != 0) {
    malformed("compression not offered");
    return;
  }
  Accepted acc;
  acc.selected = suite;
  acc.version = *v;
  hello_ = std::move(acc);
}

void ServerFlightParser::on_certificate(ByteView body) {
  ByteReader r(body);
  ByteReader list(r.vec(3));
  if (!r.empty()) {
    malformed("trailing bytes in Certificate");
    return;
  }
  std::vector<Bytes> chain;
  while (!list.empty()) {
    if (chain.size() == limits_.max_chain) {
      malformed("chain too long");
      return;
    }
    auto der = list.vec(3);
    if (der.empty()) {
      malformed("empty certificate");
      return;
    }
    chain.emplace_back(der.begin(), der.end());
  }
  hello_->chain = std::move(chain);
}

void ServerFlightParser::on_server_key_exchange(ByteView body) {
  const auto* info = registry_.find(hello_->selected);
  if (!info) return;
  ByteReader r(body);
  if (info->uses_dh()) {
    auto p = r.vec(2);
    auto g = r.vec(2);
    auto ys = r.vec(2);
    if (p.empty() || is_zero(p)) {
      malformed("bad dh prime");
      return;
    }
    std::uint8_t two[1] = {2};
    if (g.empty() || compare_unsigned(g, two) < 0) {
      malformed("bad dh generator");
      return;
    }
    if (ys.empty() || compare_unsigned(ys, p) >= 0) {
      malformed("bad dh public value");
      return;
    }
    DhParameters dh;
    dh.prime.assign(p.begin(), p.end());
    dh.generator.assign(g.begin(), g.end());
    dh.server_public.assign(ys.begin(), ys.end());
    dh.prime_bits = bit_length(p);
    hello_->dh = std::move(dh);
  } else if (info->uses_ecdh()) {
    auto curve_type = r.u8();
    EcdhParameters ec;
    if (curve_type == 3) {
      ec.curve_id = r.u16();
      auto point = r.vec(1);
      if (point.empty()) {
        malformed("empty ec point");
        return;
      }
      auto name = curve_name(ec.curve_id);
      ec.curve_name = name ? std::string(*name) : "other";
    } else if (curve_type == 1 || curve_type == 2) {
      ec.kind = CurveKind::Other;
      ec.curve_name = "other";
    } else {
      malformed("bad ec curve type");
      return;
    }
    hello_->ecdh = std::move(ec);
  }
}

FlightResult parse_server_flight(ByteView stream, ProtocolVersion offered_version, std::span<const SuiteId> offered,
                                 const Registry& registry, FlightLimits limits) {
  ServerFlightParser p(offered_version, std::vector<SuiteId>(offered.begin(), offered.end()), registry, limits);
  if (auto r = p.feed(stream)) return *r;
  return p.finish();
}

}  // namespace mailtls::tls
