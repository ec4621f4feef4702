#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mailtls/bytes.hpp"
#include "mailtls/cipher_registry.hpp"

namespace mailtls::tls {

enum class ContentType : std::uint8_t { ChangeCipherSpec = 20, Alert = 21, Handshake = 22, ApplicationData = 23 };

enum class HandshakeType : std::uint8_t {
  HelloRequest = 0,
  ClientHello = 1,
  ServerHello = 2,
  Certificate = 11,
  ServerKeyExchange = 12,
  CertificateRequest = 13,
  ServerHelloDone = 14,
  CertificateStatus = 22,
};

enum class HandshakeKind { ClientHello, ServerHello, Certificate, ServerKeyExchange, ServerHelloDone, Alert, Other };

struct HandshakeMessage {
  HandshakeKind kind = HandshakeKind::Other;
  Bytes body;
  ProtocolVersion version = ProtocolVersion::TLSv1;
};

struct DhParameters {
  Bytes prime;  // big-endian, as received
  Bytes generator;
  Bytes server_public;
  int prime_bits = 0;

  friend bool operator==(const DhParameters&, const DhParameters&) = default;
};

enum class CurveKind : std::uint8_t { NamedCurve, Other };

struct EcdhParameters {
  CurveKind kind = CurveKind::NamedCurve;
  std::uint16_t curve_id = 0;
  std::string curve_name;

  friend bool operator==(const EcdhParameters&, const EcdhParameters&) = default;
};

struct NamedCurve {
  std::uint16_t id;
  std::string_view name;
};

/// Named curves specified for TLS up to 1.2 (RFC 4492, RFC 7027).
std::span<const NamedCurve> named_curves();
std::optional<std::string_view> curve_name(std::uint16_t id);
std::optional<std::uint16_t> curve_id(std::string_view name);

enum class AlertLevel : std::uint8_t { Warning = 1, Fatal = 2 };

struct AlertInfo {
  AlertLevel level = AlertLevel::Fatal;
  std::uint8_t code = 0;
  /// Set when the alert is an SSLv2 ERROR message; `code` then holds the
  /// SSLv2 error code.
  bool sslv2_error = false;

  std::string_view name() const;
  friend bool operator==(const AlertInfo&, const AlertInfo&) = default;
};

inline constexpr std::uint8_t kAlertHandshakeFailure = 40;
inline constexpr std::uint16_t kSslv2NoCipherError = 0x0001;

/// True for suites that need the elliptic-curve hello extensions.
bool is_ec_suite(SuiteId id);

using Random32 = std::array<std::uint8_t, 32>;
using Challenge16 = std::array<std::uint8_t, 16>;

/// Record-framed SSLv3+ ClientHello offering `suites`, null compression and an
/// empty session id. Supported-groups and point-formats extensions are
/// attached only when an elliptic-curve suite is offered.
Bytes build_client_hello(ProtocolVersion version, std::span<const SuiteId> suites, const Random32& random);

/// Legacy SSLv2 CLIENT-HELLO (2-byte header, version 0.2).
Bytes build_sslv2_client_hello(std::span<const SuiteId> suites, const Challenge16& challenge);

struct ClientHelloInfo {
  bool sslv2_format = false;
  ProtocolVersion record_version = ProtocolVersion::TLSv1;
  ProtocolVersion client_version = ProtocolVersion::TLSv1;
  Bytes random;  // 32 octets (SSLv3+) or the SSLv2 challenge
  Bytes session_id;
  std::vector<SuiteId> suites;
  std::vector<std::uint8_t> compression_methods;
  std::vector<std::uint16_t> supported_groups;
  std::vector<std::uint8_t> point_formats;
};

/// Total frame size of a client hello once its header is visible, or nullopt
/// when more bytes are needed.
std::optional<std::size_t> client_hello_frame_size(ByteView prefix);

/// Parses one framed ClientHello (either format). Throws ParseError.
ClientHelloInfo parse_client_hello(ByteView frame);

// Server-side message builders. Each returns one complete record.
Bytes build_server_hello(ProtocolVersion version, SuiteId suite, const Random32& random);
Bytes build_certificate(ProtocolVersion version, std::span<const Bytes> chain);
/// `signed_params` appends a placeholder signature (TLSv1.2 form includes the
/// signature/hash algorithm pair).
Bytes build_dh_server_key_exchange(ProtocolVersion version, const DhParameters& params, bool signed_params);
Bytes build_ecdh_server_key_exchange(ProtocolVersion version, std::uint16_t curve, ByteView point, bool signed_params);
Bytes build_server_hello_done(ProtocolVersion version);
Bytes build_alert(ProtocolVersion version, AlertLevel level, std::uint8_t code);
Bytes build_record(ContentType type, ProtocolVersion version, ByteView payload);
Bytes build_sslv2_server_hello(std::span<const SuiteId> cipher_specs, ByteView certificate, ByteView connection_id);
Bytes build_sslv2_error(std::uint16_t code);

struct Accepted {
  SuiteId selected;
  ProtocolVersion version = ProtocolVersion::TLSv1;
  std::vector<Bytes> chain;
  std::optional<DhParameters> dh;
  std::optional<EcdhParameters> ecdh;
  bool saw_server_hello_done = false;
};

struct AlertResult {
  AlertInfo alert;
};

struct Malformed {
  std::string reason;
};

using FlightResult = std::variant<Accepted, AlertResult, Malformed>;

struct FlightLimits {
  std::size_t max_record = 16640;
  std::size_t max_flight = std::size_t{1} << 20;
  std::size_t max_chain = 32;
};

/// Reason used when the peer closed the stream before sending anything.
inline constexpr std::string_view kClosedBeforeResponse = "closed";

/// Incremental parser for the server's reply to a hello. Feed bytes as they
/// arrive; a result is produced once the flight is complete or invalid.
class ServerFlightParser {
 public:
  ServerFlightParser(ProtocolVersion offered_version, std::vector<SuiteId> offered_suites,
                     const Registry& registry, FlightLimits limits = {});

  /// Returns a result once terminal. Bytes beyond the configured cap are
  /// never examined.
  std::optional<FlightResult> feed(ByteView data);
  /// Stream ended; returns the final verdict.
  FlightResult finish();

  bool done() const { return result_.has_value(); }
  std::size_t bytes_seen() const { return total_; }

 private:
  void step();
  void step_sslv2();
  void on_record(ContentType type, ByteView payload);
  void on_handshake(HandshakeType type, ByteView body);
  void on_server_hello(ByteView body);
  void on_certificate(ByteView body);
  void on_server_key_exchange(ByteView body);
  void set(FlightResult r) { result_ = std::move(r); }
  void malformed(std::string reason) { set(Malformed{std::move(reason)}); }

  ProtocolVersion offered_version_;
  std::vector<SuiteId> offered_;
  const Registry& registry_;
  FlightLimits limits_;

  Bytes buffer_;
  Bytes handshake_;
  std::size_t total_ = 0;
  std::optional<Accepted> hello_;
  std::optional<FlightResult> result_;
};

FlightResult parse_server_flight(ByteView stream, ProtocolVersion offered_version, std::span<const SuiteId> offered,
                                 const Registry& registry, FlightLimits limits = {});

}  // namespace mailtls::tls
