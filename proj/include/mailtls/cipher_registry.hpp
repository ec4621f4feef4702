#pragma once

#include <array>
#include <chrono>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mailtls/bytes.hpp"

namespace mailtls {

enum class ProtocolVersion : std::uint8_t { SSLv2, SSLv3, TLSv1, TLSv1_1, TLSv1_2 };

inline constexpr std::array<ProtocolVersion, 5> kAllVersions = {
    ProtocolVersion::SSLv2, ProtocolVersion::SSLv3, ProtocolVersion::TLSv1,
    ProtocolVersion::TLSv1_1, ProtocolVersion::TLSv1_2};

/// "SSLv2", "SSLv3", "TLSv1", "TLSv1.1", "TLSv1.2".
std::string_view to_string(ProtocolVersion v);
std::optional<ProtocolVersion> parse_version(std::string_view s);

/// Record/handshake version octets; SSLv2 has none (legacy framing).
std::optional<std::array<std::uint8_t, 2>> wire_bytes(ProtocolVersion v);
std::optional<ProtocolVersion> version_from_wire(std::uint8_t major, std::uint8_t minor);

/// Cipher suite identifier: two octets for SSLv3+, three for SSLv2 cipher specs.
class SuiteId {
 public:
  constexpr SuiteId() = default;
  static constexpr SuiteId tls(std::uint16_t v) { return SuiteId(v, 2); }
  static constexpr SuiteId sslv2(std::uint32_t v) { return SuiteId(v & 0xffffff, 3); }
  /// Accepts 4 or 6 hex digits.
  static SuiteId from_hex(std::string_view hex);

  constexpr std::uint32_t value() const { return value_; }
  constexpr int width() const { return width_; }
  constexpr bool is_sslv2() const { return width_ == 3; }
  Bytes bytes() const;
  std::string to_hex() const;

  friend constexpr auto operator<=>(const SuiteId&, const SuiteId&) = default;

 private:
  constexpr SuiteId(std::uint32_t v, std::uint8_t w) : value_(v), width_(w) {}
  std::uint32_t value_ = 0;
  std::uint8_t width_ = 0;
};

struct SuiteIdHash {
  std::size_t operator()(const SuiteId& s) const noexcept {
    return std::hash<std::uint32_t>{}(s.value() | static_cast<std::uint32_t>(s.width()) << 24);
  }
};

enum class KeyExchange : std::uint8_t { RSA, DHE_RSA, ECDHE_RSA, ADH, AECDH, Other };
enum class Mac : std::uint8_t { MD5, SHA1, SHA256, SHA384, None };

std::string_view to_string(KeyExchange k);
std::string_view to_string(Mac m);

struct CipherSuiteInfo {
  SuiteId id;
  std::string name;   // registry canonical name
  std::string alias;  // legacy OpenSSL-style name used in report tables
  KeyExchange kex = KeyExchange::Other;
  std::string enc;  // e.g. "AES-256-CBC", "RC4-40", "NULL"
  int enc_key_bits = 0;
  Mac mac = Mac::None;
  bool export_grade = false;
  std::set<ProtocolVersion> specified_versions;

  bool uses_dh() const { return kex == KeyExchange::DHE_RSA || kex == KeyExchange::ADH; }
  bool uses_ecdh() const { return kex == KeyExchange::ECDHE_RSA || kex == KeyExchange::AECDH; }
  bool anonymous() const { return kex == KeyExchange::ADH || kex == KeyExchange::AECDH; }
  bool specified_for(ProtocolVersion v) const { return specified_versions.contains(v); }
  /// Name for tables: the alias when present.
  const std::string& display_name() const { return alias.empty() ? name : alias; }

  friend bool operator==(const CipherSuiteInfo&, const CipherSuiteInfo&) = default;
};

/// Immutable catalogue of cipher suites.
class Registry {
 public:
  Registry() = default;

  /// Parses the comma-delimited registry format. Throws ParseError naming the
  /// line number for malformed rows and for duplicate ids.
  static Registry parse(std::string_view text);
  static Registry load(const std::filesystem::path& path);
  /// The registry shipped with the library (data/cipher_suites.csv).
  static const Registry& bundled();

  std::optional<CipherSuiteInfo> classify(SuiteId id) const;
  const CipherSuiteInfo* find(SuiteId id) const;
  /// Lookup by canonical name, alias or hex id. Aliases prefer SSLv3+ entries.
  const CipherSuiteInfo* find_by_name(std::string_view name) const;

  std::span<const CipherSuiteInfo> entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

 private:
  std::vector<CipherSuiteInfo> entries_;
  std::unordered_map<SuiteId, std::size_t, SuiteIdHash> by_id_;
};

struct ProbeEntry {
  ProtocolVersion version;
  SuiteId suite;
  friend auto operator<=>(const ProbeEntry&, const ProbeEntry&) = default;
};

struct ProbePlan {
  std::vector<ProbeEntry> entries;
  std::chrono::milliseconds inter_probe_delay{0};
  /// Ordered candidate lists for preference probes, per SSLv3+ version.
  std::map<ProtocolVersion, std::vector<SuiteId>> preference_sets;

  std::size_t count(ProtocolVersion v) const;
  /// Copy keeping only entries (and preference sets) for the given versions.
  ProbePlan restricted_to(const std::set<ProtocolVersion>& versions) const;
};

/// Suite lists probed by default: 7 SSLv2 cipher specs and 136 SSLv3+ suites.
std::span<const SuiteId> default_sslv2_suites();
std::span<const SuiteId> default_tls_suites();

/// 7 SSLv2 entries followed by 136 entries for each of SSLv3..TLSv1.2 (551).
/// Throws ConfigError when the registry lacks one of the default suites.
ProbePlan default_probe_plan(const Registry& registry);

/// Plan file: registry columns plus a `version` column; only `id` and
/// `version` are interpreted. Every id must resolve in the registry.
ProbePlan parse_probe_plan(std::string_view text, const Registry& registry);
ProbePlan load_probe_plan(const std::filesystem::path& path, const Registry& registry);

/// Suites offered in preference probes: SSLv3+ defaults minus CAMELLIA and 3DES.
std::vector<SuiteId> default_preference_candidates(const Registry& registry);

/// Splits one comma-delimited line. No quoting support; registry fields never
/// contain commas.
std::vector<std::string_view> split_fields(std::string_view line, char sep = ',');

/// Whole file as bytes. Throws ParseError when it cannot be opened.
std::string read_file(const std::filesystem::path& path);

}  // namespace mailtls
