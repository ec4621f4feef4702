#pragma once

#include <atomic>
#include <chrono>
#include <span>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mailtls/cipher_registry.hpp"
#include "mailtls/protocol_drivers.hpp"

namespace mailtls {

enum class StartTlsBehavior : std::uint8_t { Ok, Reject, Strip };
enum class BannerBehavior : std::uint8_t { Ok, Reject, Silent };
/// SMTP: Reject refuses EHLO and HELO, HeloOnly refuses EHLO only.
/// IMAP: Reject answers CAPABILITY with NO. POP3: Reject answers CAPA with -ERR.
enum class EhloBehavior : std::uint8_t { Ok, Reject, HeloOnly };

struct MockPolicy {
  AppProtocol protocol = AppProtocol::SMTP;
  std::set<ProbeEntry> accepted;
  std::vector<SuiteId> preference_order;
  std::vector<Bytes> cert_chain;  // DER, leaf first
  std::optional<Bytes> dh_prime;  // big-endian
  std::optional<std::uint16_t> curve;
  StartTlsBehavior starttls = StartTlsBehavior::Ok;
  int starttls_code = 454;
  BannerBehavior banner = BannerBehavior::Ok;
  int banner_code = 554;
  EhloBehavior ehlo = EhloBehavior::Ok;
  bool auth_plain_pre_tls = false;
  /// No listener is opened; connections are refused.
  bool refuse = false;
  /// Misbehaviour: always select this suite.
  std::optional<SuiteId> force_select;
  /// Misbehaviour: answer with this version.
  std::optional<ProtocolVersion> force_version;

  /// Throws ConfigError when an accepted DH/ECDH suite lacks its prime/curve
  /// or a suite is unknown to the registry.
  void validate(const Registry& registry) const;
};

/// Policy file: a JSON array of policy objects (schema in docs/formats.md).
/// Relative certificate paths resolve against `base_dir`.
std::vector<MockPolicy> parse_policies(std::string_view json_text, const Registry& registry,
                                       const std::filesystem::path& base_dir = ".");
std::vector<MockPolicy> load_policies(const std::filesystem::path& path, const Registry& registry);

struct FarmOptions {
  /// Mock i listens on 127.<first_octet2>.<i / 250>.<i % 250 + 1>.
  int second_octet = 10;
  std::uint16_t base_port = 20000;
  /// Listen on the protocol's well-known port instead of base_port + index.
  bool use_standard_ports = false;
  std::size_t workers = 32;
  /// Idle read timeout for a mock connection.
  std::chrono::milliseconds idle_timeout{15'000};
};

/// Address of mock `index` under the farm's addressing scheme.
std::string mock_ip(const FarmOptions& opts, std::size_t index);
std::uint16_t mock_port(const FarmOptions& opts, AppProtocol protocol);

/// A set of listening mocks served by one acceptor thread and a worker pool.
class MockFarm {
 public:
  /// Throws net::NetError when a listener cannot be bound.
  MockFarm(std::vector<MockPolicy> policies, const Registry& registry, FarmOptions opts = {});
  ~MockFarm();
  MockFarm(const MockFarm&) = delete;
  MockFarm& operator=(const MockFarm&) = delete;

  /// Endpoint i corresponds to policy i (also for refusing mocks).
  const std::vector<Endpoint>& endpoints() const { return endpoints_; }
  const std::vector<MockPolicy>& policies() const { return policies_; }
  std::uint64_t connections_served() const;

  void stop();

 private:
  struct Impl;
  std::vector<MockPolicy> policies_;
  std::vector<Endpoint> endpoints_;
  std::unique_ptr<Impl> impl_;
};

/// Suite the mock picks for a hello at `version` offering `offer`, or nullopt
/// for a handshake_failure alert.
std::optional<SuiteId> mock_select(const MockPolicy& policy, ProtocolVersion version, std::span<const SuiteId> offer);

}  // namespace mailtls
