#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mailtls/cipher_registry.hpp"
#include "mailtls/protocol_drivers.hpp"
#include "mailtls/tls_wire.hpp"

namespace mailtls {

using Timestamp = std::chrono::time_point<std::chrono::system_clock, std::chrono::microseconds>;

Timestamp now_timestamp();

enum class ProbeStatus : std::uint8_t { Accepted, Rejected, Preferred, Error };
enum class ProbeKind : std::uint8_t { Suite, Preference };

std::string_view to_string(ProbeStatus s);
std::optional<ProbeStatus> parse_probe_status(std::string_view s);

struct ProbeOutcome {
  ProbeKind kind = ProbeKind::Suite;
  ProtocolVersion version = ProtocolVersion::TLSv1;
  /// Suite probes: the offered suite. Preference probes: the server's pick,
  /// absent when nothing was selected.
  std::optional<SuiteId> suite;
  ProbeStatus status = ProbeStatus::Error;
  std::optional<tls::AlertInfo> alert;
  std::optional<std::string> error_reason;
  std::optional<tls::DhParameters> dh;
  std::optional<tls::EcdhParameters> ecdh;
  std::optional<std::string> chain_ref;
  Timestamp started_at{};

  bool positive() const { return status == ProbeStatus::Accepted || status == ProbeStatus::Preferred; }
  friend bool operator==(const ProbeOutcome&, const ProbeOutcome&) = default;
};

enum class InvalidReason : std::uint8_t { Timeout, ConnectionRejected, EhloRejected, StartTlsRejected, NoHandshake };

inline constexpr InvalidReason kAllInvalidReasons[] = {InvalidReason::Timeout, InvalidReason::ConnectionRejected,
                                                       InvalidReason::EhloRejected, InvalidReason::StartTlsRejected,
                                                       InvalidReason::NoHandshake};

std::string_view to_string(InvalidReason r);
std::optional<InvalidReason> parse_invalid_reason(std::string_view s);

struct HostScanRecord {
  Endpoint endpoint;
  std::optional<PlaintextCapabilities> capabilities;
  std::vector<ProbeOutcome> outcomes;
  bool valid = false;
  std::optional<InvalidReason> invalid_reason;
  std::string invalid_detail;
  Timestamp scan_start{};
  Timestamp scan_end{};
  /// DER chains keyed by chain_ref, stored once per record.
  std::map<std::string, std::vector<Bytes>> chains;

  /// Accepted suite-probe pairs.
  std::set<ProbeEntry> accepted_pairs() const;
  const std::vector<Bytes>* chain(const std::optional<std::string>& ref) const;
  /// Chain of the first positive outcome that carried one.
  const std::vector<Bytes>* leaf_chain() const;

  friend bool operator==(const HostScanRecord&, const HostScanRecord&) = default;
};

/// SHA-256 over the length-prefixed DER blobs.
std::string chain_fingerprint(std::span<const Bytes> chain);

struct ScanLimits {
  std::chrono::milliseconds connect_timeout{10'000};
  std::chrono::milliseconds read_timeout{10'000};
  std::chrono::milliseconds probe_timeout{30'000};
  std::chrono::milliseconds inter_probe_delay{0};
  int connect_retries = 1;
  std::size_t max_concurrent_targets = 16;
  /// New connections per sliding second; 0 disables the cap.
  std::size_t global_rate_cap = 0;
  bool preference_probes = true;
  DriverOptions driver;
};

/// Admits at most `cap` connection attempts in any one-second window.
class ConnectionGate {
 public:
  explicit ConnectionGate(std::size_t cap) : cap_(cap) {}
  /// Blocks until a slot is free; returns the admission time.
  Timestamp acquire();
  std::size_t cap() const { return cap_; }

 private:
  std::size_t cap_;
  std::mutex mu_;
  std::deque<Timestamp> recent_;
};

class Scanner {
 public:
  Scanner(const Registry& registry, ScanLimits limits);

  /// Runs every plan entry serially, then preference probes for each SSLv3+
  /// version with at least one accepted suite. A failure before TLS on the
  /// first probe, or silence after its hello, marks the target invalid
  /// without further probes.
  HostScanRecord scan_target(const Endpoint& endpoint, const ProbePlan& plan);

  /// One hello offering all candidates; the selected suite is reported with
  /// status Preferred.
  ProbeOutcome probe_preference(const Endpoint& endpoint, ProtocolVersion version,
                                std::span<const SuiteId> candidates, HostScanRecord* record = nullptr);

  const ScanLimits& limits() const { return limits_; }
  ConnectionGate& gate() { return gate_; }

 private:
  struct PreTlsFailure {
    InvalidReason reason;
    std::string detail;
  };
  struct ProbeRun {
    std::optional<ProbeOutcome> outcome;
    std::optional<PreTlsFailure> pre_tls;
    std::optional<PlaintextCapabilities> caps;
    /// The hello drew no bytes before the read deadline.
    bool silent_timeout = false;
  };
  ProbeRun run_probe(const Endpoint& endpoint, ProtocolVersion version, std::span<const SuiteId> offer,
                     ProbeKind kind, HostScanRecord* record);

  const Registry& registry_;
  ScanLimits limits_;
  ConnectionGate gate_;
};

/// Destination for finished records; write() may be called from several
/// threads and must emit each record atomically.
class RecordSink {
 public:
  virtual ~RecordSink() = default;
  virtual void write(const HostScanRecord& record) = 0;
  /// Best effort marker that the output is incomplete.
  virtual void mark_partial() noexcept {}
};

class CollectingSink : public RecordSink {
 public:
  void write(const HostScanRecord& record) override;
  std::vector<HostScanRecord> take();

 private:
  std::mutex mu_;
  std::vector<HostScanRecord> records_;
};

struct CampaignSummary {
  std::size_t total = 0;
  std::size_t valid = 0;
  std::map<InvalidReason, std::size_t> invalid;
  std::chrono::milliseconds elapsed{0};
  bool aborted = false;
  std::string abort_reason;

  std::size_t invalid_total() const;
};

CampaignSummary run_campaign(std::span<const Endpoint> targets, const ProbePlan& plan, const ScanLimits& limits,
                             RecordSink& sink, const Registry& registry);

}  // namespace mailtls
