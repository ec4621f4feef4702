#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mailtls/cipher_registry.hpp"
#include "mailtls/scanner.hpp"

namespace mailtls {

using CipherConfig = std::set<ProbeEntry>;

struct CipherConfigNode {
  CipherConfig config;
  std::uint64_t weight = 0;
  friend bool operator==(const CipherConfigNode&, const CipherConfigNode&) = default;
};

inline constexpr std::string_view kPlaintextBucket = "Plaintext";

/// One node per distinct accepted set over valid records; hosts with nothing
/// accepted share the empty-config node.
std::vector<CipherConfigNode> build_graph(std::span<const HostScanRecord> records);

/// Merges equal configs, drops zero weights, orders nodes by config.
std::vector<CipherConfigNode> normalize_nodes(std::vector<CipherConfigNode> nodes);

/// Exact pair counts over ordered host pairs with replacement.
struct PairDistribution {
  std::map<std::string, std::uint64_t> counts;  // bucket label → ordered host pairs
  std::uint64_t total_weight = 0;
  std::uint64_t denominator = 0;  // total_weight squared

  double probability(const std::string& label) const;
};

/// Comma-joined version names, e.g. "SSLv3, TLSv1".
std::string bucket_label(const std::set<ProtocolVersion>& versions);

/// A pair lands in the bucket of versions at which the two configs share a
/// suite, or in "Plaintext" when they share nothing. Throws
/// ContractViolation when the total weight is zero.
PairDistribution compatibility_report(std::span<const CipherConfigNode> nodes);

using SuitePolicy = std::function<bool(const ProbeEntry&)>;

/// Keeps pairs whose suite does not use RC4 encryption.
SuitePolicy drop_rc4_policy(const Registry& registry);
/// Keeps pairs whose suite is in the list (any version).
SuitePolicy allowlist_policy(std::span<const SuiteId> allowed);

std::vector<CipherConfigNode> apply_policy(std::span<const CipherConfigNode> nodes, const SuitePolicy& keep);

/// Attributes every compatible ordered pair to the best-ranked shared suite.
/// Labels are suite ids in hex plus "Plaintext". Throws ContractViolation when
/// a suite present in any config is missing from the ranking.
PairDistribution per_suite_attribution(std::span<const CipherConfigNode> nodes, std::span<const SuiteId> ranking);

/// Suite list file: one name, alias or hex id per line; '#' comments.
std::vector<SuiteId> parse_suite_list(std::string_view text, const Registry& registry);
/// The RFC 7525 recommended suites shipped with the library.
std::vector<SuiteId> bundled_allowlist(const Registry& registry);

}  // namespace mailtls
