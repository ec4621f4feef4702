#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mailtls/bytes.hpp"
#include "mailtls/scanner.hpp"

namespace mailtls {

struct DistinguishedName {
  std::string cn;
  std::string o;
  std::string ou;
  friend auto operator<=>(const DistinguishedName&, const DistinguishedName&) = default;
};

enum class KeyAlgo : std::uint8_t { RSA, Other };

struct CertificateRecord {
  std::string sha1_fingerprint;  // lowercase hex of SHA-1(DER)
  DistinguishedName subject;
  DistinguishedName issuer;
  Timestamp not_before{};
  Timestamp not_after{};
  KeyAlgo key_algo = KeyAlgo::Other;
  Bytes rsa_modulus;
  Bytes rsa_exponent;
  int key_bits = 0;
  bool is_leaf = false;
  /// DER could not be decoded; every other field is empty.
  bool malformed = false;
  Bytes der;
};

/// Parses each blob; the first is the leaf. Undecodable blobs produce
/// placeholders flagged malformed.
std::vector<CertificateRecord> parse_chain(std::span<const Bytes> der_blobs);
CertificateRecord parse_certificate(ByteView der, bool is_leaf = true);

/// Reads all certificates of a PEM bundle as DER.
std::vector<Bytes> read_pem_bundle(const std::filesystem::path& path);
std::vector<Bytes> parse_pem_bundle(std::string_view pem);

enum class Verdict : std::uint8_t { Ok, SelfSigned, UnableToGetLocalIssuer, Expired, ValidationError };

inline constexpr Verdict kAllVerdicts[] = {Verdict::Ok, Verdict::SelfSigned, Verdict::UnableToGetLocalIssuer,
                                           Verdict::Expired, Verdict::ValidationError};

std::string_view to_string(Verdict v);
std::optional<Verdict> parse_verdict(std::string_view s);

/// Set of trusted root certificates.
class TrustStore {
 public:
  TrustStore();
  ~TrustStore();
  TrustStore(TrustStore&&) noexcept;
  TrustStore& operator=(TrustStore&&) noexcept;

  static TrustStore from_der(std::span<const Bytes> roots);
  static TrustStore load_pem(const std::filesystem::path& path);

  std::size_t size() const;

 private:
  friend Verdict validate_chain(std::span<const Bytes>, const TrustStore&, Timestamp);
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Precedence: selfSigned, unableToGetLocalIssuer, expired, validationError,
/// ok. Checks signatures, validity windows and the CA flag only.
Verdict validate_chain(std::span<const Bytes> chain, const TrustStore& store, Timestamp at);

/// One scanned (ip, port) with its leaf certificate and verdict.
struct HostLeaf {
  std::string ip;
  std::uint16_t port = 0;
  CertificateRecord leaf;
  Verdict verdict = Verdict::ValidationError;
};

/// Leaf of every record that carried a chain. Validation time defaults to
/// each record's scan start.
std::vector<HostLeaf> collect_leaves(std::span<const HostScanRecord> records, const TrustStore& store,
                                     std::optional<Timestamp> at = std::nullopt);

enum class KeyPopulation { All, TrustedLeaves, SelfSigned };

/// Bucket label for key sizes: 512, 1024, 2048, 4096, or 0 for other sizes.
int key_size_bucket(int bits);
inline constexpr int kKeyBuckets[] = {512, 1024, 2048, 4096, 0};

struct KeySizeHistogram {
  std::map<int, std::size_t> counts;  // RSA keys only, keyed by key_size_bucket
  std::size_t rsa_total = 0;
  std::size_t non_rsa = 0;

  /// Bucket → fraction of RSA keys. Empty when there are none.
  std::map<int, double> fractions() const;
};

KeySizeHistogram key_size_histogram(std::span<const HostLeaf> leaves, KeyPopulation population);

struct CertCluster {
  std::string fingerprint;
  std::string subject_cn;
  std::string issuer_cn;
  std::map<std::uint16_t, std::size_t> per_port_ips;
  std::size_t total() const;
};

/// Groups distinct IPs by leaf fingerprint per port, sorted by total count
/// (descending) then fingerprint.
std::vector<CertCluster> common_certificate_clusters(std::span<const HostLeaf> leaves);

struct SubjectCluster {
  DistinguishedName subject;
  int key_bits_mode = 0;
  std::size_t ip_count = 0;
  std::size_t distinct_certs = 0;
};

/// Self-signed leaves grouped by (CN, OU, O); ip_count counts distinct IPs.
std::vector<SubjectCluster> self_signed_subject_clusters(std::span<const HostLeaf> leaves);

struct PortCert {
  std::uint16_t port = 0;
  CertificateRecord cert;
};

struct Snapshot {
  std::string date;  // YYYY-MM-DD
  std::vector<PortCert> certs;
};

/// Snapshot from a directory of `<ip>_<port>.pem` files (leaf first).
Snapshot load_pem_snapshot(std::string date, const std::filesystem::path& dir);
Snapshot snapshot_from_records(std::string date, std::span<const HostScanRecord> records);

struct KeySizeSeries {
  std::vector<std::string> dates;
  /// port → one bucket-count map per date (RSA leaves only).
  std::map<std::uint16_t, std::vector<std::map<int, std::size_t>>> by_port;
};

/// Throws ContractViolation unless dates are strictly increasing.
KeySizeSeries key_size_time_series(std::span<const Snapshot> snapshots);

}  // namespace mailtls
