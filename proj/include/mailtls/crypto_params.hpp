#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <gmpxx.h>

#include "mailtls/bytes.hpp"
#include "mailtls/cipher_registry.hpp"
#include "mailtls/scanner.hpp"

namespace mailtls {

struct KnownPrime {
  std::string label;
  Bytes value;  // big-endian
  int bits = 0;
  std::string source;
};

/// Default DH primes shipped by common mail and web servers.
std::span<const KnownPrime> known_primes();
const KnownPrime* find_known_prime(ByteView prime);
const KnownPrime* find_known_prime(std::string_view label);

/// DH prime-size buckets: 512, 768, 1024, 2048, 4096, or 0 for other sizes.
int dh_bits_bucket(int bits);
inline constexpr int kDhBuckets[] = {512, 768, 1024, 2048, 4096, 0};

struct DhSizeTable {
  struct Cell {
    std::map<int, std::size_t> ips_by_bucket;  // distinct IPs per bucket
    std::size_t ips = 0;                       // distinct IPs in this class
  };
  /// port → export class (true = export-grade suite) → cell.
  std::map<std::uint16_t, std::map<bool, Cell>> ports;

  double fraction(std::uint16_t port, bool export_class, int bucket) const;
};

/// Groups DH handshakes by export class of the negotiated suite.
DhSizeTable dh_group_size_table(std::span<const HostScanRecord> records, const Registry& registry);

struct SharedPrime {
  std::string digest;  // SHA-256 of the minimal big-endian prime
  int bits = 0;
  std::size_t ip_count = 0;
  std::optional<std::string> label;
  Bytes prime;
};

struct SharedPrimeReport {
  std::vector<SharedPrime> primes;  // by ip_count descending, then digest
  std::size_t dh_ips = 0;           // distinct IPs with any DH handshake
};

SharedPrimeReport shared_prime_report(std::span<const HostScanRecord> records,
                                      std::span<const KnownPrime> known = known_primes());

struct CurveUsage {
  std::map<std::string, std::size_t> counts;
  std::size_t total = 0;
  std::map<std::string, double> fractions() const;
};

/// Per port, ECDH handshakes by curve name; curves outside the table are
/// counted as "other".
std::map<std::uint16_t, CurveUsage> curve_usage_table(std::span<const HostScanRecord> records);

struct WeakKeyFinding {
  mpz_class modulus;
  mpz_class shared_factor;
  mpz_class cofactor;
  std::vector<std::string> source_fingerprints;
};

/// Remainder-tree output: g_i = gcd(N_i, prod_{j != i} N_j) for every input.
/// Throws ContractViolation for values <= 1 or duplicates.
std::vector<mpz_class> batch_gcd_values(const std::vector<mpz_class>& moduli);

/// Findings for every modulus sharing a nontrivial factor with another input.
/// When g_i = N_i, pairwise gcds against the other flagged moduli are tried.
std::vector<WeakKeyFinding> batch_gcd(const std::vector<mpz_class>& moduli);

struct DedupedModuli {
  std::vector<mpz_class> unique;
  std::map<std::string, std::size_t> duplicates;  // hex modulus → occurrences (>1)
};
DedupedModuli dedupe_moduli(const std::vector<mpz_class>& moduli);

mpz_class mpz_from_bytes(ByteView big_endian);
Bytes mpz_to_bytes(const mpz_class& v);
/// Lowercase hex without prefix.
std::string mpz_hex(const mpz_class& v);
mpz_class mpz_from_hex(std::string_view hex);

}  // namespace mailtls
