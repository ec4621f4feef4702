#include <doctest.h>

#define OPENSSL_SUPPRESS_DEPRECATED
#include <openssl/bn.h>
#include <openssl/dh.h>

#include <random>

#include "mailtls/crypto_params.hpp"
#include "mailtls/errors.hpp"
#include "support.hpp"

using namespace mailtls;

namespace {

const Registry& reg() { return Registry::bundled(); }

SuiteId id(std::string_view name) { return reg().find_by_name(name)->id; }

HostScanRecord dh_record(std::string ip, std::uint16_t port, SuiteId suite, const Bytes& prime) {
  auto r = support::make_record(std::move(ip), port, {{ProtocolVersion::TLSv1, suite}});
  r.outcomes[0].dh = tls::DhParameters{prime, Bytes{2}, Bytes{5}, bit_length(prime)};
  return r;
}

HostScanRecord ec_record(std::string ip, std::uint16_t port, std::uint16_t curve) {
  auto r = support::make_record(std::move(ip), port, {{ProtocolVersion::TLSv1_2, id("ECDHE-RSA-AES128-SHA")}});
  r.outcomes[0].ecdh = tls::EcdhParameters{tls::CurveKind::NamedCurve, curve, std::string(*tls::curve_name(curve))};
  return r;
}

Bytes prime_bytes(gmp_randclass& rnd, unsigned bits) { return mpz_to_bytes(support::random_prime(rnd, bits)); }

// Independent reference: g_i = lcm_j gcd(N_i, N_j) over j != i.
std::vector<mpz_class> naive_gcds(const std::vector<mpz_class>& n) {
  std::vector<mpz_class> g(n.size(), 1);
  for (std::size_t i = 0; i < n.size(); ++i)
    for (std::size_t j = 0; j < n.size(); ++j)
      if (i != j) {
        mpz_class d = gcd(n[i], n[j]);
        g[i] = lcm(g[i], d);
      }
  return g;
}

}  // namespace

TEST_SUITE("crypto") {

TEST_CASE("known prime constants") {
  std::set<std::string> labels;
  for (const auto& k : known_primes()) {
    CAPTURE(k.label);
    CHECK(labels.insert(k.label).second);
    CHECK(k.bits == bit_length(k.value));
    auto p = mpz_from_bytes(k.value);
    CHECK(mpz_probab_prime_p(p.get_mpz_t(), 40) > 0);
  }
  // Pinned SHA-256 of the minimal big-endian encodings.
  CHECK(sha256_hex(find_known_prime("postfix-1024")->value) ==
        "ef627d8cc44144f36a075d8dd8511bbd278cb5cf438f1052bdbdabe715232c1e");
  CHECK(sha256_hex(find_known_prime("nginx-1024")->value) ==
        "8ae47dca3d24e9b64640062686da234dcabada26b0da6f090c5449c1338d9a11");
  CHECK(sha256_hex(find_known_prime("exim-2048-rfc5114")->value) ==
        "bfe545862ca102ad1eeddb5fbfa5bf855ac4995c56a8b408ce3fe099dce93a9d");
}

TEST_CASE("1024-bit defaults are safe primes") {
  for (auto label : {"postfix-1024", "nginx-1024"}) {
    auto p = mpz_from_bytes(find_known_prime(label)->value);
    mpz_class q = (p - 1) / 2;
    CHECK(mpz_probab_prime_p(q.get_mpz_t(), 40) > 0);
  }
}

TEST_CASE("exim default equals the RFC 5114 group shipped with OpenSSL") {
  std::unique_ptr<DH, decltype(&DH_free)> dh(DH_get_2048_224(), DH_free);
  REQUIRE(dh);
  const BIGNUM *p = nullptr, *q = nullptr, *g = nullptr;
  DH_get0_pqg(dh.get(), &p, &q, &g);
  Bytes pb(static_cast<std::size_t>(BN_num_bytes(p)));
  BN_bn2bin(p, pb.data());
  CHECK(pb == find_known_prime("exim-2048-rfc5114")->value);
  Bytes qb(static_cast<std::size_t>(BN_num_bytes(q)));
  BN_bn2bin(q, qb.data());
  auto pm = mpz_from_bytes(pb), qm = mpz_from_bytes(qb);
  CHECK(mpz_sizeinbase(qm.get_mpz_t(), 2) == 224);
  CHECK((pm - 1) % qm == 0);
}

TEST_CASE("known prime lookup strips leading zeros") {
  auto v = find_known_prime("nginx-1024")->value;
  Bytes padded = v;
  padded.insert(padded.begin(), 0);
  CHECK(find_known_prime(padded) == find_known_prime("nginx-1024"));
  CHECK(find_known_prime(Bytes{7}) == nullptr);
  CHECK(find_known_prime("postfix-512") == nullptr);
}

TEST_CASE("DH buckets") {
  CHECK(dh_bits_bucket(512) == 512);
  CHECK(dh_bits_bucket(768) == 768);
  CHECK(dh_bits_bucket(1536) == 0);
  CHECK(dh_bits_bucket(4096) == 4096);
}

TEST_CASE("DH size table") {
  gmp_randclass rnd(gmp_randinit_default);
  rnd.seed(1);
  auto p512 = prime_bytes(rnd, 512);
  std::vector<HostScanRecord> recs;
  for (int i = 0; i < 4; ++i) recs.push_back(dh_record("10.0.0." + std::to_string(i), 25, id("EXP-EDH-RSA-DES-CBC-SHA"), p512));
  recs.push_back(dh_record("10.0.1.1", 25, id("DHE-RSA-AES128-SHA"), find_known_prime("exim-2048-rfc5114")->value));
  auto t = dh_group_size_table(recs, reg());
  CHECK(t.fraction(25, true, 512) == 1.0);
  CHECK(t.fraction(25, false, 2048) == 1.0);
  CHECK(t.ports.at(25).at(true).ips == 4);
}

TEST_CASE("DH size table matches a recount") {
  gmp_randclass rnd(gmp_randinit_default);
  rnd.seed(2);
  std::vector<Bytes> primes = {prime_bytes(rnd, 512), prime_bytes(rnd, 768), find_known_prime("postfix-1024")->value,
                               find_known_prime("exim-2048-rfc5114")->value, prime_bytes(rnd, 1000)};
  std::vector<SuiteId> suites = {id("EXP-EDH-RSA-DES-CBC-SHA"), id("DHE-RSA-AES128-SHA"), id("EDH-RSA-DES-CBC3-SHA")};
  std::vector<std::uint16_t> ports = {25, 110, 465};
  std::mt19937_64 rng(9);
  std::vector<HostScanRecord> recs;
  for (int i = 0; i < 1000; ++i)
    recs.push_back(dh_record("10.0." + std::to_string(rng() % 20) + "." + std::to_string(rng() % 20),
                             support::pick(rng, ports), support::pick(rng, suites), support::pick(rng, primes)));
  auto t = dh_group_size_table(recs, reg());
  for (auto port : ports)
    for (bool exp : {false, true}) {
      std::map<int, std::set<std::string>> by;
      std::set<std::string> all;
      for (const auto& r : recs) {
        if (r.endpoint.port != port) continue;
        if (reg().find(*r.outcomes[0].suite)->export_grade != exp) continue;
        int bits = r.outcomes[0].dh->prime_bits;
        int b = bits == 512 || bits == 768 || bits == 1024 || bits == 2048 || bits == 4096 ? bits : 0;
        by[b].insert(r.endpoint.ip);
        all.insert(r.endpoint.ip);
      }
      const auto& cell = t.ports.at(port).at(exp);
      CHECK(cell.ips == all.size());
      for (const auto& [b, s] : by) CHECK(cell.ips_by_bucket.at(b) == s.size());
    }
}

TEST_CASE("shared primes") {
  gmp_randclass rnd(gmp_randinit_default);
  rnd.seed(3);
  std::vector<HostScanRecord> recs;
  for (int i = 0; i < 10; ++i)
    recs.push_back(dh_record("10.1.0." + std::to_string(i), 25, id("DHE-RSA-AES128-SHA"),
                             find_known_prime("postfix-1024")->value));
  for (int i = 0; i < 5; ++i)
    recs.push_back(dh_record("10.2.0." + std::to_string(i), 25, id("DHE-RSA-AES128-SHA"), prime_bytes(rnd, 512)));
  auto rep = shared_prime_report(recs);
  REQUIRE(rep.primes.size() == 6);
  CHECK(rep.primes[0].label == "postfix-1024");
  CHECK(rep.primes[0].ip_count == 10);
  for (std::size_t i = 1; i < rep.primes.size(); ++i) {
    CHECK(rep.primes[i].ip_count == 1);
    CHECK_FALSE(rep.primes[i].label);
  }
  std::size_t sum = 0;
  for (const auto& p : rep.primes) sum += p.ip_count;
  CHECK(sum == rep.dh_ips);
}

TEST_CASE("one prime shared by 64 of 100 hosts") {
  gmp_randclass rnd(gmp_randinit_default);
  rnd.seed(4);
  auto common = prime_bytes(rnd, 512);
  std::vector<HostScanRecord> recs;
  for (int i = 0; i < 100; ++i)
    recs.push_back(dh_record("10.3.0." + std::to_string(i), 25, id("DHE-RSA-AES128-SHA"),
                             i < 64 ? common : prime_bytes(rnd, 512)));
  auto rep = shared_prime_report(recs);
  CHECK(static_cast<double>(rep.primes[0].ip_count) / static_cast<double>(rep.dh_ips) == 0.64);
  CHECK(rep.primes[0].bits == 512);
}

TEST_CASE("curve usage") {
  std::vector<HostScanRecord> recs;
  for (int i = 0; i < 3; ++i) recs.push_back(ec_record("10.0.0.1", 25, 24));
  recs.push_back(ec_record("10.0.0.2", 25, 25));
  auto t = curve_usage_table(recs);
  auto f = t.at(25).fractions();
  CHECK(f["secp384r1"] == 0.75);
  CHECK(f["secp521r1"] == 0.25);

  auto r = ec_record("10.0.0.3", 25, 23);
  r.outcomes[0].ecdh->kind = tls::CurveKind::Other;
  recs.push_back(r);
  CHECK(curve_usage_table(recs).at(25).counts.at("other") == 1);
}

TEST_CASE("curve usage matches a recount") {
  std::mt19937_64 rng(10);
  std::vector<HostScanRecord> recs;
  std::map<std::uint16_t, std::map<std::string, std::size_t>> expect;
  for (int i = 0; i < 10000; ++i) {
    std::uint16_t port = rng() % 2 ? 25 : 993;
    auto curve = static_cast<std::uint16_t>(1 + rng() % 28);
    recs.push_back(ec_record("10.0.0." + std::to_string(i % 250), port, curve));
    if (rng() % 5 == 0) recs.back().outcomes[0].status = ProbeStatus::Rejected;
    else ++expect[port][std::string(*tls::curve_name(curve))];
  }
  auto t = curve_usage_table(recs);
  for (const auto& [port, m] : expect) {
    CHECK(t.at(port).counts == m);
    std::size_t total = 0;
    for (const auto& [_, n] : m) total += n;
    CHECK(t.at(port).total == total);
  }
}

TEST_CASE("batch gcd on a planted pair") {
  mpz_class p = 1000003, q = 1000033, r = 1000037, s = 1000039;
  auto f = batch_gcd({p * q, p * r, s * 1000081});
  REQUIRE(f.size() == 2);
  for (const auto& w : f) {
    CHECK(w.shared_factor == p);
    CHECK(w.shared_factor * w.cofactor == w.modulus);
  }
  CHECK(batch_gcd({mpz_class(15), mpz_class(77), mpz_class(221)}).empty());
}

TEST_CASE("batch gcd falls back when a modulus shares both primes") {
  mpz_class p = 1000003, q = 1000033, r = 1000037, s = 1000039;
  auto f = batch_gcd({p * q, p * r, q * s});
  REQUIRE(f.size() == 3);
  for (const auto& w : f) {
    CHECK(w.shared_factor > 1);
    CHECK(w.shared_factor < w.modulus);
    CHECK(w.shared_factor * w.cofactor == w.modulus);
  }
}

TEST_CASE("batch gcd contract") {
  CHECK_THROWS_AS(batch_gcd({mpz_class(1), mpz_class(15)}), ContractViolation);
  CHECK_THROWS_AS(batch_gcd({mpz_class(15), mpz_class(15)}), ContractViolation);
  CHECK(batch_gcd({}).empty());
  auto d = dedupe_moduli({mpz_class(15), mpz_class(21), mpz_class(15)});
  CHECK(d.unique.size() == 2);
  CHECK(d.duplicates.at(mpz_hex(mpz_class(15))) == 2);
}

TEST_CASE("batch gcd agrees with pairwise gcd on random sets") {
  gmp_randclass rnd(gmp_randinit_default);
  rnd.seed(5);
  std::mt19937_64 rng(5);
  for (int round = 0; round < 6; ++round) {
    std::vector<mpz_class> pool;
    for (int i = 0; i < 60; ++i) pool.push_back(support::random_prime(rnd, 64));
    std::set<mpz_class> seen;
    std::vector<mpz_class> moduli;
    auto n = 20 + rng() % 280;
    while (moduli.size() < n) {
      auto a = support::pick(rng, pool), b = rng() % 3 ? support::random_prime(rnd, 64) : support::pick(rng, pool);
      if (a == b) continue;
      mpz_class m = a * b;
      if (seen.insert(m).second) moduli.push_back(m);
    }
    auto g = batch_gcd_values(moduli);
    CHECK(g == naive_gcds(moduli));
    auto findings = batch_gcd(moduli);
    std::set<mpz_class> flagged, expected;
    for (const auto& f : findings) {
      flagged.insert(f.modulus);
      CHECK(f.shared_factor > 1);
      CHECK(f.shared_factor < f.modulus);
      CHECK(f.shared_factor * f.cofactor == f.modulus);
    }
    auto ng = naive_gcds(moduli);
    for (std::size_t i = 0; i < moduli.size(); ++i)
      if (ng[i] > 1) expected.insert(moduli[i]);
    CHECK(flagged == expected);
  }
}

TEST_CASE("big integer byte conversions") {
  CHECK(mpz_to_bytes(mpz_class(0x0102)) == Bytes{1, 2});
  CHECK(mpz_from_bytes(Bytes{0, 0, 1, 2}) == 0x0102);
  CHECK(mpz_hex(mpz_class(255)) == "ff");
  CHECK(mpz_from_hex("0x10") == 16);
}

}  // TEST_SUITE
