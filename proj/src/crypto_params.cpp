#include "mailtls/crypto_params.hpp"

#include <algorithm>
#include <set>

namespace mailtls {

namespace {

KnownPrime make_prime(std::string label, std::string_view hex, std::string source) {
  KnownPrime k;
  k.label = std::move(label);
  k.value = from_hex(hex);
  k.bits = bit_length(k.value);
  k.source = std::move(source);
  return k;
}

// Postfix: dh1024_p in src/tls/tls_dh.c.
constexpr std::string_view kPostfix1024 =
    "b0feb4cfd45507e7cc88590d1726c50ca54a92238178da88aa4c1306bf5d2f9e"
    "bc96b851009d0c0d75adfd3bb17e714f3f91541444b830251cebdf729c4cf189"
    "0d683f948ea4fb768918b291169001"
    "99668c53814e273d99e75a7aafd5ece27efaed0118c2782559065c39f6cd4954"
    "afc1b1ea4af953d0df6dafd493e7baae9b";

// nginx: dh1024_p in src/event/ngx_event_openssl.c (releases before 1.11.0).
constexpr std::string_view kNginx1024 =
    "bbbc2dcad84674907c43fcf580e9cfdbd958a3f568b42d4b08eed4eb0fb3504c"
    "6c030276e710800c5ccbbaa8922614c5beeca565a5fdf1d287a2bc049be67780"
    "60e91a92a757e3048f68b076f7d36cc8f29ba5df81dc2ca725ece66270cc9a50"
    "35d8ceceef9ea0274a63ab1e58fafd4988d0f65d146757da071df045cfe16b9b";

// Exim default: RFC 5114 2048-bit MODP group with 224-bit prime order
// subgroup (std-crypto.c, "ike23").
constexpr std::string_view kExim2048 =
    "ad107e1e9123a9d0d660faa79559c51fa20d64e5683b9fd1b54b1597b61d0a75"
    "e6fa141df95a56dbaf9a3c407ba1df15eb3d688a309c180e1de6b85a1274a0a6"
    "6d3f8152ad6ac2129037c9edefda4df8d91e8fef55b7394b7ad5b7d0b6c12207"
    "c9f98d11ed34dbf6c6ba0b2c8bbc27be6a00e0a0b9c49708b3bf8a3170918836"
    "81286130bc8985db1602e714415d9330278273c7de31efdc7310f7121fd5a074"
    "15987d9adc0a486dcdf93acc44328387315d75e198c641a480cd86a1b9e587e8"
    "be60e69cc928b2b9c52172e413042e9b23f10b0e16e79763c9b53dcf4ba80a29"
    "e3fb73c16b8e75b97ef363e2ffa31f71cf9de5384e71b81c0ac4dffe0c10e64f";

const std::vector<KnownPrime>& table() {
  static const std::vector<KnownPrime> t = {
      make_prime("postfix-1024", kPostfix1024, "postfix src/tls/tls_dh.c dh1024_p"),
      make_prime("exim-2048-rfc5114", kExim2048, "exim std-crypto.c ike23 (RFC 5114 2048-bit MODP group, 224-bit subgroup)"),
      make_prime("nginx-1024", kNginx1024, "nginx src/event/ngx_event_openssl.c dh1024_p"),
  };
  return t;
}

std::string prime_digest(ByteView prime) { return sha256_hex(strip_leading_zeros(prime)); }

// Every positive handshake that carried DH parameters, with its record.
template <typename F>
void for_each_dh(std::span<const HostScanRecord> records, F&& f) {
  for (const auto& r : records)
    for (const auto& o : r.outcomes)
      if (o.positive() && o.dh) f(r, o);
}

}  // namespace

std::span<const KnownPrime> known_primes() { return table(); }

const KnownPrime* find_known_prime(ByteView prime) {
  auto p = strip_leading_zeros(prime);
  for (const auto& k : table())
    if (k.value == p) return &k;
  return nullptr;
}

const KnownPrime* find_known_prime(std::string_view label) {
  for (const auto& k : table())
    if (k.label == label) return &k;
  return nullptr;
}

int dh_bits_bucket(int bits) {
  switch (bits) {
    case 512:
    case 768:
    case 1024:
    case 2048:
    case 4096: return bits;
    default: return 0;
  }
}

double DhSizeTable::fraction(std::uint16_t port, bool export_class, int bucket) const {
  auto p = ports.find(port);
  if (p == ports.end()) return 0.0;
  auto c = p->second.find(export_class);
  if (c == p->second.end() || c->second.ips == 0) return 0.0;
  auto b = c->second.ips_by_bucket.find(bucket);
  if (b == c->second.ips_by_bucket.end()) return 0.0;
  return static_cast<double>(b->second) / static_cast<double>(c->second.ips);
}

DhSizeTable dh_group_size_table(std::span<const HostScanRecord> records, const Registry& registry) {
  std::map<std::uint16_t, std::map<bool, std::map<int, std::set<std::string>>>> buckets;
  std::map<std::uint16_t, std::map<bool, std::set<std::string>>> all;
  for_each_dh(records, [&](const HostScanRecord& r, const ProbeOutcome& o) {
    const auto* info = o.suite ? registry.find(*o.suite) : nullptr;
    bool exp = info && info->export_grade;
    auto port = r.endpoint.port;
    buckets[port][exp][dh_bits_bucket(o.dh->prime_bits)].insert(r.endpoint.ip);
    all[port][exp].insert(r.endpoint.ip);
  });
  DhSizeTable t;
  for (const auto& [port, classes] : all)
    for (const auto& [exp, ips] : classes) {
      auto& cell = t.ports[port][exp];
      cell.ips = ips.size();
      for (const auto& [b, set] : buckets[port][exp]) cell.ips_by_bucket[b] = set.size();
    }
  return t;
}

SharedPrimeReport shared_prime_report(std::span<const HostScanRecord> records, std::span<const KnownPrime> known) {
  std::map<std::string, std::set<std::string>> ips;
  std::map<std::string, Bytes> values;
  std::set<std::string> dh_ips;
  for_each_dh(records, [&](const HostScanRecord& r, const ProbeOutcome& o) {
    auto d = prime_digest(o.dh->prime);
    ips[d].insert(r.endpoint.ip);
    if (!values.contains(d)) values[d] = strip_leading_zeros(o.dh->prime);
    dh_ips.insert(r.endpoint.ip);
  });
  SharedPrimeReport rep;
  rep.dh_ips = dh_ips.size();
  for (const auto& [d, set] : ips) {
    SharedPrime s;
    s.digest = d;
    s.prime = values[d];
    s.bits = bit_length(s.prime);
    s.ip_count = set.size();
    for (const auto& k : known)
      if (k.value == s.prime) s.label = k.label;
    rep.primes.push_back(std::move(s));
  }
  std::stable_sort(rep.primes.begin(), rep.primes.end(), [](const SharedPrime& a, const SharedPrime& b) {
    return a.ip_count != b.ip_count ? a.ip_count > b.ip_count : a.digest < b.digest;
  });
  return rep;
}

std::map<std::string, double> CurveUsage::fractions() const {
  std::map<std::string, double> out;
  if (total == 0) return out;
  for (const auto& [c, n] : counts) out[c] = static_cast<double>(n) / static_cast<double>(total);
  return out;
}

std::map<std::uint16_t, CurveUsage> curve_usage_table(std::span<const HostScanRecord> records) {
  std::map<std::uint16_t, CurveUsage> out;
  for (const auto& r : records)
    for (const auto& o : r.outcomes) {
      if (!o.positive() || !o.ecdh) continue;
      auto& u = out[r.endpoint.port];
      std::string name = "other";
      if (o.ecdh->kind == tls::CurveKind::NamedCurve)
        if (auto n = tls::curve_name(o.ecdh->curve_id)) name = std::string(*n);
      ++u.counts[name];
      ++u.total;
    }
  return out;
}

mpz_class mpz_from_bytes(ByteView big_endian) {
  mpz_class v;
  if (!big_endian.empty()) mpz_import(v.get_mpz_t(), big_endian.size(), 1, 1, 1, 0, big_endian.data());
  return v;
}

Bytes mpz_to_bytes(const mpz_class& v) {
  if (v == 0) return Bytes{0};
  Bytes out((mpz_sizeinbase(v.get_mpz_t(), 2) + 7) / 8);
  std::size_t count = 0;
  mpz_export(out.data(), &count, 1, 1, 1, 0, v.get_mpz_t());
  out.resize(count);
  return out;
}

std::string mpz_hex(const mpz_class& v) { return v.get_str(16); }

mpz_class mpz_from_hex(std::string_view hex) {
  if (hex.starts_with("0x") || hex.starts_with("0X")) hex.remove_prefix(2);
  if (hex.empty()) throw ParseError("empty hex integer");
  mpz_class v;
  if (v.set_str(std::string(hex), 16) != 0) throw ParseError("bad hex integer '" + std::string(hex) + "'");
  return v;
}

std::vector<mpz_class> batch_gcd_values(const std::vector<mpz_class>& moduli) {
  const auto n = moduli.size();
  {
    std::set<mpz_class> seen;
    for (const auto& m : moduli) {
      if (m <= 1) throw ContractViolation("batch gcd moduli must be > 1");
      if (!seen.insert(m).second) throw ContractViolation("batch gcd input contains duplicate moduli");
    }
  }
  std::vector<mpz_class> g(n);
  if (n == 0) return g;
  if (n < 32) {
    mpz_class prod = 1;
    for (const auto& m : moduli) prod *= m;
    for (std::size_t i = 0; i < n; ++i) {
      mpz_class rest = prod / moduli[i];
      mpz_gcd(g[i].get_mpz_t(), moduli[i].get_mpz_t(), rest.get_mpz_t());
    }
    return g;
  }

  // Product tree, leaves first.
  std::vector<std::vector<mpz_class>> levels;
  levels.push_back(moduli);
  while (levels.back().size() > 1) {
    const auto& prev = levels.back();
    std::vector<mpz_class> next((prev.size() + 1) / 2);
    for (std::size_t i = 0; i < next.size(); ++i)
      next[i] = 2 * i + 1 < prev.size() ? prev[2 * i] * prev[2 * i + 1] : prev[2 * i];
    levels.push_back(std::move(next));
  }

  // Remainder tree: rem(node) = rem(parent) mod node^2.
  std::vector<mpz_class> rems = levels.back();
  for (std::size_t lvl = levels.size() - 1; lvl-- > 0;) {
    const auto& nodes = levels[lvl];
    std::vector<mpz_class> next(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      mpz_class sq = nodes[i] * nodes[i];
      mpz_mod(next[i].get_mpz_t(), rems[i / 2].get_mpz_t(), sq.get_mpz_t());
    }
    rems = std::move(next);
  }

  for (std::size_t i = 0; i < n; ++i) {
    mpz_class q = rems[i] / moduli[i];
    mpz_gcd(g[i].get_mpz_t(), q.get_mpz_t(), moduli[i].get_mpz_t());
  }
  return g;
}

std::vector<WeakKeyFinding> batch_gcd(const std::vector<mpz_class>& moduli) {
  auto g = batch_gcd_values(moduli);
  std::vector<std::size_t> flagged;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (g[i] > 1) flagged.push_back(i);
  std::vector<WeakKeyFinding> out;
  for (auto i : flagged) {
    mpz_class f = g[i];
    if (f == moduli[i]) {
      f = 0;
      for (auto j : flagged) {
        if (j == i) continue;
        mpz_class d;
        mpz_gcd(d.get_mpz_t(), moduli[i].get_mpz_t(), moduli[j].get_mpz_t());
        if (d > 1 && d < moduli[i]) {
          f = d;
          break;
        }
      }
      if (f == 0) continue;
    }
    WeakKeyFinding w;
    w.modulus = moduli[i];
    w.shared_factor = f;
    w.cofactor = moduli[i] / f;
    out.push_back(std::move(w));
  }
  return out;
}

DedupedModuli dedupe_moduli(const std::vector<mpz_class>& moduli) {
  DedupedModuli d;
  std::map<mpz_class, std::size_t> count;
  for (const auto& m : moduli)
    if (count[m]++ == 0) d.unique.push_back(m);
  for (const auto& [m, c] : count)
    if (c > 1) d.duplicates[mpz_hex(m)] = c;
  return d;
}

}  // namespace mailtls
