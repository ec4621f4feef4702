// Helpers shared by the unit and acceptance test binaries: fixture paths,
// random generators and brute-force oracles.
#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "mailtls/cert_analysis.hpp"
#include "mailtls/cipher_islands.hpp"
#include "mailtls/cipher_registry.hpp"
#include "mailtls/crypto_params.hpp"
#include "mailtls/mock_testbed.hpp"
#include "mailtls/scanner.hpp"

namespace support {

using namespace mailtls;

inline std::filesystem::path data_dir() { return MAILTLS_TEST_DATA; }
inline std::filesystem::path cert_dir() { return data_dir() / "certs"; }

inline std::vector<Bytes> mock_chain() { return read_pem_bundle(cert_dir() / "mock_chain.pem"); }

template <typename T>
const T& pick(std::mt19937_64& rng, const std::vector<T>& v) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

inline bool coin(std::mt19937_64& rng, double p) { return std::bernoulli_distribution(p)(rng); }

/// Random policy that the default plan can fully recover: accepted entries are
/// drawn from the default probe lists, DH/ECDH suites come with parameters and
/// every accepted suite appears in the preference order.
inline MockPolicy random_policy(std::mt19937_64& rng, const Registry& reg, AppProtocol protocol,
                                const std::vector<Bytes>& chain) {
  MockPolicy p;
  p.protocol = protocol;
  std::vector<SuiteId> tls(default_tls_suites().begin(), default_tls_suites().end());
  std::vector<SuiteId> v2(default_sslv2_suites().begin(), default_sslv2_suites().end());
  std::set<SuiteId> used;
  for (auto v : kAllVersions) {
    if (!coin(rng, v == ProtocolVersion::SSLv2 ? 0.3 : 0.6)) continue;
    const auto& pool = v == ProtocolVersion::SSLv2 ? v2 : tls;
    auto n = std::uniform_int_distribution<std::size_t>(1, std::min<std::size_t>(pool.size(), 12))(rng);
    for (std::size_t i = 0; i < n; ++i) {
      auto s = pick(rng, pool);
      p.accepted.insert({v, s});
      if (v != ProtocolVersion::SSLv2) used.insert(s);
    }
  }
  p.preference_order.assign(used.begin(), used.end());
  std::shuffle(p.preference_order.begin(), p.preference_order.end(), rng);
  p.cert_chain = chain;
  bool dh = false, ec = false;
  for (const auto& e : p.accepted) {
    if (const auto* i = reg.find(e.suite)) {
      dh = dh || i->uses_dh();
      ec = ec || i->uses_ecdh();
    }
  }
  if (dh) p.dh_prime = pick(rng, std::vector<Bytes>{known_primes()[0].value, known_primes()[1].value,
                                                    known_primes()[2].value});
  if (ec) {
    std::vector<std::uint16_t> ids;
    for (const auto& c : tls::named_curves()) ids.push_back(c.id);
    p.curve = pick(rng, ids);
  }
  p.auth_plain_pre_tls = coin(rng, 0.3);
  return p;
}

/// Expected preference-probe pick for `v`: first suite of the server order
/// that was offered and is accepted at v, else the first such offered suite.
inline std::optional<SuiteId> expected_preference(const MockPolicy& p, ProtocolVersion v,
                                                  const std::vector<SuiteId>& candidates) {
  auto ok = [&](SuiteId s) {
    return p.accepted.contains({v, s}) && std::find(candidates.begin(), candidates.end(), s) != candidates.end();
  };
  for (auto s : p.preference_order)
    if (ok(s)) return s;
  for (auto s : candidates)
    if (ok(s)) return s;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Cipher islands.

/// Random population with repeated configurations, over a small universe so
/// that compatible and incompatible pairs both occur.
inline std::vector<CipherConfigNode> random_population(std::mt19937_64& rng, const Registry& reg,
                                                       std::size_t hosts) {
  std::vector<SuiteId> universe;
  for (auto s : default_tls_suites()) universe.push_back(s);
  std::shuffle(universe.begin(), universe.end(), rng);
  universe.resize(24);
  // Keep a few RC4 suites in play so the RC4 policy has something to remove.
  for (const auto& e : reg.entries())
    if (e.enc.starts_with("RC4") && !e.id.is_sslv2() && universe.size() < 28) universe.push_back(e.id);

  std::vector<ProtocolVersion> versions = {ProtocolVersion::SSLv3, ProtocolVersion::TLSv1, ProtocolVersion::TLSv1_1,
                                           ProtocolVersion::TLSv1_2};
  auto distinct = std::uniform_int_distribution<std::size_t>(1, std::max<std::size_t>(1, hosts / 3))(rng);
  std::vector<CipherConfig> configs;
  for (std::size_t c = 0; c < distinct; ++c) {
    CipherConfig cfg;
    if (!coin(rng, 0.05)) {
      auto n = std::uniform_int_distribution<int>(1, 8)(rng);
      for (int i = 0; i < n; ++i) cfg.insert({pick(rng, versions), pick(rng, universe)});
    }
    configs.push_back(std::move(cfg));
  }
  std::vector<CipherConfigNode> nodes;
  for (std::size_t h = 0; h < hosts; ++h) nodes.push_back({pick(rng, configs), 1});
  return normalize_nodes(std::move(nodes));
}

/// One config per host, expanding node weights.
inline std::vector<CipherConfig> expand_hosts(const std::vector<CipherConfigNode>& nodes) {
  std::vector<CipherConfig> hosts;
  for (const auto& n : nodes)
    for (std::uint64_t i = 0; i < n.weight; ++i) hosts.push_back(n.config);
  return hosts;
}

inline std::string join_versions(const std::set<ProtocolVersion>& vs) {
  if (vs.empty()) return "Plaintext";
  std::string out;
  for (auto v : vs) out += (out.empty() ? "" : ", ") + std::string(to_string(v));
  return out;
}

/// Enumerates every ordered host pair (with i == j) and buckets it by the
/// versions at which the two hosts share at least one suite.
inline std::map<std::string, std::uint64_t> brute_compat(const std::vector<CipherConfig>& hosts) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& a : hosts)
    for (const auto& b : hosts) {
      std::set<ProtocolVersion> vs;
      for (const auto& e : a)
        if (b.contains(e)) vs.insert(e.version);
      ++out[join_versions(vs)];
    }
  return out;
}

/// Ordered pairs credited to the best-ranked suite both hosts accept at a
/// common version.
inline std::map<std::string, std::uint64_t> brute_attribution(const std::vector<CipherConfig>& hosts,
                                                              const std::vector<SuiteId>& ranking) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& a : hosts)
    for (const auto& b : hosts) {
      std::string label = "Plaintext";
      for (auto s : ranking) {
        bool shared = false;
        for (const auto& e : a)
          if (e.suite == s && b.contains(e)) shared = true;
        if (shared) {
          label = s.to_hex();
          break;
        }
      }
      ++out[label];
    }
  return out;
}

inline std::vector<CipherConfig> filter_hosts(const std::vector<CipherConfig>& hosts,
                                              const std::function<bool(const ProbeEntry&)>& keep) {
  std::vector<CipherConfig> out;
  for (const auto& h : hosts) {
    CipherConfig c;
    for (const auto& e : h)
      if (keep(e)) c.insert(e);
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic scan records.

inline HostScanRecord make_record(std::string ip, std::uint16_t port, const std::set<ProbeEntry>& accepted) {
  HostScanRecord r;
  r.endpoint = Endpoint::for_port(std::move(ip), port);
  r.valid = true;
  for (const auto& e : accepted) {
    ProbeOutcome o;
    o.version = e.version;
    o.suite = e.suite;
    o.status = ProbeStatus::Accepted;
    r.outcomes.push_back(o);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Number theory.

/// Random prime of exactly `bits` bits.
inline mpz_class random_prime(gmp_randclass& rnd, unsigned bits) {
  mpz_class p;
  do {
    p = rnd.get_z_bits(bits);
    mpz_setbit(p.get_mpz_t(), bits - 1);
    mpz_nextprime(p.get_mpz_t(), p.get_mpz_t());
  } while (mpz_sizeinbase(p.get_mpz_t(), 2) != bits);
  return p;
}

}  // namespace support
