// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "mailtls/cert_analysis.hpp"
#include "mailtls/cipher_islands.hpp"
#include "mailtls/crypto_params.hpp"
#include "mailtls/mock_testbed.hpp"
#include "mailtls/reports.hpp"
#include "mailtls/scan_io.hpp"
#include "mailtls/scanner.hpp"
#include "mailtls/tls_wire.hpp"
#include "support.hpp"

using namespace mailtls;
using namespace std::chrono_literals;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned limits.
constexpr std::size_t kPlanSize = 551;
constexpr std::size_t kPlanSplit[] = {7, 136, 136, 136, 136};
constexpr auto kPlanBudget = 1s;
constexpr std::size_t kPoliciesPerMode = 15;  // 7 modes x 15 = 105 policies
constexpr auto kRecoveryBudget = 10min;
constexpr auto kTaxonomyBudget = 5min;
constexpr int kRoundTrips = 10'000;
constexpr int kFuzzInputs = 100'000;
constexpr int kIslandPopulations = 50;
constexpr std::size_t kMaxIslandHosts = 1000;
constexpr auto kIslandsBudget = 2min;
constexpr std::size_t kGcdModuli = 10'000;
constexpr std::size_t kGcdPlantedPairs = 20;
constexpr std::size_t kGcdOracleSize = 2000;
constexpr auto kGcdBudget = 5min;
constexpr double kTargetsPerHourFloor = 12'000.0;

const Registry& reg() { return Registry::bundled(); }

int failures = 0;

void report(bool ok, std::string_view name, const std::string& detail) {
  std::printf("%s %.*s: %s\n", ok ? "PASS" : "FAIL", static_cast<int>(name.size()), name.data(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

template <class F>
void run(std::string_view name, F&& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(false, name, std::string("exception: ") + e.what());
  }
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

FarmOptions farm_opts(int octet, std::uint16_t base_port) {
  FarmOptions o;
  o.second_octet = octet;
  o.base_port = base_port;
  o.workers = 16;
  o.idle_timeout = 5000ms;
  return o;
}

ScanLimits loopback_limits() {
  ScanLimits l;
  l.connect_timeout = 2000ms;
  l.read_timeout = 1000ms;
  l.probe_timeout = 4000ms;
  l.max_concurrent_targets = 16;
  return l;
}

// ---------------------------------------------------------------------------

void plan_cardinality() {
  auto t0 = Clock::now();
  auto plan = default_probe_plan(reg());
  double secs = seconds_since(t0);
  std::map<ProtocolVersion, std::size_t> split;
  std::set<ProbeEntry> unique(plan.entries.begin(), plan.entries.end());
  for (const auto& e : plan.entries) ++split[e.version];
  bool ok = plan.entries.size() == kPlanSize && unique.size() == kPlanSize;
  std::string got;
  for (std::size_t i = 0; i < std::size(kAllVersions); ++i) {
    ok = ok && split[kAllVersions[i]] == kPlanSplit[i];
    got += fmt::format("{}{}", i ? "," : "", split[kAllVersions[i]]);
  }
  ok = ok && secs < std::chrono::duration<double>(kPlanBudget).count();
  report(ok, "probe-plan cardinality",
         fmt::format("{} entries ({} distinct), split {{{}}}, {:.3f}s", plan.entries.size(), unique.size(), got, secs));
}

void policy_recovery() {
  auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::vector<MockPolicy> policies;
  for (auto proto : kAllProtocols)
    for (std::size_t i = 0; i < kPoliciesPerMode; ++i)
      policies.push_back(support::random_policy(rng, reg(), proto, support::mock_chain()));
  MockFarm farm(policies, reg(), farm_opts(41, 22000));
  auto plan = default_probe_plan(reg());
  CollectingSink sink;
  auto summary = run_campaign(farm.endpoints(), plan, loopback_limits(), sink, reg());
  auto records = sink.take();
  std::map<std::pair<std::string, std::uint16_t>, const HostScanRecord*> by_ep;
  for (const auto& r : records) by_ep[{r.endpoint.ip, r.endpoint.port}] = &r;

  std::size_t set_mismatch = 0, pref_mismatch = 0, pref_checked = 0, missing = 0;
  for (std::size_t i = 0; i < policies.size(); ++i) {
    const auto& ep = farm.endpoints()[i];
    auto it = by_ep.find({ep.ip, ep.port});
    if (it == by_ep.end() || !it->second->valid) {
      ++missing;
      continue;
    }
    const auto& rec = *it->second;
    if (rec.accepted_pairs() != policies[i].accepted) ++set_mismatch;
    // Every SSLv3+ version with an accepted suite must have exactly one preference probe.
    std::set<ProtocolVersion> want_versions, seen_versions;
    for (const auto& e : policies[i].accepted)
      if (e.version != ProtocolVersion::SSLv2) want_versions.insert(e.version);
    for (const auto& o : rec.outcomes) {
      if (o.kind != ProbeKind::Preference) continue;
      ++pref_checked;
      seen_versions.insert(o.version);
      auto want = support::expected_preference(policies[i], o.version, plan.preference_sets.at(o.version));
      bool ok = want ? (o.status == ProbeStatus::Preferred && o.suite == want) : o.status == ProbeStatus::Rejected;
      if (!ok) ++pref_mismatch;
    }
    if (seen_versions != want_versions) ++pref_mismatch;
  }
  double secs = seconds_since(t0);
  bool ok = policies.size() >= 100 && missing == 0 && set_mismatch == 0 && pref_mismatch == 0 &&
            secs < std::chrono::duration<double>(kRecoveryBudget).count();
  report(ok, "policy recovery",
         fmt::format("{} policies over {} modes, {} invalid/missing, {} accepted-set mismatches, "
                     "{} preference mismatches over {} preference probes, {:.1f}s",
                     policies.size(), std::size(kAllProtocols), missing, set_mismatch, pref_mismatch, pref_checked,
                     secs));
  (void)summary;
}

void invalidity_taxonomy() {
  auto t0 = Clock::now();
  std::mt19937_64 rng(77);
  const std::vector<AppProtocol> starttls = {AppProtocol::SMTP, AppProtocol::Submission, AppProtocol::POP3,
                                             AppProtocol::IMAP};
  const std::vector<AppProtocol> ehlo_capable = {AppProtocol::SMTP, AppProtocol::Submission, AppProtocol::IMAP};
  const std::vector<AppProtocol> all(std::begin(kAllProtocols), std::end(kAllProtocols));

  enum Fault { None, Silent, Refuse, BannerReject, EhloReject, StartTlsReject };
  // Planted counts, 200 mocks in total.
  const std::vector<std::pair<Fault, std::size_t>> plant = {
      {Silent, 25}, {Refuse, 15}, {BannerReject, 20}, {EhloReject, 20}, {StartTlsReject, 30}, {None, 90}};
  std::vector<MockPolicy> policies;
  for (auto [fault, n] : plant)
    for (std::size_t i = 0; i < n; ++i) {
      AppProtocol proto;
      switch (fault) {
        case BannerReject:
        case StartTlsReject: proto = support::pick(rng, starttls); break;
        case EhloReject: proto = support::pick(rng, ehlo_capable); break;
        default: proto = support::pick(rng, all);
      }
      auto p = support::random_policy(rng, reg(), proto, support::mock_chain());
      switch (fault) {
        case Silent: p.banner = BannerBehavior::Silent; break;
        case Refuse: p.refuse = true; break;
        case BannerReject: p.banner = BannerBehavior::Reject; break;
        case EhloReject: p.ehlo = EhloBehavior::Reject; break;
        case StartTlsReject:
          p.starttls = support::coin(rng, 0.5) ? StartTlsBehavior::Reject : StartTlsBehavior::Strip;
          break;
        case None: break;
      }
      policies.push_back(std::move(p));
    }
  std::shuffle(policies.begin(), policies.end(), rng);
  MockFarm farm(policies, reg(), farm_opts(42, 22100));
  CollectingSink sink;
  auto s = run_campaign(farm.endpoints(), default_probe_plan(reg()), loopback_limits(), sink, reg());
  double secs = seconds_since(t0);

  std::map<InvalidReason, std::size_t> want = {{InvalidReason::Timeout, 25},
                                               {InvalidReason::ConnectionRejected, 15},
                                               {InvalidReason::EhloRejected, 40},
                                               {InvalidReason::StartTlsRejected, 30},
                                               {InvalidReason::NoHandshake, 0}};
  bool ok = s.total == 200 && s.valid == 90 && !s.aborted &&
            secs < std::chrono::duration<double>(kTaxonomyBudget).count();
  std::string got;
  for (auto r : kAllInvalidReasons) {
    auto n = s.invalid.contains(r) ? s.invalid.at(r) : 0;
    ok = ok && n == want.at(r);
    got += fmt::format(" {}={}/{}", to_string(r), n, want.at(r));
  }
  report(ok, "invalidity taxonomy",
         fmt::format("200 mocks, valid={}/90,{} (banner and EHLO rejects both count as ehloRejected), {:.1f}s",
                     s.valid, got, secs));
}

void wire_properties() {
  auto t0 = Clock::now();
  std::mt19937_64 rng(99);
  std::vector<SuiteId> tls_pool(default_tls_suites().begin(), default_tls_suites().end());
  std::vector<SuiteId> v2_pool(default_sslv2_suites().begin(), default_sslv2_suites().end());
  const std::vector<ProtocolVersion> versions = {ProtocolVersion::SSLv3, ProtocolVersion::TLSv1,
                                                 ProtocolVersion::TLSv1_1, ProtocolVersion::TLSv1_2};
  int rt_fail = 0;
  for (int i = 0; i < kRoundTrips; ++i) {
    try {
      bool v2 = i % 10 == 0;
      std::vector<SuiteId> suites;
      auto n = std::uniform_int_distribution<int>(1, v2 ? 7 : 200)(rng);
      for (int k = 0; k < n; ++k) suites.push_back(support::pick(rng, v2 ? v2_pool : tls_pool));
      Bytes b;
      Bytes rand_bytes;
      ProtocolVersion v = ProtocolVersion::SSLv2;
      if (v2) {
        tls::Challenge16 c;
        for (auto& x : c) x = static_cast<std::uint8_t>(rng());
        b = tls::build_sslv2_client_hello(suites, c);
        rand_bytes.assign(c.begin(), c.end());
      } else {
        v = support::pick(rng, versions);
        tls::Random32 r;
        for (auto& x : r) x = static_cast<std::uint8_t>(rng());
        b = tls::build_client_hello(v, suites, r);
        rand_bytes.assign(r.begin(), r.end());
      }
      auto size = tls::client_hello_frame_size(b);
      auto info = tls::parse_client_hello(b);
      bool ok = size == b.size() && info.sslv2_format == v2 && info.client_version == v && info.random == rand_bytes &&
                info.suites == suites;
      if (!ok) ++rt_fail;
    } catch (const std::exception&) {
      ++rt_fail;
    }
  }

  // Fuzz corpus: mutated valid flights of several shapes plus raw noise, fed
  // whole and in random chunks.
  auto v = ProtocolVersion::TLSv1;
  SuiteId dhe = reg().find_by_name("EDH-RSA-DES-CBC3-SHA")->id;
  SuiteId ecdhe = reg().find_by_name("ECDHE-RSA-AES128-SHA")->id;
  std::vector<SuiteId> offered = {dhe, ecdhe};
  tls::DhParameters dh{find_known_prime("postfix-1024")->value, Bytes{2}, Bytes(100, 0x33), 1024};
  tls::Random32 zero{};
  auto cat = [](std::initializer_list<Bytes> parts) {
    Bytes out;
    for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
  };
  std::vector<Bytes> seeds = {
      cat({tls::build_server_hello(v, dhe, zero), tls::build_certificate(v, support::mock_chain()),
           tls::build_dh_server_key_exchange(v, dh, true), tls::build_server_hello_done(v)}),
      cat({tls::build_server_hello(v, ecdhe, zero), tls::build_certificate(v, support::mock_chain()),
           tls::build_ecdh_server_key_exchange(v, 23, Bytes(65, 4), true), tls::build_server_hello_done(v)}),
      tls::build_alert(v, tls::AlertLevel::Fatal, 40),
      tls::build_sslv2_server_hello(v2_pool, support::mock_chain().at(0), Bytes(16, 7)),
  };
  int fuzz_fail = 0;
  std::size_t accepted = 0;
  for (int i = 0; i < kFuzzInputs; ++i) {
    Bytes b;
    if (i % 5 == 4) {
      b.resize(rng() % 2048);
      for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    } else {
      b = seeds[rng() % seeds.size()];
      auto flips = std::uniform_int_distribution<int>(1, 16)(rng);
      for (int k = 0; k < flips; ++k) b[rng() % b.size()] = static_cast<std::uint8_t>(rng());
      if (rng() % 4 == 0) b.resize(rng() % b.size());
    }
    auto offered_v = i % 7 == 0 ? ProtocolVersion::SSLv2 : v;
    std::vector<SuiteId> off = offered_v == ProtocolVersion::SSLv2 ? v2_pool : offered;
    try {
      auto r = tls::parse_server_flight(b, offered_v, off, reg());
      if (std::holds_alternative<tls::Accepted>(r)) ++accepted;
      tls::ServerFlightParser p(offered_v, off, reg());
      std::optional<tls::FlightResult> early;
      std::size_t pos = 0;
      while (pos < b.size() && !early) {
        auto n = std::min<std::size_t>(b.size() - pos, 1 + rng() % 300);
        early = p.feed(ByteView(b.data() + pos, n));
        pos += n;
      }
      auto r2 = early ? *early : p.finish();
      if (r2.index() != r.index()) ++fuzz_fail;
    } catch (const std::exception&) {
      ++fuzz_fail;
    }
  }
  double secs = seconds_since(t0);
  report(rt_fail == 0 && fuzz_fail == 0, "wire-codec properties",
         fmt::format("{} hello round trips ({} failures), {} fuzzed flights terminated ({} failures, {} still "
                     "accepted, chunked and whole feeds agree), {:.1f}s",
                     kRoundTrips, rt_fail, kFuzzInputs, fuzz_fail, accepted, secs));
}

// Independent pair enumeration for the islands oracle: walks every ordered
// host pair and intersects the two configs directly.
struct PairOracle {
  std::map<std::string, std::uint64_t> compat;
  std::map<std::string, std::uint64_t> attribution;
};

PairOracle enumerate_pairs(const std::vector<CipherConfig>& hosts, const std::map<SuiteId, std::size_t>& rank) {
  PairOracle out;
  for (const auto& a : hosts)
    for (const auto& b : hosts) {
      std::set<ProtocolVersion> vs;
      std::optional<std::pair<std::size_t, SuiteId>> best;
      for (const auto& e : a) {
        if (!b.contains(e)) continue;
        vs.insert(e.version);
        auto r = rank.at(e.suite);
        if (!best || r < best->first) best = {r, e.suite};
      }
      ++out.compat[support::join_versions(vs)];
      ++out.attribution[best ? best->second.to_hex() : "Plaintext"];
    }
  return out;
}

void islands_oracle() {
  auto t0 = Clock::now();
  std::mt19937_64 rng(4242);
  auto rc4 = drop_rc4_policy(reg());
  std::size_t mismatches = 0, max_hosts = 0;
  for (int pop = 0; pop < kIslandPopulations; ++pop) {
    auto hosts_n = std::uniform_int_distribution<std::size_t>(1, kMaxIslandHosts)(rng);
    if (pop == 0) hosts_n = kMaxIslandHosts;
    auto nodes = support::random_population(rng, reg(), hosts_n);
    auto hosts = support::expand_hosts(nodes);
    max_hosts = std::max(max_hosts, hosts.size());

    std::vector<SuiteId> ranking;
    for (const auto& e : reg().entries()) ranking.push_back(e.id);
    std::shuffle(ranking.begin(), ranking.end(), rng);
    std::map<SuiteId, std::size_t> rank;
    for (std::size_t i = 0; i < ranking.size(); ++i) rank[ranking[i]] = i;

    std::vector<SuiteId> allow(default_tls_suites().begin(), default_tls_suites().end());
    std::shuffle(allow.begin(), allow.end(), rng);
    allow.resize(40);
    std::set<SuiteId> allow_set(allow.begin(), allow.end());
    auto allow_pol = allowlist_policy(allow);

    auto base = enumerate_pairs(hosts, rank);
    auto rc4_hosts = support::filter_hosts(hosts, [&](const ProbeEntry& e) { return rc4(e); });
    auto allow_hosts = support::filter_hosts(hosts, [&](const ProbeEntry& e) { return allow_set.contains(e.suite); });
    auto n2 = static_cast<std::uint64_t>(hosts.size()) * hosts.size();

    auto c = compatibility_report(nodes);
    auto cr = compatibility_report(apply_policy(nodes, rc4));
    auto ca = compatibility_report(apply_policy(nodes, allow_pol));
    auto at = per_suite_attribution(nodes, ranking);
    if (c.counts != base.compat || c.denominator != n2) ++mismatches;
    if (cr.counts != enumerate_pairs(rc4_hosts, rank).compat || cr.denominator != n2) ++mismatches;
    if (ca.counts != enumerate_pairs(allow_hosts, rank).compat || ca.denominator != n2) ++mismatches;
    if (at.counts != base.attribution || at.denominator != n2) ++mismatches;
  }
  double secs = seconds_since(t0);
  report(mismatches == 0 && secs < std::chrono::duration<double>(kIslandsBudget).count(), "cipher-islands oracle",
         fmt::format("{} populations (largest {} hosts), {} mismatching distributions out of {}, {:.1f}s",
                     kIslandPopulations, max_hosts, mismatches, 4 * kIslandPopulations, secs));
}

void islands_shape() {
  auto id = [](std::string_view n) { return reg().find_by_name(n)->id; };
  std::mt19937_64 rng(8);
  const auto v10 = ProtocolVersion::TLSv1, v12 = ProtocolVersion::TLSv1_2;
  std::vector<SuiteId> rc4s;
  for (const auto& e : reg().entries())
    if (e.enc.starts_with("RC4") && !e.id.is_sslv2()) rc4s.push_back(e.id);
  std::vector<CipherConfigNode> nodes;
  for (int i = 0; i < 40; ++i) {
    CipherConfig cfg;
    bool with_rc4 = support::coin(rng, 0.6);
    if (with_rc4) {
      // RC4 hosts always keep a non-RC4 suite they share with every other RC4 host.
      cfg.insert({v10, id("AES128-SHA")});
      for (int k = 0; k < 3; ++k) cfg.insert({support::pick(rng, std::vector{v10, v12}), support::pick(rng, rc4s)});
    } else if (support::coin(rng, 0.5)) {
      cfg.insert({v12, id("DES-CBC3-SHA")});
    } else {
      cfg.insert({v12, id("AES256-SHA256")});
    }
    nodes.push_back({cfg, 1 + rng() % 5});
  }
  nodes = normalize_nodes(nodes);
  auto before = compatibility_report(nodes);
  auto after = compatibility_report(apply_policy(nodes, drop_rc4_policy(reg())));
  auto pt = std::string(kPlaintextBucket);
  bool rc4_ok = before.counts[pt] == after.counts[pt] && before.counts[pt] > 0 && before.denominator == after.denominator;

  std::vector<SuiteId> allow = bundled_allowlist(reg());
  std::set<SuiteId> allow_set(allow.begin(), allow.end());
  std::vector<SuiteId> others;
  for (auto s : default_tls_suites())
    if (!allow_set.contains(s)) others.push_back(s);
  std::vector<CipherConfigNode> disjoint;
  for (int i = 0; i < 60; ++i) {
    CipherConfig cfg;
    for (int k = 0; k < 5; ++k)
      cfg.insert({support::pick(rng, std::vector{ProtocolVersion::SSLv3, v10, ProtocolVersion::TLSv1_1, v12}),
                  support::pick(rng, others)});
    disjoint.push_back({cfg, 1 + rng() % 4});
  }
  disjoint = normalize_nodes(disjoint);
  auto d0 = compatibility_report(disjoint);
  auto d1 = compatibility_report(apply_policy(disjoint, allowlist_policy(allow)));
  bool allow_ok = d1.counts[pt] == d1.denominator && d1.probability(pt) == 1.0 && d0.counts[pt] < d0.denominator;

  report(rc4_ok && allow_ok, "islands shape",
         fmt::format("RC4 drop: Plaintext {}/{} before, {}/{} after; disjoint allowlist: Plaintext {} -> {}",
                     before.counts[pt], before.denominator, after.counts[pt], after.denominator,
                     percent_text(d0.counts[pt], d0.denominator), percent_text(d1.counts[pt], d1.denominator)));
}

void batch_gcd_check() {
  auto t0 = Clock::now();
  gmp_randclass rnd(gmp_randinit_mt);
  rnd.seed(31337);
  std::mt19937_64 rng(31337);
  std::vector<mpz_class> moduli;
  std::map<mpz_class, mpz_class> planted;  // modulus -> shared prime
  std::set<mpz_class> seen;
  auto add = [&](const mpz_class& m) {
    if (!seen.insert(m).second) return false;
    moduli.push_back(m);
    return true;
  };
  for (std::size_t i = 0; i < kGcdPlantedPairs; ++i) {
    auto p = support::random_prime(rnd, 256);
    mpz_class a = p * support::random_prime(rnd, 256), b = p * support::random_prime(rnd, 256);
    if (a == b || !add(a) || !add(b)) throw std::runtime_error("planted collision");
    planted[a] = p;
    planted[b] = p;
  }
  while (moduli.size() < kGcdModuli) {
    mpz_class m = support::random_prime(rnd, 256) * support::random_prime(rnd, 256);
    add(m);
  }
  std::shuffle(moduli.begin(), moduli.end(), rng);
  double gen_secs = seconds_since(t0);

  auto t1 = Clock::now();
  auto findings = batch_gcd(moduli);
  double gcd_secs = seconds_since(t1);
  std::size_t wrong = 0;
  std::set<mpz_class> flagged;
  for (const auto& f : findings) {
    flagged.insert(f.modulus);
    auto it = planted.find(f.modulus);
    if (it == planted.end() || f.shared_factor != it->second || f.shared_factor * f.cofactor != f.modulus) ++wrong;
  }
  bool full_ok = findings.size() == 2 * kGcdPlantedPairs && flagged.size() == findings.size() && wrong == 0;

  // Pairwise oracle on 2,000 inputs: 15 whole planted pairs, one half of each
  // remaining pair (which must not be flagged), the rest unplanted.
  std::vector<mpz_class> sub;
  std::map<mpz_class, std::vector<mpz_class>> by_prime;
  for (const auto& [m, p] : planted) by_prime[p].push_back(m);
  std::size_t pair_no = 0;
  for (const auto& [p, ms] : by_prime) {
    sub.push_back(ms[0]);
    if (pair_no++ < 15) sub.push_back(ms[1]);
  }
  const std::size_t expect_sub_flagged = 30;
  for (const auto& m : moduli)
    if (sub.size() < kGcdOracleSize && !planted.contains(m)) sub.push_back(m);
  std::shuffle(sub.begin(), sub.end(), rng);
  auto t2 = Clock::now();
  std::vector<mpz_class> naive(sub.size(), 1);
  for (std::size_t i = 0; i < sub.size(); ++i)
    for (std::size_t j = i + 1; j < sub.size(); ++j) {
      mpz_class g = gcd(sub[i], sub[j]);
      if (g != 1) {
        naive[i] = lcm(naive[i], g);
        naive[j] = lcm(naive[j], g);
      }
    }
  double naive_secs = seconds_since(t2);
  auto fast = batch_gcd_values(sub);
  std::size_t value_mismatch = 0, naive_flagged = 0;
  for (std::size_t i = 0; i < sub.size(); ++i) {
    if (fast[i] != naive[i]) ++value_mismatch;
    if (naive[i] != 1) ++naive_flagged;
  }
  auto sub_findings = batch_gcd(sub);
  bool sub_ok = value_mismatch == 0 && sub_findings.size() == naive_flagged && naive_flagged == expect_sub_flagged;
  double total = seconds_since(t0);
  report(full_ok && sub_ok && total < std::chrono::duration<double>(kGcdBudget).count(), "batch GCD",
         fmt::format("{} moduli of 512 bits: {} flagged ({} expected), {} with wrong factors, batch {:.1f}s; "
                     "pairwise oracle on {}: {} value mismatches, {} flagged both ways ({} planted); generation {:.1f}s, "
                     "oracle {:.1f}s",
                     moduli.size(), findings.size(), 2 * kGcdPlantedPairs, wrong, gcd_secs, sub.size(),
                     value_mismatch, naive_flagged, expect_sub_flagged, gen_secs, naive_secs));
}

void verdict_partition() {
  std::ifstream in(support::cert_dir() / "manifest.json");
  auto j = nlohmann::json::parse(in);
  auto at = parse_timestamp(j["validationTime"].get<std::string>());
  auto store = TrustStore::load_pem(support::cert_dir() / "truststore.pem");
  std::vector<HostScanRecord> records;
  std::vector<Verdict> want;
  std::map<Verdict, std::size_t> per_verdict;
  for (const auto& c : j["cases"]) {
    auto chain = read_pem_bundle(support::cert_dir() / "chains" / c["file"].get<std::string>());
    auto v = *parse_verdict(c["verdict"].get<std::string>());
    auto r = support::make_record(fmt::format("10.50.0.{}", records.size() + 1), 25,
                                  {{ProtocolVersion::TLSv1, reg().find_by_name("AES128-SHA")->id}});
    r.chains["c"] = chain;
    r.outcomes[0].chain_ref = "c";
    records.push_back(std::move(r));
    want.push_back(v);
    ++per_verdict[v];
  }
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (validate_chain(records[i].chains["c"], store, at) != want[i]) ++wrong;

  ReportInputs ri;
  ri.registry = &reg();
  ri.records = records;
  ri.have_records = true;
  ri.truststore = &store;
  ri.validation_time = at;
  auto t = build_report(ReportKind::Truststore, ri).at(0);
  std::uint64_t num_sum = 0, den = 0;
  for (const auto& row : t.rows) {
    num_sum += row.at(1).num;
    den = row.at(1).den;
  }
  bool covers_all = per_verdict.size() == std::size(kAllVerdicts);
  bool ok = records.size() == 50 && covers_all && wrong == 0 && den == 50 && num_sum == den;
  std::string dist;
  for (auto v : kAllVerdicts) dist += fmt::format(" {}={}", to_string(v), per_verdict[v]);
  report(ok, "certificate verdict partition",
         fmt::format("{} chains,{}; {} wrong verdicts; report fractions sum to {}/{}", records.size(), dist, wrong,
                     num_sum, den));
}

void known_prime_labels() {
  auto id = [](std::string_view n) { return reg().find_by_name(n)->id; };
  gmp_randclass rnd(gmp_randinit_mt);
  rnd.seed(5);
  auto unknown = mpz_to_bytes(support::random_prime(rnd, 1024));
  std::vector<std::pair<std::string, Bytes>> plan = {
      {"postfix-1024", find_known_prime("postfix-1024")->value},
      {"exim-2048-rfc5114", find_known_prime("exim-2048-rfc5114")->value},
      {"nginx-1024", find_known_prime("nginx-1024")->value},
      {"", unknown},
  };
  std::vector<MockPolicy> policies;
  std::map<std::string, std::size_t> want;
  const std::size_t copies[] = {4, 3, 2, 1};
  for (std::size_t k = 0; k < plan.size(); ++k)
    for (std::size_t c = 0; c < copies[k]; ++c) {
      MockPolicy p;
      p.protocol = kAllProtocols[(k + c) % std::size(kAllProtocols)];
      p.accepted = {{ProtocolVersion::TLSv1, id("DHE-RSA-AES128-SHA")}, {ProtocolVersion::TLSv1, id("AES128-SHA")}};
      p.preference_order = {id("DHE-RSA-AES128-SHA")};
      p.dh_prime = plan[k].second;
      p.cert_chain = support::mock_chain();
      policies.push_back(p);
      want[plan[k].first] = copies[k];
    }
  MockFarm farm(policies, reg(), farm_opts(43, 22200));
  ProbePlan probe;
  probe.entries = {{ProtocolVersion::TLSv1, id("DHE-RSA-AES128-SHA")}, {ProtocolVersion::TLSv1, id("AES128-SHA")}};
  probe.preference_sets[ProtocolVersion::TLSv1] = default_preference_candidates(reg());
  CollectingSink sink;
  run_campaign(farm.endpoints(), probe, loopback_limits(), sink, reg());
  auto rep = shared_prime_report(sink.take());

  std::map<std::string, std::size_t> got;
  std::size_t unlabeled_primes = 0;
  for (const auto& sp : rep.primes) {
    got[sp.label.value_or("")] += sp.ip_count;
    if (!sp.label) ++unlabeled_primes;
  }
  bool labels_ok = got == want && unlabeled_primes == 1 && rep.dh_ips == policies.size();

  const std::map<std::string, std::string> pinned = {
      {"postfix-1024", "ef627d8cc44144f36a075d8dd8511bbd278cb5cf438f1052bdbdabe715232c1e"},
      {"nginx-1024", "8ae47dca3d24e9b64640062686da234dcabada26b0da6f090c5449c1338d9a11"},
      {"exim-2048-rfc5114", "bfe545862ca102ad1eeddb5fbfa5bf855ac4995c56a8b408ce3fe099dce93a9d"},
  };
  std::size_t digest_ok = 0;
  for (const auto& [label, digest] : pinned) {
    const auto* k = find_known_prime(label);
    if (k && sha256_hex(k->value) == digest) ++digest_ok;
  }
  for (const auto& sp : rep.primes)
    if (sp.label && pinned.contains(*sp.label) && sp.digest != pinned.at(*sp.label)) --digest_ok;
  bool ok = labels_ok && digest_ok == pinned.size() && known_primes().size() == pinned.size();
  std::string dist;
  for (const auto& [label, n] : got) dist += fmt::format(" {}={}", label.empty() ? "unlabeled" : label, n);
  report(ok, "known-prime fingerprinting",
         fmt::format("{} DH mocks, labels:{}; {}/{} pinned digests match", policies.size(), dist, digest_ok,
                     pinned.size()));
}

void throughput() {
  std::mt19937_64 rng(12);
  std::vector<MockPolicy> policies;
  for (int i = 0; i < 56; ++i)
    policies.push_back(support::random_policy(rng, reg(), kAllProtocols[i % std::size(kAllProtocols)],
                                              support::mock_chain()));
  auto opts = farm_opts(44, 22300);
  opts.workers = 32;
  MockFarm farm(policies, reg(), opts);
  auto limits = loopback_limits();
  limits.inter_probe_delay = 0ms;
  auto plan = default_probe_plan(reg());
  CollectingSink sink;
  auto t0 = Clock::now();
  auto s = run_campaign(farm.endpoints(), plan, limits, sink, reg());
  double secs = seconds_since(t0);
  auto records = sink.take();
  std::size_t probes = 0;
  for (const auto& r : records) probes += r.outcomes.size();
  double per_hour = static_cast<double>(s.total) / secs * 3600.0;
  bool ok = s.valid == policies.size() && per_hour >= kTargetsPerHourFloor;
  report(ok, "throughput floor",
         fmt::format("{} full-plan targets ({} probes) in {:.2f}s = {:.0f} targets/hour (floor {:.0f}), {} valid",
                     s.total, probes, secs, per_hour, kTargetsPerHourFloor, s.valid));
}

}  // namespace

int main() {
  run("probe-plan cardinality", plan_cardinality);
  run("policy recovery", policy_recovery);
  run("invalidity taxonomy", invalidity_taxonomy);
  run("wire-codec properties", wire_properties);
  run("cipher-islands oracle", islands_oracle);
  run("islands shape", islands_shape);
  run("batch GCD", batch_gcd_check);
  run("certificate verdict partition", verdict_partition);
  run("known-prime fingerprinting", known_prime_labels);
  run("throughput floor", throughput);
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
