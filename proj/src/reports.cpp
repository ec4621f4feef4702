#include "mailtls/reports.hpp"

#include <algorithm>
#include <functional>

#include <fmt/format.h>
#include <json.hpp>

#include "mailtls/crypto_params.hpp"
#include "mailtls/protocol_drivers.hpp"

namespace mailtls {

namespace {

using Frac = std::pair<std::uint64_t, std::uint64_t>;
// Column filter: a port, or nullopt for all ports.
using PortSel = std::optional<std::uint16_t>;

constexpr std::pair<ReportKind, std::string_view> kKindNames[] = {
    {ReportKind::Summary, "summary"},
    {ReportKind::VersionSupport, "versionSupport"},
    {ReportKind::SuiteAcceptance, "suiteAcceptance"},
    {ReportKind::Preference, "preference"},
    {ReportKind::KeyExchange, "keyExchange"},
    {ReportKind::Encryption, "encryption"},
    {ReportKind::DhParams, "dhParams"},
    {ReportKind::Curves, "curves"},
    {ReportKind::Truststore, "truststore"},
    {ReportKind::KeySizes, "keySizes"},
    {ReportKind::CommonCerts, "commonCerts"},
    {ReportKind::SelfSignedSubjects, "selfSignedSubjects"},
    {ReportKind::Timeseries, "timeseries"},
    {ReportKind::AuthPlain, "authPlain"},
    {ReportKind::Islands, "islands"},
    {ReportKind::ExportViolation, "exportViolation"},
    {ReportKind::SharedPrimes, "sharedPrimes"},
};

const ExclusiveRow kExclusive[] = {
    {"only SSLv3", {ProtocolVersion::SSLv3}},
    {"only TLSv1", {ProtocolVersion::TLSv1}},
    {"only TLSv1.2", {ProtocolVersion::TLSv1_2}},
    {"only SSLv3&TLSv1", {ProtocolVersion::SSLv3, ProtocolVersion::TLSv1}},
    {"only TLSv1-1.2", {ProtocolVersion::TLSv1, ProtocolVersion::TLSv1_1, ProtocolVersion::TLSv1_2}},
    {"only SSLv3-TLSv1.2",
     {ProtocolVersion::SSLv3, ProtocolVersion::TLSv1, ProtocolVersion::TLSv1_1, ProtocolVersion::TLSv1_2}},
};

struct Columns {
  std::vector<PortSel> sels;
  std::vector<std::string> names;
};

Columns columns_for(const std::vector<const HostScanRecord*>& recs) {
  std::set<std::uint16_t> ports;
  for (const auto* r : recs) ports.insert(r->endpoint.port);
  Columns c;
  for (auto p : ports) {
    c.sels.emplace_back(p);
    c.names.push_back(std::to_string(p));
  }
  if (ports.size() != 1) {
    c.sels.emplace_back(std::nullopt);
    c.names.emplace_back("All");
  }
  return c;
}

bool in(const PortSel& sel, std::uint16_t port) { return !sel || *sel == port; }

Table make_table(std::string title, std::string first, const Columns& cols) {
  Table t;
  t.title = std::move(title);
  t.columns.push_back(std::move(first));
  t.columns.insert(t.columns.end(), cols.names.begin(), cols.names.end());
  return t;
}

void add_row(Table& t, std::string label, const Columns& cols, const std::function<Frac(const PortSel&)>& f) {
  std::vector<Cell> row{Cell::str(std::move(label))};
  for (const auto& s : cols.sels) {
    auto [n, d] = f(s);
    row.push_back(Cell::fraction(n, d));
  }
  t.rows.push_back(std::move(row));
}

void add_count_row(Table& t, std::string label, const Columns& cols,
                   const std::function<std::uint64_t(const PortSel&)>& f) {
  std::vector<Cell> row{Cell::str(std::move(label))};
  for (const auto& s : cols.sels) row.push_back(Cell::count(f(s)));
  t.rows.push_back(std::move(row));
}

// Fraction of records (restricted to `pop`) satisfying `pred`, per column.
Frac count_frac(const std::vector<const HostScanRecord*>& recs, const PortSel& sel,
                const std::function<bool(const HostScanRecord&)>& pop,
                const std::function<bool(const HostScanRecord&)>& pred) {
  std::uint64_t n = 0, d = 0;
  for (const auto* r : recs) {
    if (!in(sel, r->endpoint.port) || !pop(*r)) continue;
    ++d;
    if (pred(*r)) ++n;
  }
  return {n, d};
}

bool is_valid(const HostScanRecord& r) { return r.valid; }

std::set<const CipherSuiteInfo*> accepted_infos(const HostScanRecord& r, const Registry& reg) {
  std::set<const CipherSuiteInfo*> out;
  for (const auto& e : r.accepted_pairs())
    if (const auto* i = reg.find(e.suite)) out.insert(i);
  return out;
}

const Registry& need_registry(const ReportInputs& in) {
  if (!in.registry) throw UsageError("report needs a cipher suite registry");
  return *in.registry;
}

void need_records(const ReportInputs& in) {
  if (!in.have_records) throw UsageError("report needs --scan input");
}

Table summary(const std::vector<const HostScanRecord*>& recs) {
  auto cols = columns_for(recs);
  auto t = make_table("Overview of scan results", "Result", cols);
  auto all = [](const HostScanRecord&) { return true; };
  add_count_row(t, "Total scans", cols, [&](const PortSel& s) { return count_frac(recs, s, all, all).second; });
  add_row(t, "Valid results", cols, [&](const PortSel& s) { return count_frac(recs, s, all, is_valid); });
  add_row(t, "Invalid results", cols,
          [&](const PortSel& s) { return count_frac(recs, s, all, [](const HostScanRecord& r) { return !r.valid; }); });
  auto invalid = [](const HostScanRecord& r) { return !r.valid; };
  for (auto reason : kAllInvalidReasons) {
    add_row(t, fmt::format("  {}", to_string(reason)), cols, [&](const PortSel& s) {
      return count_frac(recs, s, invalid, [&](const HostScanRecord& r) { return r.invalid_reason == reason; });
    });
  }
  t.notes.emplace_back("invalid sub-rows are fractions of invalid results");
  return t;
}

Table version_support(const std::vector<const HostScanRecord*>& recs) {
  auto cols = columns_for(recs);
  auto t = make_table("Protocol version support", "Version", cols);
  for (auto v : kAllVersions)
    add_row(t, std::string(to_string(v)), cols, [&](const PortSel& s) {
      return count_frac(recs, s, is_valid, [&](const HostScanRecord& r) { return supported_versions(r).contains(v); });
    });
  for (const auto& ex : kExclusive)
    add_row(t, ex.label, cols, [&](const PortSel& s) {
      return count_frac(recs, s, is_valid, [&](const HostScanRecord& r) { return supported_versions(r) == ex.versions; });
    });
  return t;
}

Table suite_acceptance(const std::vector<const HostScanRecord*>& recs, const Registry& reg, std::size_t top_n) {
  auto cols = columns_for(recs);
  auto t = make_table("Cipher suite acceptance (any version)", "Cipher suite", cols);
  std::map<SuiteId, std::uint64_t> totals;
  for (const auto* r : recs) {
    if (!r->valid) continue;
    std::set<SuiteId> seen;
    for (const auto& e : r->accepted_pairs()) seen.insert(e.suite);
    for (auto s : seen) ++totals[s];
  }
  std::vector<std::pair<SuiteId, std::uint64_t>> order(totals.begin(), totals.end());
  std::stable_sort(order.begin(), order.end(), [](auto& a, auto& b) { return a.second > b.second; });
  if (order.size() > top_n) order.resize(top_n);
  for (const auto& [suite, _] : order) {
    const auto* info = reg.find(suite);
    add_row(t, info ? info->display_name() : suite.to_hex(), cols, [&](const PortSel& s) {
      return count_frac(recs, s, is_valid, [&](const HostScanRecord& r) {
        for (const auto& e : r.accepted_pairs())
          if (e.suite == suite) return true;
        return false;
      });
    });
  }
  return t;
}

// Preferred suite at the highest version probed for preference.
std::optional<SuiteId> preferred_suite(const HostScanRecord& r) {
  std::optional<std::pair<ProtocolVersion, SuiteId>> best;
  for (const auto& o : r.outcomes)
    if (o.kind == ProbeKind::Preference && o.status == ProbeStatus::Preferred && o.suite)
      if (!best || o.version > best->first) best = {o.version, *o.suite};
  if (!best) return std::nullopt;
  return best->second;
}

Table preference(const std::vector<const HostScanRecord*>& recs, const Registry& reg, std::size_t top_n) {
  auto cols = columns_for(recs);
  auto t = make_table("Preferred cipher suites (highest probed version)", "Cipher suite", cols);
  std::map<SuiteId, std::uint64_t> totals;
  for (const auto* r : recs)
    if (auto s = preferred_suite(*r)) ++totals[*s];
  std::vector<std::pair<SuiteId, std::uint64_t>> order(totals.begin(), totals.end());
  std::stable_sort(order.begin(), order.end(), [](auto& a, auto& b) { return a.second > b.second; });
  if (order.size() > top_n) order.resize(top_n);
  auto has_pref = [](const HostScanRecord& r) { return preferred_suite(r).has_value(); };
  for (const auto& [suite, _] : order) {
    const auto* info = reg.find(suite);
    add_row(t, info ? info->display_name() : suite.to_hex(), cols, [&](const PortSel& s) {
      return count_frac(recs, s, has_pref, [&](const HostScanRecord& r) { return preferred_suite(r) == suite; });
    });
  }
  return t;
}

Table key_exchange(const std::vector<const HostScanRecord*>& recs, const Registry& reg) {
  auto cols = columns_for(recs);
  auto t = make_table("Key exchange support", "Key exchange", cols);
  for (auto k : {KeyExchange::RSA, KeyExchange::DHE_RSA, KeyExchange::ECDHE_RSA, KeyExchange::ADH, KeyExchange::AECDH,
                 KeyExchange::Other}) {
    add_row(t, std::string(to_string(k)), cols, [&](const PortSel& s) {
      return count_frac(recs, s, is_valid, [&](const HostScanRecord& r) {
        for (const auto* i : accepted_infos(r, reg))
          if (i->kex == k && !i->export_grade) return true;
        return false;
      });
    });
  }
  add_row(t, "EXP-*", cols, [&](const PortSel& s) {
    return count_frac(recs, s, is_valid, [&](const HostScanRecord& r) {
      for (const auto* i : accepted_infos(r, reg))
        if (i->export_grade) return true;
      return false;
    });
  });
  add_row(t, "Only RSA", cols, [&](const PortSel& s) {
    return count_frac(recs, s, is_valid, [&](const HostScanRecord& r) {
      auto infos = accepted_infos(r, reg);
      return !infos.empty() &&
             std::all_of(infos.begin(), infos.end(), [](const CipherSuiteInfo* i) { return i->kex == KeyExchange::RSA; });
    });
  });
  return t;
}

Table encryption(const std::vector<const HostScanRecord*>& recs, const Registry& reg) {
  auto cols = columns_for(recs);
  auto t = make_table("Encryption algorithm support", "Encryption", cols);
  std::set<std::string> encs;
  for (const auto* r : recs)
    if (r->valid)
      for (const auto* i : accepted_infos(*r, reg)) encs.insert(i->enc);
  for (const auto& enc : encs)
    add_row(t, enc, cols, [&](const PortSel& s) {
      return count_frac(recs, s, is_valid, [&](const HostScanRecord& r) {
        for (const auto* i : accepted_infos(r, reg))
          if (i->enc == enc) return true;
        return false;
      });
    });
  auto only = [&](const std::string& label, std::function<bool(const CipherSuiteInfo&)> p) {
    add_row(t, label, cols, [&, p](const PortSel& s) {
      return count_frac(recs, s, is_valid, [&](const HostScanRecord& r) {
        auto infos = accepted_infos(r, reg);
        return !infos.empty() && std::all_of(infos.begin(), infos.end(), [&](const CipherSuiteInfo* i) { return p(*i); });
      });
    });
  };
  only("Only AES-CBC", [](const CipherSuiteInfo& i) { return i.enc.starts_with("AES") && i.enc.ends_with("CBC"); });
  only("Only RC4", [](const CipherSuiteInfo& i) { return i.enc.starts_with("RC4"); });
  return t;
}

std::string bucket_name(int b) { return b == 0 ? "other" : std::to_string(b); }

Table dh_params(const std::vector<HostScanRecord>& records, const std::vector<const HostScanRecord*>& recs,
                const Registry& reg) {
  auto cols = columns_for(recs);
  auto t = make_table("DH parameter size (distinct IPs)", "Class / prime bits", cols);
  auto table = dh_group_size_table(records, reg);
  // "All" column: recompute over the whole set with a single pseudo-port.
  std::vector<HostScanRecord> merged;
  bool need_all = std::any_of(cols.sels.begin(), cols.sels.end(), [](const PortSel& s) { return !s; });
  if (need_all) {
    merged = records;
    for (auto& r : merged) r.endpoint.port = 0;
  }
  auto all_table = need_all ? dh_group_size_table(merged, reg) : DhSizeTable{};
  for (bool exp : {true, false}) {
    for (int b : kDhBuckets) {
      add_row(t, fmt::format("{} {}", exp ? "export" : "non-export", bucket_name(b)), cols, [&](const PortSel& s) {
        const auto& tab = s ? table : all_table;
        std::uint16_t port = s ? *s : 0;
        auto p = tab.ports.find(port);
        if (p == tab.ports.end()) return Frac{0, 0};
        auto c = p->second.find(exp);
        if (c == p->second.end()) return Frac{0, 0};
        auto it = c->second.ips_by_bucket.find(b);
        return Frac{it == c->second.ips_by_bucket.end() ? 0 : it->second, c->second.ips};
      });
    }
  }
  return t;
}

Table curves(const std::vector<HostScanRecord>& records, const std::vector<const HostScanRecord*>& recs) {
  auto cols = columns_for(recs);
  auto t = make_table("Elliptic curves used (ECDH handshakes)", "Curve", cols);
  auto by_port = curve_usage_table(records);
  CurveUsage all;
  for (const auto& [_, u] : by_port) {
    for (const auto& [c, n] : u.counts) all.counts[c] += n;
    all.total += u.total;
  }
  for (const auto& [curve, _] : all.counts)
    add_row(t, curve, cols, [&](const PortSel& s) {
      const CurveUsage* u = &all;
      if (s) {
        auto it = by_port.find(*s);
        if (it == by_port.end()) return Frac{0, 0};
        u = &it->second;
      }
      auto c = u->counts.find(curve);
      return Frac{c == u->counts.end() ? 0 : c->second, u->total};
    });
  return t;
}

std::vector<HostLeaf> leaves_for(const ReportInputs& in, const std::vector<HostScanRecord>& records) {
  if (!in.truststore) throw UsageError("report needs --truststore");
  return collect_leaves(records, *in.truststore, in.validation_time);
}

Columns leaf_columns(const std::vector<HostLeaf>& leaves) {
  std::set<std::uint16_t> ports;
  for (const auto& l : leaves) ports.insert(l.port);
  Columns c;
  for (auto p : ports) {
    c.sels.emplace_back(p);
    c.names.push_back(std::to_string(p));
  }
  if (ports.size() != 1) {
    c.sels.emplace_back(std::nullopt);
    c.names.emplace_back("All");
  }
  return c;
}

Table truststore(const std::vector<HostLeaf>& leaves) {
  auto cols = leaf_columns(leaves);
  auto t = make_table("Truststore validation results", "Verdict", cols);
  for (auto v : kAllVerdicts)
    add_row(t, std::string(to_string(v)), cols, [&](const PortSel& s) {
      Frac f{0, 0};
      for (const auto& l : leaves) {
        if (!in(s, l.port)) continue;
        ++f.second;
        if (l.verdict == v) ++f.first;
      }
      return f;
    });
  return t;
}

Table key_sizes(const std::vector<HostLeaf>& leaves) {
  Table t;
  t.title = "RSA public key size";
  t.columns = {"Population"};
  for (int b : kKeyBuckets) t.columns.push_back(bucket_name(b));
  t.columns.emplace_back("non-RSA");
  for (auto [pop, label] : {std::pair{KeyPopulation::All, "All Certificates"},
                            std::pair{KeyPopulation::TrustedLeaves, "Trusted Leaf Certificates (OK)"},
                            std::pair{KeyPopulation::SelfSigned, "Self Signed Certificates"}}) {
    auto h = key_size_histogram(leaves, pop);
    std::vector<Cell> row{Cell::str(label)};
    for (int b : kKeyBuckets) {
      auto it = h.counts.find(b);
      row.push_back(Cell::fraction(it == h.counts.end() ? 0 : it->second, h.rsa_total));
    }
    row.push_back(Cell::count(h.non_rsa));
    t.rows.push_back(std::move(row));
  }
  return t;
}

Table common_certs(const std::vector<HostLeaf>& leaves, std::size_t top_n) {
  auto clusters = common_certificate_clusters(leaves);
  std::set<std::uint16_t> ports;
  for (const auto& l : leaves) ports.insert(l.port);
  Table t;
  t.title = "Common leaf certificates (distinct IPs)";
  t.columns = {"SHA-1", "Subject CN", "Issuer CN"};
  for (auto p : ports) t.columns.push_back(std::to_string(p));
  t.columns.emplace_back("Total");
  for (std::size_t i = 0; i < clusters.size() && i < top_n; ++i) {
    const auto& c = clusters[i];
    std::vector<Cell> row{Cell::str(c.fingerprint), Cell::str(c.subject_cn), Cell::str(c.issuer_cn)};
    for (auto p : ports) {
      auto it = c.per_port_ips.find(p);
      row.push_back(Cell::count(it == c.per_port_ips.end() ? 0 : it->second));
    }
    row.push_back(Cell::count(c.total()));
    t.rows.push_back(std::move(row));
  }
  return t;
}

Table self_signed(const std::vector<HostLeaf>& leaves, std::size_t top_n) {
  auto clusters = self_signed_subject_clusters(leaves);
  Table t;
  t.title = "Top self-signed certificate subjects";
  t.columns = {"CN", "OU", "O", "Key bits", "Certificates", "IPs"};
  for (std::size_t i = 0; i < clusters.size() && i < top_n; ++i) {
    const auto& c = clusters[i];
    t.rows.push_back({Cell::str(c.subject.cn), Cell::str(c.subject.ou), Cell::str(c.subject.o),
                      Cell::count(static_cast<std::uint64_t>(c.key_bits_mode)), Cell::count(c.distinct_certs),
                      Cell::count(c.ip_count)});
  }
  return t;
}

std::vector<Table> timeseries(const ReportInputs& in) {
  if (in.snapshots.empty()) throw UsageError("timeseries report needs --snapshot DATE=PATH inputs");
  auto series = key_size_time_series(in.snapshots);
  std::vector<Table> out;
  for (const auto& [port, cols] : series.by_port) {
    if (!in.ports.empty() && !in.ports.contains(port)) continue;
    Table t;
    t.title = fmt::format("Leaf RSA key sizes over time, port {}", port);
    t.columns = {"Date"};
    for (int b : kKeyBuckets) t.columns.push_back(bucket_name(b));
    for (std::size_t i = 0; i < series.dates.size(); ++i) {
      std::vector<Cell> row{Cell::str(series.dates[i])};
      for (int b : kKeyBuckets) {
        auto it = cols[i].find(b);
        row.push_back(Cell::count(it == cols[i].end() ? 0 : it->second));
      }
      t.rows.push_back(std::move(row));
    }
    out.push_back(std::move(t));
  }
  return out;
}

Table auth_plain(const std::vector<const HostScanRecord*>& recs) {
  auto cols = columns_for(recs);
  auto t = make_table("Hosts that offer AUTH PLAIN before TLS", "Class", cols);
  auto has_caps = [](const HostScanRecord& r) { return r.capabilities.has_value(); };
  for (auto e : {AuthExposure::NoStartTls, AuthExposure::StartTlsButPreTlsAuth, AuthExposure::Safe})
    add_row(t, std::string(to_string(e)), cols, [&](const PortSel& s) {
      return count_frac(recs, s, has_caps, [&](const HostScanRecord& r) {
        return detect_plaintext_auth_exposure(*r.capabilities) == e;
      });
    });
  t.notes.emplace_back("population: STARTTLS endpoints whose plaintext dialogue completed");
  return t;
}

Table distribution_table(std::string title, const PairDistribution& d, const Registry* reg, bool suite_labels) {
  Table t;
  t.title = std::move(title);
  t.columns = {"Bucket", "Probability", "Pairs"};
  std::vector<std::pair<std::string, std::uint64_t>> rows(d.counts.begin(), d.counts.end());
  std::stable_sort(rows.begin(), rows.end(), [](auto& a, auto& b) { return a.second > b.second; });
  std::uint64_t other = 0;
  for (const auto& [label, c] : rows) {
    if (c * 100 < d.denominator && label != kPlaintextBucket) {
      other += c;
      continue;
    }
    std::string name = label;
    if (suite_labels && reg && label != kPlaintextBucket)
      if (const auto* i = reg->find(SuiteId::from_hex(label))) name = i->name;
    t.rows.push_back({Cell::str(name), Cell::fraction(c, d.denominator), Cell::count(c)});
  }
  if (other > 0) t.rows.push_back({Cell::str("other (<1% each)"), Cell::fraction(other, d.denominator), Cell::count(other)});
  t.notes.push_back(fmt::format("ordered host pairs with replacement; total weight {}", d.total_weight));
  return t;
}

std::vector<Table> islands(const std::vector<HostScanRecord>& records, const ReportInputs& in) {
  const auto& reg = need_registry(in);
  auto nodes = build_graph(records);
  std::vector<Table> out;
  if (nodes.empty()) throw UsageError("islands report needs at least one valid record");
  out.push_back(distribution_table("Cipher islands: TLS versions of compatible pairs", compatibility_report(nodes),
                                   &reg, false));
  if (in.drop_rc4) {
    auto n = apply_policy(nodes, drop_rc4_policy(reg));
    out.push_back(distribution_table("Cipher islands after removing RC4", compatibility_report(n), &reg, false));
  }
  if (in.allowlist) {
    auto n = apply_policy(nodes, allowlist_policy(*in.allowlist));
    out.push_back(distribution_table("Cipher islands under the allowlist", compatibility_report(n), &reg, false));
    auto ranking = in.ranking ? *in.ranking : *in.allowlist;
    out.push_back(distribution_table("Allowlist: negotiated suite per pair", per_suite_attribution(n, ranking), &reg, true));
  } else if (in.ranking) {
    out.push_back(distribution_table("Negotiated suite per pair", per_suite_attribution(nodes, *in.ranking), &reg, true));
  }
  return out;
}

Table export_violation(const std::vector<HostScanRecord>& records, const Registry& reg) {
  Table t;
  t.title = "Export-grade suites accepted at TLSv1.1/TLSv1.2";
  t.columns = {"IP", "Port", "Version", "Cipher suite"};
  for (const auto& v : export_violations(records, reg)) {
    const auto* i = reg.find(v.suite);
    t.rows.push_back({Cell::str(v.ip), Cell::count(v.port), Cell::str(std::string(to_string(v.version))),
                      Cell::str(i ? i->display_name() : v.suite.to_hex())});
  }
  std::set<std::pair<std::string, std::uint16_t>> hosts;
  for (const auto& v : export_violations(records, reg)) hosts.insert({v.ip, v.port});
  t.notes.push_back(fmt::format("{} host/port targets flagged", hosts.size()));
  return t;
}

Table shared_primes(const std::vector<HostScanRecord>& records, std::size_t top_n) {
  auto rep = shared_prime_report(records);
  Table t;
  t.title = "Most common DH primes (distinct IPs)";
  t.columns = {"SHA-256", "Bits", "Label", "IPs", "Fraction"};
  for (std::size_t i = 0; i < rep.primes.size() && i < top_n; ++i) {
    const auto& p = rep.primes[i];
    t.rows.push_back({Cell::str(p.digest), Cell::count(static_cast<std::uint64_t>(p.bits)),
                      Cell::str(p.label.value_or("")), Cell::count(p.ip_count), Cell::fraction(p.ip_count, rep.dh_ips)});
  }
  t.notes.push_back(fmt::format("{} distinct IPs with DH handshakes", rep.dh_ips));
  return t;
}

std::string cell_text(const Cell& c) {
  switch (c.kind) {
    case Cell::Kind::Text: return c.text;
    case Cell::Kind::Count: return std::to_string(c.num);
    case Cell::Kind::Fraction: return c.den == 0 ? "-" : percent_text(c.num, c.den);
  }
  return {};
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::string render_text(const std::vector<Table>& tables) {
  std::string out;
  for (const auto& t : tables) {
    std::vector<std::vector<std::string>> grid{t.columns};
    for (const auto& r : t.rows) {
      std::vector<std::string> line;
      for (const auto& c : r) line.push_back(cell_text(c));
      grid.push_back(std::move(line));
    }
    std::vector<std::size_t> width(t.columns.size(), 0);
    for (const auto& line : grid)
      for (std::size_t i = 0; i < line.size() && i < width.size(); ++i) width[i] = std::max(width[i], line[i].size());
    out += t.title + "\n";
    for (std::size_t li = 0; li < grid.size(); ++li) {
      std::string row;
      for (std::size_t i = 0; i < grid[li].size() && i < width.size(); ++i) {
        if (i > 0) row += "  ";
        if (i == 0)
          row += fmt::format("{:<{}}", grid[li][i], width[i]);
        else
          row += fmt::format("{:>{}}", grid[li][i], width[i]);
      }
      while (!row.empty() && row.back() == ' ') row.pop_back();
      out += row + "\n";
      if (li == 0) {
        std::size_t total = 0;
        for (auto w : width) total += w;
        out += std::string(total + 2 * (width.size() - 1), '-') + "\n";
      }
    }
    for (const auto& n : t.notes) out += "note: " + n + "\n";
    out += "\n";
  }
  return out;
}

std::string render_csv(const std::vector<Table>& tables, std::string_view kind) {
  std::string out = fmt::format("format,{},version,{},kind,{}\r\n", kReportFormat, kReportFormatVersion, kind);
  for (const auto& t : tables) {
    out += "\r\n" + csv_escape("# " + t.title) + "\r\n";
    for (std::size_t i = 0; i < t.columns.size(); ++i) out += (i ? "," : "") + csv_escape(t.columns[i]);
    out += "\r\n";
    for (const auto& r : t.rows) {
      for (std::size_t i = 0; i < r.size(); ++i) {
        if (i) out += ",";
        const auto& c = r[i];
        switch (c.kind) {
          case Cell::Kind::Text: out += csv_escape(c.text); break;
          case Cell::Kind::Count: out += std::to_string(c.num); break;
          case Cell::Kind::Fraction: out += c.den == 0 ? "" : fmt::format("{}", c.value()); break;
        }
      }
      out += "\r\n";
    }
  }
  return out;
}

std::string render_json(const std::vector<Table>& tables, std::string_view kind) {
  using nlohmann::ordered_json;
  ordered_json doc;
  doc["format"] = kReportFormat;
  doc["version"] = kReportFormatVersion;
  doc["kind"] = kind;
  doc["tables"] = ordered_json::array();
  for (const auto& t : tables) {
    ordered_json jt;
    jt["title"] = t.title;
    jt["columns"] = t.columns;
    jt["rows"] = ordered_json::array();
    for (const auto& r : t.rows) {
      ordered_json row = ordered_json::array();
      for (const auto& c : r) {
        switch (c.kind) {
          case Cell::Kind::Text: row.push_back(c.text); break;
          case Cell::Kind::Count: row.push_back(c.num); break;
          case Cell::Kind::Fraction:
            row.push_back(ordered_json{{"numerator", c.num}, {"denominator", c.den}, {"value", c.value()}});
            break;
        }
      }
      jt["rows"].push_back(std::move(row));
    }
    jt["notes"] = t.notes;
    doc["tables"].push_back(std::move(jt));
  }
  return doc.dump(2) + "\n";
}

}  // namespace

std::string_view to_string(ReportKind k) {
  for (const auto& [kind, name] : kKindNames)
    if (kind == k) return name;
  return "?";
}

std::optional<ReportKind> parse_report_kind(std::string_view s) {
  for (const auto& [kind, name] : kKindNames)
    if (name == s) return kind;
  return std::nullopt;
}

std::vector<std::string_view> report_kind_names() {
  std::vector<std::string_view> out;
  for (const auto& [_, name] : kKindNames) out.push_back(name);
  return out;
}

std::optional<OutputFormat> parse_output_format(std::string_view s) {
  if (s == "text") return OutputFormat::Text;
  if (s == "json") return OutputFormat::Json;
  if (s == "csv") return OutputFormat::Csv;
  return std::nullopt;
}

std::span<const ExclusiveRow> exclusive_version_rows() { return kExclusive; }

std::set<ProtocolVersion> supported_versions(const HostScanRecord& record) {
  std::set<ProtocolVersion> out;
  for (const auto& e : record.accepted_pairs()) out.insert(e.version);
  return out;
}

std::string percent_text(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return "-";
  // Round half up on exact integers: hundredths of a percent.
  auto scaled = (static_cast<unsigned __int128>(num) * 20000 + den) / (2 * static_cast<unsigned __int128>(den));
  auto v = static_cast<std::uint64_t>(scaled);
  return fmt::format("{}.{:02}%", v / 100, v % 100);
}

std::vector<ExportViolation> export_violations(std::span<const HostScanRecord> records, const Registry& registry) {
  std::vector<ExportViolation> out;
  for (const auto& r : records)
    for (const auto& e : r.accepted_pairs()) {
      if (e.version != ProtocolVersion::TLSv1_1 && e.version != ProtocolVersion::TLSv1_2) continue;
      const auto* info = registry.find(e.suite);
      if (info && info->export_grade) out.push_back({r.endpoint.ip, r.endpoint.port, e.version, e.suite});
    }
  return out;
}

std::vector<Table> build_report(ReportKind kind, const ReportInputs& in) {
  std::vector<HostScanRecord> records;
  if (kind != ReportKind::Timeseries) {
    need_records(in);
    for (const auto& r : in.records)
      if (in.ports.empty() || in.ports.contains(r.endpoint.port)) records.push_back(r);
  }
  std::vector<const HostScanRecord*> recs;
  for (const auto& r : records) recs.push_back(&r);

  switch (kind) {
    case ReportKind::Summary: return {summary(recs)};
    case ReportKind::VersionSupport: return {version_support(recs)};
    case ReportKind::SuiteAcceptance: return {suite_acceptance(recs, need_registry(in), in.top_n)};
    case ReportKind::Preference: return {preference(recs, need_registry(in), in.top_n)};
    case ReportKind::KeyExchange: return {key_exchange(recs, need_registry(in))};
    case ReportKind::Encryption: return {encryption(recs, need_registry(in))};
    case ReportKind::DhParams: return {dh_params(records, recs, need_registry(in))};
    case ReportKind::Curves: return {curves(records, recs)};
    case ReportKind::Truststore: return {truststore(leaves_for(in, records))};
    case ReportKind::KeySizes: return {key_sizes(leaves_for(in, records))};
    case ReportKind::CommonCerts: return {common_certs(leaves_for(in, records), in.top_n)};
    case ReportKind::SelfSignedSubjects: return {self_signed(leaves_for(in, records), in.top_n)};
    case ReportKind::Timeseries: return timeseries(in);
    case ReportKind::AuthPlain: return {auth_plain(recs)};
    case ReportKind::Islands: return islands(records, in);
    case ReportKind::ExportViolation: return {export_violation(records, need_registry(in))};
    case ReportKind::SharedPrimes: return {shared_primes(records, in.top_n)};
  }
  return {};
}

std::string render(const std::vector<Table>& tables, OutputFormat format, std::string_view kind) {
  switch (format) {
    case OutputFormat::Text: return render_text(tables);
    case OutputFormat::Json: return render_json(tables, kind);
    case OutputFormat::Csv: return render_csv(tables, kind);
  }
  return {};
}

}  // namespace mailtls
