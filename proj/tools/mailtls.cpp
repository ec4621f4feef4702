// Command-line front end. Exit codes: 0 ok, 1 usage, 2 input parse, 3 runtime.
#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "mailtls/cert_analysis.hpp"
#include "mailtls/cipher_islands.hpp"
#include "mailtls/crypto_params.hpp"
#include "mailtls/errors.hpp"
#include "mailtls/mock_testbed.hpp"
#include "mailtls/reports.hpp"
#include "mailtls/scan_io.hpp"
#include "mailtls/scanner.hpp"

using namespace mailtls;
namespace fs = std::filesystem;

namespace {

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

constexpr int kExitUsage = 1;
constexpr int kExitParse = 2;
constexpr int kExitRuntime = 3;

struct Common {
  std::string registry_path;
  const Registry* registry = nullptr;
  Registry owned;

  void load() {
    if (registry_path.empty()) {
      registry = &Registry::bundled();
    } else {
      owned = Registry::load(registry_path);
      registry = &owned;
    }
  }
};

// Output file or stdout for "-".
class Output {
 public:
  explicit Output(const std::string& path) {
    if (path.empty() || path == "-") return;
    file_.open(path, std::ios::binary | std::ios::trunc);
    if (!file_) throw std::runtime_error("cannot open " + path + " for writing");
  }
  std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }
  void finish() {
    stream().flush();
    if (!stream()) throw std::runtime_error("write failed");
  }

 private:
  std::ofstream file_;
};

std::vector<HostScanRecord> load_scan(const std::string& path) {
  auto file = read_scan_file(path);
  if (file.partial) std::cerr << "warning: " << path << " is marked partial (campaign aborted)\n";
  return std::move(file.records);
}

std::vector<Snapshot> load_snapshots(const std::vector<std::string>& specs) {
  std::vector<Snapshot> out;
  for (const auto& s : specs) {
    auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--snapshot expects DATE=PATH, got " + s);
    std::string date = s.substr(0, eq);
    fs::path path = s.substr(eq + 1);
    if (fs::is_directory(path)) {
      out.push_back(load_pem_snapshot(date, path));
    } else {
      auto records = load_scan(path.string());
      out.push_back(snapshot_from_records(date, records));
    }
  }
  return out;
}

std::vector<SuiteId> load_suite_list(const std::string& source, const Registry& reg) {
  if (source == "builtin") return bundled_allowlist(reg);
  return parse_suite_list(read_file(source), reg);
}

nlohmann::ordered_json distribution_json(const PairDistribution& d, const Registry& reg, bool suite_labels) {
  nlohmann::ordered_json j;
  j["totalWeight"] = d.total_weight;
  j["denominator"] = d.denominator;
  auto buckets = nlohmann::ordered_json::object();
  for (const auto& [label, n] : d.counts) {
    nlohmann::ordered_json b{{"numerator", n}, {"denominator", d.denominator}, {"probability", d.probability(label)}};
    if (suite_labels && label != kPlaintextBucket)
      if (const auto* info = reg.find(SuiteId::from_hex(label))) b["name"] = info->name;
    buckets[label] = std::move(b);
  }
  j["buckets"] = std::move(buckets);
  return j;
}

void add_format_option(CLI::App* sub, std::string& format) {
  sub->add_option("--format", format, "Output format: text, json or csv")
      ->check(CLI::IsMember({"text", "json", "csv"}))
      ->capture_default_str();
}

void write_report(const std::vector<Table>& tables, const std::string& format, ReportKind kind,
                  const std::string& out_path) {
  Output out(out_path);
  out.stream() << render(tables, *parse_output_format(format), to_string(kind));
  out.finish();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mail server TLS measurement toolkit"};
  app.set_config("--config", "", "Key=value configuration file; command-line flags override it");
  app.require_subcommand(1);
  Common common;
  app.add_option("--registry", common.registry_path, "Cipher suite registry CSV (default: bundled)");

  // scan
  auto* scan = app.add_subcommand("scan", "Probe targets and write JSON-lines scan records");
  std::string scan_in, scan_out = "-", scan_plan, ehlo_name;
  std::size_t rate = 0, concurrency = 16;
  long delay_ms = 0, connect_ms = 10'000, read_ms = 10'000, probe_ms = 30'000;
  int retries = 1;
  bool no_pref = false;
  scan->add_option("--input", scan_in, "Targets: lines of ip,port[,protocol] or JSON lines")->required();
  scan->add_option("--output", scan_out, "Scan records output ('-' for stdout)")->capture_default_str();
  scan->add_option("--plan", scan_plan, "Probe plan CSV (default: 551-entry plan)");
  scan->add_option("--rate", rate, "Global cap on new connections per second (0: unlimited)")->capture_default_str();
  scan->add_option("--concurrency", concurrency, "Targets scanned in parallel")->check(CLI::Range(1, 4096))
      ->capture_default_str();
  scan->add_option("--delay", delay_ms, "Minimum delay between probes to one target, ms")->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  scan->add_option("--timeout-connect", connect_ms, "TCP connect timeout, ms")->check(CLI::PositiveNumber)
      ->capture_default_str();
  scan->add_option("--timeout-read", read_ms, "Per-read timeout, ms")->check(CLI::PositiveNumber)->capture_default_str();
  scan->add_option("--timeout-probe", probe_ms, "Hard limit for one probe connection, ms")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  scan->add_option("--retries", retries, "Connect attempts per probe")->check(CLI::Range(1, 10))->capture_default_str();
  scan->add_flag("--no-preference", no_pref, "Skip preferred-suite probes");
  scan->add_option("--ehlo-name", ehlo_name, "Name sent in EHLO");

  // testbed
  auto* testbed = app.add_subcommand("testbed", "Run loopback mock mail servers from a policy file");
  std::string policies_path, endpoints_out;
  FarmOptions farm_opts;
  long duration_s = 0;
  testbed->add_option("--policies", policies_path, "Policy JSON file")->required();
  testbed->add_option("--base-port", farm_opts.base_port, "First listening port")->capture_default_str();
  testbed->add_option("--second-octet", farm_opts.second_octet, "Mocks bind 127.N.x.y")->check(CLI::Range(0, 255))
      ->capture_default_str();
  testbed->add_flag("--standard-ports", farm_opts.use_standard_ports, "Listen on the protocol's well-known port");
  testbed->add_option("--workers", farm_opts.workers, "Connection worker threads")->check(CLI::Range(1, 1024))
      ->capture_default_str();
  testbed->add_option("--targets-out", endpoints_out, "Write a scan target list for the mocks");
  testbed->add_option("--duration", duration_s, "Seconds to run (0: until interrupted)")->capture_default_str();

  // certs
  auto* certs = app.add_subcommand("certs", "Certificate validation, key size and cluster reports");
  std::string certs_scan, truststore_path, certs_report = "validation", at_text, certs_format = "text", certs_out = "-";
  std::vector<std::string> snapshot_specs;
  std::size_t top_n = 20;
  certs->add_option("--scan", certs_scan, "Scan records");
  certs->add_option("--truststore", truststore_path, "PEM bundle of trusted roots");
  certs->add_option("--report", certs_report, "validation, keysize, clusters or timeseries")
      ->check(CLI::IsMember({"validation", "keysize", "clusters", "timeseries"}))
      ->capture_default_str();
  certs->add_option("--at", at_text, "Validation time, RFC 3339 (default: each record's scan time)");
  certs->add_option("--snapshot", snapshot_specs, "DATE=PATH, PATH a PEM directory or scan file (repeatable)");
  certs->add_option("--top", top_n, "Rows in cluster tables")->capture_default_str();
  certs->add_option("--out", certs_out, "Output file ('-' for stdout)")->capture_default_str();
  add_format_option(certs, certs_format);

  // gcd
  auto* gcd = app.add_subcommand("gcd", "Find RSA moduli sharing a prime factor");
  std::string moduli_path, gcd_scan, gcd_out = "-";
  auto* moduli_opt = gcd->add_option("--moduli", moduli_path, "One hex modulus per line");
  gcd->add_option("--scan", gcd_scan, "Take RSA moduli from certificates in scan records")->excludes(moduli_opt);
  gcd->add_option("--out", gcd_out, "JSON-lines findings ('-' for stdout)")->capture_default_str();

  // islands
  auto* islands = app.add_subcommand("islands", "Pairwise cipher compatibility model");
  std::string isl_scan, isl_allow, isl_rank, isl_out;
  bool isl_rc4 = false;
  islands->add_option("--scan", isl_scan, "Scan records")->required();
  auto* rc4_opt = islands->add_flag("--drop-rc4", isl_rc4, "Also evaluate with RC4 suites removed");
  islands->add_option("--allowlist", isl_allow, "Suite list file, or 'builtin'")->excludes(rc4_opt);
  islands->add_option("--ranking", isl_rank, "Client preference ranking for per-suite attribution, or 'builtin'");
  islands->add_option("--out", isl_out, "JSON output ('-' for stdout)")->required();

  // report
  auto* report = app.add_subcommand("report", "Render an analysis table");
  std::string rep_kind, rep_scan, rep_format = "text", rep_out = "-", rep_allow, rep_rank;
  std::vector<std::uint16_t> rep_ports;
  bool rep_rc4 = false;
  std::vector<std::string> kinds;
  for (auto k : report_kind_names()) kinds.emplace_back(k);
  report->add_option("--kind", rep_kind, "Report kind")->required()->check(CLI::IsMember(kinds));
  report->add_option("--scan", rep_scan, "Scan records");
  report->add_option("--truststore", truststore_path, "PEM bundle of trusted roots");
  report->add_option("--at", at_text, "Validation time, RFC 3339");
  report->add_option("--snapshot", snapshot_specs, "DATE=PATH for timeseries (repeatable)");
  report->add_option("--allowlist", rep_allow, "Suite list for islands, or 'builtin'");
  report->add_option("--ranking", rep_rank, "Ranking for islands attribution, or 'builtin'");
  report->add_flag("--drop-rc4", rep_rc4, "Islands: add the RC4-removed table");
  report->add_option("--port", rep_ports, "Restrict to ports (repeatable)");
  report->add_option("--top", top_n, "Rows in ranked tables")->capture_default_str();
  report->add_option("--out", rep_out, "Output file ('-' for stdout)")->capture_default_str();
  add_format_option(report, rep_format);

  // shortcut reports over DH / curve / prime data
  struct Shortcut {
    CLI::App* app;
    ReportKind kind;
    std::string scan, format = "text", out = "-";
  };
  std::vector<Shortcut> shortcuts;
  shortcuts.reserve(3);
  for (auto [name, kind, help] : {std::tuple{"dh-report", ReportKind::DhParams, "DH prime sizes per port"},
                                  std::tuple{"curve-report", ReportKind::Curves, "Elliptic curve usage per port"},
                                  std::tuple{"prime-report", ReportKind::SharedPrimes, "Most common DH primes"}}) {
    auto& s = shortcuts.emplace_back(Shortcut{app.add_subcommand(name, help), kind, {}, "text", "-"});
    s.app->add_option("--scan", s.scan, "Scan records")->required();
    s.app->add_option("--out", s.out, "Output file ('-' for stdout)")->capture_default_str();
    s.app->add_option("--top", top_n, "Rows in ranked tables")->capture_default_str();
    add_format_option(s.app, s.format);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    common.load();
    const Registry& reg = *common.registry;

    if (*scan) {
      auto targets = parse_targets(read_file(scan_in));
      ProbePlan plan = scan_plan.empty() ? default_probe_plan(reg) : load_probe_plan(scan_plan, reg);
      if (plan.preference_sets.empty() && !no_pref) {
        auto cands = default_preference_candidates(reg);
        for (auto v : kAllVersions)
          if (v != ProtocolVersion::SSLv2 && plan.count(v) > 0) plan.preference_sets[v] = cands;
      }
      ScanLimits limits;
      limits.connect_timeout = std::chrono::milliseconds(connect_ms);
      limits.read_timeout = std::chrono::milliseconds(read_ms);
      limits.probe_timeout = std::chrono::milliseconds(probe_ms);
      limits.inter_probe_delay = std::chrono::milliseconds(delay_ms);
      limits.connect_retries = retries;
      limits.max_concurrent_targets = concurrency;
      limits.global_rate_cap = rate;
      limits.preference_probes = !no_pref;
      if (!ehlo_name.empty()) limits.driver.ehlo_name = ehlo_name;
      Output out(scan_out);
      JsonlSink sink(out.stream());
      auto summary = run_campaign(targets, plan, limits, sink, reg);
      std::cerr << fmt::format("scanned {} targets in {} ms: {} valid, {} invalid\n", summary.total,
                               summary.elapsed.count(), summary.valid, summary.invalid_total());
      for (const auto& [reason, n] : summary.invalid) std::cerr << fmt::format("  {}: {}\n", to_string(reason), n);
      if (summary.aborted) {
        std::cerr << "error: campaign aborted: " << summary.abort_reason << "\n";
        return kExitRuntime;
      }
      out.finish();
      return 0;
    }

    if (*testbed) {
      auto policies = load_policies(policies_path, reg);
      MockFarm farm(std::move(policies), reg, farm_opts);
      if (!endpoints_out.empty()) {
        Output out(endpoints_out);
        for (const auto& e : farm.endpoints())
          out.stream() << fmt::format("{},{},{}\n", e.ip, e.port, to_string(e.protocol));
        out.finish();
      }
      std::cerr << fmt::format("{} mock endpoints listening\n", farm.endpoints().size());
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      auto until = std::chrono::steady_clock::now() + std::chrono::seconds(duration_s);
      while (!g_stop && (duration_s == 0 || std::chrono::steady_clock::now() < until))
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
      farm.stop();
      std::cerr << fmt::format("served {} connections\n", farm.connections_served());
      return 0;
    }

    ReportInputs in;
    in.registry = &reg;
    in.top_n = top_n;
    std::optional<TrustStore> store;
    if (!truststore_path.empty()) {
      store = TrustStore::load_pem(truststore_path);
      in.truststore = &*store;
    }
    if (!at_text.empty()) in.validation_time = parse_timestamp(at_text);

    if (*certs) {
      if (!certs_scan.empty()) {
        in.records = load_scan(certs_scan);
        in.have_records = true;
      }
      in.snapshots = load_snapshots(snapshot_specs);
      std::vector<ReportKind> ks;
      if (certs_report == "validation") ks = {ReportKind::Truststore};
      if (certs_report == "keysize") ks = {ReportKind::KeySizes};
      if (certs_report == "clusters") ks = {ReportKind::CommonCerts, ReportKind::SelfSignedSubjects};
      if (certs_report == "timeseries") ks = {ReportKind::Timeseries};
      std::vector<Table> tables;
      for (auto k : ks) {
        auto t = build_report(k, in);
        tables.insert(tables.end(), t.begin(), t.end());
      }
      write_report(tables, certs_format, ks.front(), certs_out);
      return 0;
    }

    if (*gcd) {
      std::vector<mpz_class> moduli;
      std::map<std::string, std::vector<std::string>> sources;
      if (!moduli_path.empty()) {
        std::istringstream lines(read_file(moduli_path));
        std::string line;
        std::size_t n = 0;
        while (std::getline(lines, line)) {
          ++n;
          auto start = line.find_first_not_of(" \t\r");
          if (start == std::string::npos || line[start] == '#') continue;
          auto end = line.find_last_not_of(" \t\r");
          try {
            moduli.push_back(mpz_from_hex(std::string_view(line).substr(start, end - start + 1)));
          } catch (const std::exception& e) {
            throw ParseError(fmt::format("line {}: {}", n, e.what()));
          }
        }
      } else if (!gcd_scan.empty()) {
        for (const auto& r : load_scan(gcd_scan))
          for (const auto& [ref, chain] : r.chains)
            for (const auto& cert : parse_chain(chain))
              if (!cert.malformed && !cert.rsa_modulus.empty()) {
                auto m = mpz_from_bytes(cert.rsa_modulus);
                auto& src = sources[mpz_hex(m)];
                if (std::find(src.begin(), src.end(), cert.sha1_fingerprint) == src.end())
                  src.push_back(cert.sha1_fingerprint);
                moduli.push_back(std::move(m));
              }
      } else {
        throw UsageError("gcd needs --moduli or --scan");
      }
      auto deduped = dedupe_moduli(moduli);
      auto findings = batch_gcd(deduped.unique);
      Output out(gcd_out);
      for (const auto& f : findings) {
        nlohmann::ordered_json j{{"modulus", mpz_hex(f.modulus)},
                                 {"sharedFactor", mpz_hex(f.shared_factor)},
                                 {"cofactor", mpz_hex(f.cofactor)}};
        if (auto it = sources.find(mpz_hex(f.modulus)); it != sources.end()) j["certificates"] = it->second;
        out.stream() << j.dump() << "\n";
      }
      out.finish();
      std::cerr << fmt::format("{} distinct moduli ({} repeated), {} share a factor\n", deduped.unique.size(),
                               deduped.duplicates.size(), findings.size());
      return 0;
    }

    if (*islands) {
      auto records = load_scan(isl_scan);
      auto nodes = build_graph(records);
      nlohmann::ordered_json doc;
      doc["format"] = "mailtls-islands";
      doc["version"] = 1;
      doc["hosts"] = nodes.empty() ? 0 : compatibility_report(nodes).total_weight;
      doc["baseline"] = distribution_json(compatibility_report(nodes), reg, false);
      std::optional<std::vector<SuiteId>> allow;
      if (isl_rc4) doc["dropRc4"] = distribution_json(compatibility_report(apply_policy(nodes, drop_rc4_policy(reg))), reg, false);
      if (!isl_allow.empty()) {
        allow = load_suite_list(isl_allow, reg);
        doc["allowlist"] = distribution_json(compatibility_report(apply_policy(nodes, allowlist_policy(*allow))), reg, false);
      }
      if (!isl_rank.empty() || allow) {
        auto ranking = isl_rank.empty() ? *allow : load_suite_list(isl_rank, reg);
        auto base = allow ? apply_policy(nodes, allowlist_policy(*allow)) : nodes;
        doc["attribution"] = distribution_json(per_suite_attribution(base, ranking), reg, true);
      }
      Output out(isl_out);
      out.stream() << doc.dump(2) << "\n";
      out.finish();
      return 0;
    }

    if (*report) {
      auto kind = *parse_report_kind(rep_kind);
      if (!rep_scan.empty()) {
        in.records = load_scan(rep_scan);
        in.have_records = true;
      }
      in.snapshots = load_snapshots(snapshot_specs);
      if (!rep_allow.empty()) in.allowlist = load_suite_list(rep_allow, reg);
      if (!rep_rank.empty()) in.ranking = load_suite_list(rep_rank, reg);
      in.drop_rc4 = rep_rc4;
      in.ports.insert(rep_ports.begin(), rep_ports.end());
      write_report(build_report(kind, in), rep_format, kind, rep_out);
      return 0;
    }

    for (auto& s : shortcuts) {
      if (!*s.app) continue;
      in.records = load_scan(s.scan);
      in.have_records = true;
      write_report(build_report(s.kind, in), s.format, s.kind, s.out);
      return 0;
    }
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitParse;
  } catch (const FormatVersionError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitParse;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitParse;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
