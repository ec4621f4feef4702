#include "mailtls/scanner.hpp"

#include <algorithm>
#include <random>
#include <thread>

namespace mailtls {

namespace {

using namespace std::chrono_literals;

template <typename Arr>
void fill_random(Arr& a) {
  thread_local std::mt19937_64 rng{std::random_device{}()};
  for (auto& b : a) b = static_cast<std::uint8_t>(rng());
}

struct Failure {
  InvalidReason reason;
  std::string detail;
};

Failure classify(const net::NetError& e) {
  switch (e.kind()) {
    case net::NetErrorKind::Refused:
    case net::NetErrorKind::Reset:
    case net::NetErrorKind::Closed: return {InvalidReason::ConnectionRejected, e.what()};
    default: return {InvalidReason::Timeout, e.what()};
  }
}

Failure classify(const DriverError& e) {
  switch (e.kind()) {
    case DriverFailure::BannerRejected: return {InvalidReason::EhloRejected, "banner: " + e.detail()};
    case DriverFailure::EhloRejected: return {InvalidReason::EhloRejected, e.detail()};
    case DriverFailure::Malformed: return {InvalidReason::EhloRejected, "malformed: " + e.detail()};
    case DriverFailure::Closed: return {InvalidReason::ConnectionRejected, "closed during plaintext dialog"};
  }
  return {InvalidReason::Timeout, e.what()};
}

}  // namespace

Timestamp now_timestamp() {
  return std::chrono::time_point_cast<std::chrono::microseconds>(std::chrono::system_clock::now());
}

std::string_view to_string(ProbeStatus s) {
  switch (s) {
    case ProbeStatus::Accepted: return "accepted";
    case ProbeStatus::Rejected: return "rejected";
    case ProbeStatus::Preferred: return "preferred";
    case ProbeStatus::Error: return "error";
  }
  return "?";
}

std::optional<ProbeStatus> parse_probe_status(std::string_view s) {
  for (auto st : {ProbeStatus::Accepted, ProbeStatus::Rejected, ProbeStatus::Preferred, ProbeStatus::Error})
    if (to_string(st) == s) return st;
  return std::nullopt;
}

std::string_view to_string(InvalidReason r) {
  switch (r) {
    case InvalidReason::Timeout: return "timeout";
    case InvalidReason::ConnectionRejected: return "connectionRejected";
    case InvalidReason::EhloRejected: return "ehloRejected";
    case InvalidReason::StartTlsRejected: return "startTlsRejected";
    case InvalidReason::NoHandshake: return "noHandshake";
  }
  return "?";
}

std::optional<InvalidReason> parse_invalid_reason(std::string_view s) {
  for (auto r : kAllInvalidReasons)
    if (to_string(r) == s) return r;
  return std::nullopt;
}

std::set<ProbeEntry> HostScanRecord::accepted_pairs() const {
  std::set<ProbeEntry> out;
  for (const auto& o : outcomes)
    if (o.kind == ProbeKind::Suite && o.status == ProbeStatus::Accepted && o.suite) out.insert({o.version, *o.suite});
  return out;
}

const std::vector<Bytes>* HostScanRecord::chain(const std::optional<std::string>& ref) const {
  if (!ref) return nullptr;
  auto it = chains.find(*ref);
  return it == chains.end() ? nullptr : &it->second;
}

const std::vector<Bytes>* HostScanRecord::leaf_chain() const {
  for (const auto& o : outcomes)
    if (o.positive())
      if (const auto* c = chain(o.chain_ref); c && !c->empty()) return c;
  return nullptr;
}

std::string chain_fingerprint(std::span<const Bytes> chain) {
  ByteWriter w;
  for (const auto& der : chain) w.vec(3, der);
  return sha256_hex(w.data());
}

Timestamp ConnectionGate::acquire() {
  if (cap_ == 0) return now_timestamp();
  std::unique_lock lock(mu_);
  for (;;) {
    auto now = now_timestamp();
    while (!recent_.empty() && now - recent_.front() >= 1s) recent_.pop_front();
    if (recent_.size() < cap_) {
      recent_.push_back(now);
      return now;
    }
    auto wait = recent_.front() + 1s - now;
    lock.unlock();
    std::this_thread::sleep_for(wait);
    lock.lock();
  }
}

Scanner::Scanner(const Registry& registry, ScanLimits limits)
    : registry_(registry), limits_(std::move(limits)), gate_(limits_.global_rate_cap) {}

Scanner::ProbeRun Scanner::run_probe(const Endpoint& endpoint, ProtocolVersion version,
                                     std::span<const SuiteId> offer, ProbeKind kind, HostScanRecord* record) {
  ProbeRun run;
  ProbeOutcome out;
  out.kind = kind;
  out.version = version;
  if (kind == ProbeKind::Suite) out.suite = offer.front();
  out.started_at = gate_.acquire();

  net::Socket sock;
  for (int attempt = 0;; ++attempt) {
    try {
      sock = net::connect_tcp(endpoint.ip, endpoint.port, limits_.connect_timeout);
      break;
    } catch (const net::NetError& e) {
      if (e.kind() == net::NetErrorKind::Timeout && attempt < limits_.connect_retries) {
        gate_.acquire();
        continue;
      }
      auto f = classify(e);
      run.pre_tls = PreTlsFailure{f.reason, f.detail};
      return run;
    }
  }

  auto hard = net::deadline_after(limits_.probe_timeout);
  Bytes leftover;
  if (endpoint.mode == TlsMode::StartTls) {
    SocketTextStream ts(sock, limits_.read_timeout, hard);
    try {
      run.caps = negotiate_plaintext(endpoint, ts, limits_.driver);
      auto st = upgrade_starttls(endpoint, ts);
      if (!st.ok) {
        run.pre_tls = PreTlsFailure{InvalidReason::StartTlsRejected, st.detail};
        return run;
      }
    } catch (const net::NetError& e) {
      auto f = classify(e);
      run.pre_tls = PreTlsFailure{f.reason, f.detail};
      return run;
    } catch (const DriverError& e) {
      auto f = classify(e);
      run.pre_tls = PreTlsFailure{f.reason, f.detail};
      return run;
    }
    leftover = ts.take_buffered();
  }

  auto next = [&] { return std::min(net::Clock::now() + limits_.read_timeout, hard); };
  tls::ServerFlightParser parser(version, std::vector<SuiteId>(offer.begin(), offer.end()), registry_);
  std::optional<tls::FlightResult> result;
  try {
    Bytes hello;
    if (version == ProtocolVersion::SSLv2) {
      tls::Challenge16 ch;
      fill_random(ch);
      hello = tls::build_sslv2_client_hello(offer, ch);
    } else {
      tls::Random32 rnd;
      fill_random(rnd);
      hello = tls::build_client_hello(version, offer, rnd);
    }
    sock.write_all(hello, next());
    if (!leftover.empty()) result = parser.feed(leftover);
    while (!result) {
      if (net::Clock::now() >= hard) throw net::NetError(net::NetErrorKind::Timeout, "probe deadline");
      auto chunk = sock.read_some(16 * 1024, next());
      if (chunk.empty()) {
        result = parser.finish();
        break;
      }
      result = parser.feed(chunk);
    }
  } catch (const net::NetError& e) {
    if (e.kind() == net::NetErrorKind::Reset && parser.bytes_seen() == 0) {
      out.status = ProbeStatus::Rejected;
      out.error_reason = "connection reset";
    } else {
      out.status = ProbeStatus::Error;
      out.error_reason = std::string(to_string(e.kind()));
      run.silent_timeout = e.kind() == net::NetErrorKind::Timeout && parser.bytes_seen() == 0;
    }
    run.outcome = std::move(out);
    return run;
  }

  if (auto* acc = std::get_if<tls::Accepted>(&*result)) {
    out.status = kind == ProbeKind::Suite ? ProbeStatus::Accepted : ProbeStatus::Preferred;
    out.suite = acc->selected;
    out.dh = std::move(acc->dh);
    out.ecdh = std::move(acc->ecdh);
    if (!acc->chain.empty()) {
      auto ref = chain_fingerprint(acc->chain);
      if (record && !record->chains.contains(ref)) record->chains.emplace(ref, std::move(acc->chain));
      out.chain_ref = std::move(ref);
    }
  } else if (auto* al = std::get_if<tls::AlertResult>(&*result)) {
    out.status = ProbeStatus::Rejected;
    out.alert = al->alert;
  } else {
    const auto& m = std::get<tls::Malformed>(*result);
    if (m.reason == tls::kClosedBeforeResponse) {
      out.status = ProbeStatus::Rejected;
      out.error_reason = "closed without response";
    } else {
      out.status = ProbeStatus::Error;
      out.error_reason = m.reason;
    }
  }
  run.outcome = std::move(out);
  return run;
}

ProbeOutcome Scanner::probe_preference(const Endpoint& endpoint, ProtocolVersion version,
                                       std::span<const SuiteId> candidates, HostScanRecord* record) {
  if (candidates.empty()) throw ContractViolation("preference probe needs candidates");
  if (version == ProtocolVersion::SSLv2) throw ContractViolation("no preference probes for SSLv2");
  auto run = run_probe(endpoint, version, candidates, ProbeKind::Preference, record);
  if (run.outcome) return *run.outcome;
  ProbeOutcome out;
  out.kind = ProbeKind::Preference;
  out.version = version;
  out.status = ProbeStatus::Error;
  out.error_reason = std::string(to_string(run.pre_tls->reason)) + ": " + run.pre_tls->detail;
  out.started_at = now_timestamp();
  return out;
}

HostScanRecord Scanner::scan_target(const Endpoint& endpoint, const ProbePlan& plan) {
  HostScanRecord rec;
  rec.endpoint = endpoint;
  rec.scan_start = now_timestamp();
  auto delay = std::max(limits_.inter_probe_delay, plan.inter_probe_delay);
  std::optional<Timestamp> last_start;
  auto pace = [&] {
    if (last_start && delay.count() > 0) {
      auto due = *last_start + std::chrono::duration_cast<std::chrono::microseconds>(delay);
      auto now = now_timestamp();
      if (due > now) std::this_thread::sleep_for(due - now);
    }
  };

  bool first = true;
  for (const auto& entry : plan.entries) {
    pace();
    SuiteId one[1] = {entry.suite};
    auto run = run_probe(endpoint, entry.version, one, ProbeKind::Suite, &rec);
    if (run.caps && !rec.capabilities) rec.capabilities = std::move(run.caps);
    if (run.pre_tls && first) {
      rec.valid = false;
      rec.invalid_reason = run.pre_tls->reason;
      rec.invalid_detail = run.pre_tls->detail;
      rec.scan_end = now_timestamp();
      return rec;
    }
    // A server that never answers the first hello is treated like one that
    // never answered at all; the remaining probes would only time out too.
    if (run.silent_timeout && first) {
      rec.valid = false;
      rec.invalid_reason = InvalidReason::Timeout;
      rec.invalid_detail = "no response to client hello";
      rec.scan_end = now_timestamp();
      return rec;
    }
    first = false;
    if (run.pre_tls) {
      ProbeOutcome o;
      o.version = entry.version;
      o.suite = entry.suite;
      o.status = ProbeStatus::Error;
      o.error_reason = std::string(to_string(run.pre_tls->reason)) + ": " + run.pre_tls->detail;
      o.started_at = now_timestamp();
      rec.outcomes.push_back(std::move(o));
    } else {
      rec.outcomes.push_back(std::move(*run.outcome));
    }
    last_start = rec.outcomes.back().started_at;
  }

  if (limits_.preference_probes) {
    std::set<ProtocolVersion> with_accept;
    for (const auto& o : rec.outcomes)
      if (o.status == ProbeStatus::Accepted && o.version != ProtocolVersion::SSLv2) with_accept.insert(o.version);
    for (auto v : with_accept) {
      auto it = plan.preference_sets.find(v);
      if (it == plan.preference_sets.end() || it->second.empty()) continue;
      pace();
      rec.outcomes.push_back(probe_preference(endpoint, v, it->second, &rec));
      last_start = rec.outcomes.back().started_at;
    }
  }

  rec.valid = std::any_of(rec.outcomes.begin(), rec.outcomes.end(),
                          [](const ProbeOutcome& o) { return o.status != ProbeStatus::Error; });
  if (!rec.valid) {
    rec.invalid_reason = InvalidReason::NoHandshake;
    rec.invalid_detail = rec.outcomes.empty() ? "empty probe plan" : rec.outcomes.front().error_reason.value_or("");
  }
  rec.scan_end = now_timestamp();
  return rec;
}

void CollectingSink::write(const HostScanRecord& record) {
  std::lock_guard lock(mu_);
  records_.push_back(record);
}

std::vector<HostScanRecord> CollectingSink::take() {
  std::lock_guard lock(mu_);
  return std::exchange(records_, {});
}

std::size_t CampaignSummary::invalid_total() const {
  std::size_t n = 0;
  for (const auto& [_, c] : invalid) n += c;
  return n;
}

CampaignSummary run_campaign(std::span<const Endpoint> targets, const ProbePlan& plan, const ScanLimits& limits,
                             RecordSink& sink, const Registry& registry) {
  Scanner scanner(registry, limits);
  CampaignSummary summary;
  std::mutex mu;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  auto t0 = std::chrono::steady_clock::now();

  auto worker = [&] {
    for (;;) {
      if (abort.load()) return;
      auto i = next.fetch_add(1);
      if (i >= targets.size()) return;
      auto rec = scanner.scan_target(targets[i], plan);
      try {
        sink.write(rec);
      } catch (const std::exception& e) {
        std::lock_guard lock(mu);
        if (!abort.exchange(true)) {
          summary.aborted = true;
          summary.abort_reason = e.what();
        }
        return;
      }
      std::lock_guard lock(mu);
      ++summary.total;
      if (rec.valid)
        ++summary.valid;
      else
        ++summary.invalid[*rec.invalid_reason];
    }
  };

  auto n = std::max<std::size_t>(1, std::min(limits.max_concurrent_targets, targets.size()));
  std::vector<std::thread> pool;
  pool.reserve(n);
  for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (summary.aborted) sink.mark_partial();
  summary.elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0);
  return summary;
}

}  // namespace mailtls
