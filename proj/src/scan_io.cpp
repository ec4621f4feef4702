#include "mailtls/scan_io.hpp"

#include <charconv>
#include <ctime>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

namespace mailtls {

using nlohmann::json;

namespace {

const json& need(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(fmt::format("missing field '{}'", key));
  return *it;
}

template <typename T>
std::optional<T> opt(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<T>();
}

ProtocolVersion need_version(const json& j, const char* key) {
  auto s = need(j, key).get<std::string>();
  auto v = parse_version(s);
  if (!v) throw ParseError("unknown protocol version '" + s + "'");
  return *v;
}

json dh_to_json(const tls::DhParameters& dh) {
  return {{"prime", to_hex(dh.prime)},
          {"generator", to_hex(dh.generator)},
          {"public", to_hex(dh.server_public)},
          {"bits", dh.prime_bits}};
}

tls::DhParameters dh_from_json(const json& j) {
  tls::DhParameters dh;
  dh.prime = from_hex(need(j, "prime").get<std::string>());
  dh.generator = from_hex(need(j, "generator").get<std::string>());
  dh.server_public = from_hex(need(j, "public").get<std::string>());
  if (dh.prime.empty()) throw ParseError("dh prime is empty");
  dh.prime_bits = bit_length(dh.prime);
  if (auto b = opt<int>(j, "bits"); b && *b != dh.prime_bits) throw ParseError("dh bits disagree with prime");
  return dh;
}

json caps_to_json(const PlaintextCapabilities& c) {
  return {{"banner", c.banner_line},
          {"lines", c.capability_lines},
          {"startTls", c.advertises_starttls},
          {"authPlainPreTls", c.advertises_auth_plain_pre_tls},
          {"heloFallback", c.helo_fallback}};
}

PlaintextCapabilities caps_from_json(const json& j) {
  PlaintextCapabilities c;
  c.banner_line = need(j, "banner").get<std::string>();
  c.capability_lines = need(j, "lines").get<std::vector<std::string>>();
  c.advertises_starttls = need(j, "startTls").get<bool>();
  c.advertises_auth_plain_pre_tls = need(j, "authPlainPreTls").get<bool>();
  c.helo_fallback = opt<bool>(j, "heloFallback").value_or(false);
  return c;
}

json outcome_to_json(const ProbeOutcome& o) {
  json j;
  j["probe"] = o.kind == ProbeKind::Suite ? "suite" : "preference";
  j["version"] = std::string(to_string(o.version));
  if (o.suite) j["suite"] = o.suite->to_hex();
  j["status"] = std::string(to_string(o.status));
  if (o.alert) {
    j["alert"] = {{"level", o.alert->level == tls::AlertLevel::Fatal ? "fatal" : "warning"},
                  {"code", o.alert->code},
                  {"name", std::string(o.alert->name())}};
    if (o.alert->sslv2_error) j["alert"]["sslv2"] = true;
  }
  if (o.error_reason) j["error"] = *o.error_reason;
  if (o.dh) j["dh"] = dh_to_json(*o.dh);
  if (o.ecdh) {
    j["ecdh"] = {{"curveType", o.ecdh->kind == tls::CurveKind::NamedCurve ? "named" : "other"},
                 {"curveId", o.ecdh->curve_id},
                 {"curve", o.ecdh->curve_name}};
  }
  if (o.chain_ref) j["chain"] = *o.chain_ref;
  j["startedAt"] = format_timestamp(o.started_at);
  return j;
}

ProbeOutcome outcome_from_json(const json& j) {
  ProbeOutcome o;
  auto probe = need(j, "probe").get<std::string>();
  if (probe == "suite")
    o.kind = ProbeKind::Suite;
  else if (probe == "preference")
    o.kind = ProbeKind::Preference;
  else
    throw ParseError("unknown probe kind '" + probe + "'");
  o.version = need_version(j, "version");
  if (auto s = opt<std::string>(j, "suite")) o.suite = SuiteId::from_hex(*s);
  auto st = need(j, "status").get<std::string>();
  auto status = parse_probe_status(st);
  if (!status) throw ParseError("unknown status '" + st + "'");
  o.status = *status;
  if (auto it = j.find("alert"); it != j.end() && !it->is_null()) {
    tls::AlertInfo a;
    auto level = need(*it, "level").get<std::string>();
    if (level != "fatal" && level != "warning") throw ParseError("bad alert level '" + level + "'");
    a.level = level == "fatal" ? tls::AlertLevel::Fatal : tls::AlertLevel::Warning;
    a.code = need(*it, "code").get<std::uint8_t>();
    a.sslv2_error = opt<bool>(*it, "sslv2").value_or(false);
    o.alert = a;
  }
  o.error_reason = opt<std::string>(j, "error");
  if (auto it = j.find("dh"); it != j.end() && !it->is_null()) o.dh = dh_from_json(*it);
  if (auto it = j.find("ecdh"); it != j.end() && !it->is_null()) {
    tls::EcdhParameters e;
    e.kind = need(*it, "curveType").get<std::string>() == "named" ? tls::CurveKind::NamedCurve : tls::CurveKind::Other;
    e.curve_id = need(*it, "curveId").get<std::uint16_t>();
    e.curve_name = need(*it, "curve").get<std::string>();
    o.ecdh = e;
  }
  o.chain_ref = opt<std::string>(j, "chain");
  o.started_at = parse_timestamp(need(j, "startedAt").get<std::string>());
  return o;
}

std::uint16_t parse_port(std::string_view s) {
  unsigned v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || v == 0 || v > 65535)
    throw ParseError("bad port '" + std::string(s) + "'");
  return static_cast<std::uint16_t>(v);
}

Endpoint make_target(const std::string& ip, std::uint16_t port, std::optional<std::string_view> proto) {
  if (!net::is_valid_ipv4(ip)) throw ParseError("bad IPv4 address '" + ip + "'");
  if (!proto || proto->empty()) {
    auto p = protocol_for_port(port);
    if (!p) throw ParseError(fmt::format("port {} has no default protocol", port));
    return Endpoint::make(ip, port, *p);
  }
  auto p = parse_app_protocol(*proto);
  if (!p) throw ParseError("unknown protocol '" + std::string(*proto) + "'");
  return Endpoint::make(ip, port, *p);
}

}  // namespace

std::string format_timestamp(Timestamp t) {
  auto us = t.time_since_epoch().count();
  auto secs = us / 1'000'000;
  auto frac = us % 1'000'000;
  if (frac < 0) {
    frac += 1'000'000;
    --secs;
  }
  std::time_t tt = static_cast<std::time_t>(secs);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}.{:06}Z", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                     tm.tm_hour, tm.tm_min, tm.tm_sec, frac);
}

Timestamp parse_timestamp(std::string_view s) {
  auto fail = [&] { return ParseError("bad timestamp '" + std::string(s) + "'"); };
  if (s.size() < 20 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != 't') || s[13] != ':' || s[16] != ':')
    throw fail();
  auto num = [&](std::size_t pos, std::size_t len) {
    int v = 0;
    auto [p, ec] = std::from_chars(s.data() + pos, s.data() + pos + len, v);
    if (ec != std::errc{} || p != s.data() + pos + len) throw fail();
    return v;
  };
  std::tm tm{};
  tm.tm_year = num(0, 4) - 1900;
  tm.tm_mon = num(5, 2) - 1;
  tm.tm_mday = num(8, 2);
  tm.tm_hour = num(11, 2);
  tm.tm_min = num(14, 2);
  tm.tm_sec = num(17, 2);
  std::size_t i = 19;
  std::int64_t frac_us = 0;
  if (i < s.size() && s[i] == '.') {
    ++i;
    int digits = 0;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) {
      if (digits < 6) frac_us = frac_us * 10 + (s[i] - '0');
      ++digits;
      ++i;
    }
    if (digits == 0) throw fail();
    for (int d = digits; d < 6; ++d) frac_us *= 10;
  }
  auto rest = s.substr(i);
  if (rest != "Z" && rest != "z" && rest != "+00:00") throw fail();
  auto secs = timegm(&tm);
  return Timestamp(std::chrono::microseconds(static_cast<std::int64_t>(secs) * 1'000'000 + frac_us));
}

std::string scan_header_line() {
  json h{{"format", kScanFormat}, {"version", kScanFormatVersion}};
  return h.dump();
}

std::string record_to_json_line(const HostScanRecord& r) {
  json j;
  j["ip"] = r.endpoint.ip;
  j["port"] = r.endpoint.port;
  j["protocol"] = std::string(to_string(r.endpoint.protocol));
  j["tlsMode"] = std::string(to_string(r.endpoint.mode));
  j["valid"] = r.valid;
  if (r.invalid_reason) j["invalidReason"] = std::string(to_string(*r.invalid_reason));
  if (!r.invalid_detail.empty()) j["invalidDetail"] = r.invalid_detail;
  j["scanStart"] = format_timestamp(r.scan_start);
  j["scanEnd"] = format_timestamp(r.scan_end);
  if (r.capabilities) j["capabilities"] = caps_to_json(*r.capabilities);
  json outs = json::array();
  for (const auto& o : r.outcomes) outs.push_back(outcome_to_json(o));
  j["outcomes"] = std::move(outs);
  json chains = json::object();
  for (const auto& [ref, ders] : r.chains) {
    json list = json::array();
    for (const auto& d : ders) list.push_back(to_base64(d));
    chains[ref] = std::move(list);
  }
  j["chains"] = std::move(chains);
  return j.dump();
}

HostScanRecord record_from_json_line(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what());
  }
  try {
    HostScanRecord r;
    auto proto_s = need(j, "protocol").get<std::string>();
    auto proto = parse_app_protocol(proto_s);
    if (!proto) throw ParseError("unknown protocol '" + proto_s + "'");
    r.endpoint.ip = need(j, "ip").get<std::string>();
    r.endpoint.port = need(j, "port").get<std::uint16_t>();
    r.endpoint.protocol = *proto;
    auto mode_s = need(j, "tlsMode").get<std::string>();
    auto mode = parse_tls_mode(mode_s);
    if (!mode) throw ParseError("unknown tlsMode '" + mode_s + "'");
    r.endpoint.mode = *mode;
    r.valid = need(j, "valid").get<bool>();
    if (auto s = opt<std::string>(j, "invalidReason")) {
      auto ir = parse_invalid_reason(*s);
      if (!ir) throw ParseError("unknown invalidReason '" + *s + "'");
      r.invalid_reason = *ir;
    }
    if (r.valid == r.invalid_reason.has_value()) throw ParseError("valid and invalidReason disagree");
    r.invalid_detail = opt<std::string>(j, "invalidDetail").value_or("");
    r.scan_start = parse_timestamp(need(j, "scanStart").get<std::string>());
    r.scan_end = parse_timestamp(need(j, "scanEnd").get<std::string>());
    if (auto it = j.find("capabilities"); it != j.end() && !it->is_null()) r.capabilities = caps_from_json(*it);
    for (const auto& o : need(j, "outcomes")) r.outcomes.push_back(outcome_from_json(o));
    if (auto it = j.find("chains"); it != j.end()) {
      for (const auto& [ref, list] : it->items()) {
        std::vector<Bytes> ders;
        for (const auto& b : list) ders.push_back(from_base64(b.get<std::string>()));
        r.chains.emplace(ref, std::move(ders));
      }
    }
    for (const auto& o : r.outcomes)
      if (o.chain_ref && !r.chains.contains(*o.chain_ref)) throw ParseError("dangling chain reference");
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("schema error: ") + e.what());
  }
}

ScanFile read_scan_stream(std::istream& in) {
  ScanFile out;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header) {
      json h;
      try {
        h = json::parse(line);
      } catch (const json::exception&) {
        throw FormatVersionError("missing scan file header");
      }
      if (!h.is_object() || h.value("format", "") != kScanFormat)
        throw FormatVersionError("not a mailtls scan file (missing header)");
      auto v = h.value("version", -1);
      if (v != kScanFormatVersion)
        throw FormatVersionError(fmt::format("unsupported scan format version {} (expected {})", v, kScanFormatVersion));
      header = true;
      continue;
    }
    if (line == R"({"partial":true})") {
      out.partial = true;
      continue;
    }
    try {
      out.records.push_back(record_from_json_line(line));
    } catch (const ParseError& e) {
      throw ParseError(fmt::format("line {}: {}", line_no, e.what()));
    }
  }
  if (!header) throw FormatVersionError("empty scan file (missing header)");
  return out;
}

ScanFile read_scan_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  return read_scan_stream(in);
}

JsonlSink::JsonlSink(std::ostream& out) : out_(out) {
  out_ << scan_header_line() << '\n';
  out_.flush();
  if (!out_) throw std::runtime_error("cannot write scan output");
}

void JsonlSink::write(const HostScanRecord& record) {
  auto line = record_to_json_line(record);
  std::lock_guard lock(mu_);
  out_ << line << '\n';
  out_.flush();
  if (!out_) throw std::runtime_error("scan output write failed");
}

void JsonlSink::mark_partial() noexcept {
  try {
    std::lock_guard lock(mu_);
    out_.clear();
    out_ << R"({"partial":true})" << '\n';
    out_.flush();
  } catch (...) {
  }
}

std::vector<Endpoint> parse_targets(std::string_view text) {
  std::vector<Endpoint> out;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    auto l = std::string_view(line);
    while (!l.empty() && std::isspace(static_cast<unsigned char>(l.back()))) l.remove_suffix(1);
    while (!l.empty() && std::isspace(static_cast<unsigned char>(l.front()))) l.remove_prefix(1);
    if (l.empty() || l.front() == '#') continue;
    try {
      if (l.front() == '{') {
        json j;
        try {
          j = json::parse(l);
          auto proto = opt<std::string>(j, "protocol");
          out.push_back(make_target(need(j, "ip").get<std::string>(), need(j, "port").get<std::uint16_t>(),
                                    proto ? std::optional<std::string_view>(*proto) : std::nullopt));
        } catch (const json::exception& e) {
          throw ParseError(e.what());
        }
        continue;
      }
      auto f = split_fields(l);
      if (f.size() < 2 || f.size() > 3) throw ParseError("expected ip,port[,protocol]");
      out.push_back(make_target(std::string(f[0]), parse_port(f[1]),
                                f.size() == 3 ? std::optional<std::string_view>(f[2]) : std::nullopt));
    } catch (const ParseError& e) {
      throw ParseError(fmt::format("targets line {}: {}", line_no, e.what()));
    }
  }
  return out;
}

}  // namespace mailtls
