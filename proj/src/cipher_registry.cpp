#include "mailtls/cipher_registry.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace mailtls {

namespace bundled {
extern const std::string_view kRegistryCsv;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::optional<KeyExchange> parse_kex(std::string_view s) {
  if (s == "RSA") return KeyExchange::RSA;
  if (s == "DHE_RSA") return KeyExchange::DHE_RSA;
  if (s == "ECDHE_RSA") return KeyExchange::ECDHE_RSA;
  if (s == "ADH") return KeyExchange::ADH;
  if (s == "AECDH") return KeyExchange::AECDH;
  if (s == "other") return KeyExchange::Other;
  return std::nullopt;
}

std::optional<Mac> parse_mac(std::string_view s) {
  if (s == "MD5") return Mac::MD5;
  if (s == "SHA1") return Mac::SHA1;
  if (s == "SHA256") return Mac::SHA256;
  if (s == "SHA384") return Mac::SHA384;
  if (s == "none") return Mac::None;
  return std::nullopt;
}

bool has_export_marker(const CipherSuiteInfo& e) {
  return e.alias.starts_with("EXP") || e.name.find("EXPORT") != std::string::npos;
}

template <typename F>
void for_each_line(std::string_view text, F&& f) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    f(line_no, trim(line));
  }
}

// clang-format off
constexpr std::array<SuiteId, 7> kSslv2Defaults = {
    SuiteId::sslv2(0x010080), SuiteId::sslv2(0x020080), SuiteId::sslv2(0x030080),
    SuiteId::sslv2(0x040080), SuiteId::sslv2(0x050080), SuiteId::sslv2(0x060040),
    SuiteId::sslv2(0x0700c0)};

constexpr std::array<std::uint16_t, 136> kTlsDefaultValues = {
    0x0001, 0x0002, 0x0003, 0x0004, 0x0005, 0x0006, 0x0007, 0x0008, 0x0009, 0x000a,
    0x000b, 0x000c, 0x000d, 0x000e, 0x000f, 0x0010, 0x0011, 0x0012, 0x0013, 0x0014,
    0x0015, 0x0016, 0x0017, 0x0018, 0x0019, 0x001a, 0x001b,
    0x002f, 0x0030, 0x0031, 0x0032, 0x0033, 0x0034, 0x0035, 0x0036, 0x0037, 0x0038,
    0x0039, 0x003a, 0x003b, 0x003c, 0x003d, 0x003e, 0x003f, 0x0040,
    0x0041, 0x0042, 0x0043, 0x0044, 0x0045, 0x0046,
    0x0067, 0x0068, 0x0069, 0x006a, 0x006b, 0x006c, 0x006d,
    0x0084, 0x0085, 0x0086, 0x0087, 0x0088, 0x0089,
    0x008a, 0x008b, 0x008c, 0x008d,
    0x0096, 0x0097, 0x0098, 0x0099, 0x009a, 0x009b,
    0x009c, 0x009d, 0x009e, 0x009f, 0x00a0, 0x00a1, 0x00a2, 0x00a3, 0x00a4, 0x00a5,
    0x00a6, 0x00a7,
    0xc001, 0xc002, 0xc003, 0xc004, 0xc005, 0xc006, 0xc007, 0xc008, 0xc009, 0xc00a,
    0xc00b, 0xc00c, 0xc00d, 0xc00e, 0xc00f, 0xc010, 0xc011, 0xc012, 0xc013, 0xc014,
    0xc015, 0xc016, 0xc017, 0xc018, 0xc019,
    0xc01a, 0xc01b, 0xc01c, 0xc01d, 0xc01e, 0xc01f, 0xc020, 0xc021, 0xc022,
    0xc023, 0xc024, 0xc025, 0xc026, 0xc027, 0xc028, 0xc029, 0xc02a, 0xc02b, 0xc02c,
    0xc02d, 0xc02e, 0xc02f, 0xc030, 0xc031, 0xc032};
// clang-format on

const std::array<SuiteId, 136>& tls_defaults() {
  static const auto arr = [] {
    std::array<SuiteId, 136> out{};
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = SuiteId::tls(kTlsDefaultValues[i]);
    return out;
  }();
  return arr;
}

}  // namespace

std::string_view to_string(ProtocolVersion v) {
  switch (v) {
    case ProtocolVersion::SSLv2: return "SSLv2";
    case ProtocolVersion::SSLv3: return "SSLv3";
    case ProtocolVersion::TLSv1: return "TLSv1";
    case ProtocolVersion::TLSv1_1: return "TLSv1.1";
    case ProtocolVersion::TLSv1_2: return "TLSv1.2";
  }
  return "?";
}

std::optional<ProtocolVersion> parse_version(std::string_view s) {
  for (auto v : kAllVersions)
    if (to_string(v) == s) return v;
  if (s == "TLSv1.0") return ProtocolVersion::TLSv1;
  return std::nullopt;
}

std::optional<std::array<std::uint8_t, 2>> wire_bytes(ProtocolVersion v) {
  switch (v) {
    case ProtocolVersion::SSLv2: return std::nullopt;
    case ProtocolVersion::SSLv3: return std::array<std::uint8_t, 2>{3, 0};
    case ProtocolVersion::TLSv1: return std::array<std::uint8_t, 2>{3, 1};
    case ProtocolVersion::TLSv1_1: return std::array<std::uint8_t, 2>{3, 2};
    case ProtocolVersion::TLSv1_2: return std::array<std::uint8_t, 2>{3, 3};
  }
  return std::nullopt;
}

std::optional<ProtocolVersion> version_from_wire(std::uint8_t major, std::uint8_t minor) {
  if (major == 0 && minor == 2) return ProtocolVersion::SSLv2;
  if (major != 3) return std::nullopt;
  switch (minor) {
    case 0: return ProtocolVersion::SSLv3;
    case 1: return ProtocolVersion::TLSv1;
    case 2: return ProtocolVersion::TLSv1_1;
    case 3: return ProtocolVersion::TLSv1_2;
    default: return std::nullopt;
  }
}

std::string_view to_string(KeyExchange k) {
  switch (k) {
    case KeyExchange::RSA: return "RSA";
    case KeyExchange::DHE_RSA: return "DHE_RSA";
    case KeyExchange::ECDHE_RSA: return "ECDHE_RSA";
    case KeyExchange::ADH: return "ADH";
    case KeyExchange::AECDH: return "AECDH";
    case KeyExchange::Other: return "other";
  }
  return "?";
}

std::string_view to_string(Mac m) {
  switch (m) {
    case Mac::MD5: return "MD5";
    case Mac::SHA1: return "SHA1";
    case Mac::SHA256: return "SHA256";
    case Mac::SHA384: return "SHA384";
    case Mac::None: return "none";
  }
  return "?";
}

SuiteId SuiteId::from_hex(std::string_view hex) {
  if (hex.starts_with("0x") || hex.starts_with("0X")) hex.remove_prefix(2);
  if (hex.size() != 4 && hex.size() != 6) throw ParseError(fmt::format("bad suite id '{}'", hex));
  auto raw = mailtls::from_hex(hex);
  std::uint32_t v = 0;
  for (auto b : raw) v = v << 8 | b;
  return hex.size() == 4 ? tls(static_cast<std::uint16_t>(v)) : sslv2(v);
}

Bytes SuiteId::bytes() const {
  Bytes out;
  for (int i = width_ - 1; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(value_ >> (8 * i)));
  return out;
}

std::string SuiteId::to_hex() const { return mailtls::to_hex(bytes()); }

std::vector<std::string_view> split_fields(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? line.npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Registry Registry::parse(std::string_view text) {
  Registry reg;
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    if (line.empty() || line.front() == '#') return;
    if (line.starts_with("id,")) return;  // header
    auto fail = [&](std::string_view what) {
      throw ParseError(fmt::format("registry line {}: {}", line_no, what));
    };
    auto f = split_fields(line);
    if (f.size() != 8 && f.size() != 9) fail(fmt::format("expected 8 or 9 columns, got {}", f.size()));

    CipherSuiteInfo e;
    try {
      e.id = SuiteId::from_hex(f[0]);
    } catch (const ParseError&) {
      fail("bad id");
    }
    e.name = std::string(f[1]);
    if (e.name.empty()) fail("empty name");
    auto kex = parse_kex(f[2]);
    if (!kex) fail("unknown key exchange");
    e.kex = *kex;
    e.enc = std::string(f[3]);
    if (e.enc.empty()) fail("empty encryption");
    auto [p, ec] = std::from_chars(f[4].data(), f[4].data() + f[4].size(), e.enc_key_bits);
    if (ec != std::errc{} || p != f[4].data() + f[4].size() || e.enc_key_bits < 0) fail("bad encKeyBits");
    auto mac = parse_mac(f[5]);
    if (!mac) fail("unknown mac");
    e.mac = *mac;
    if (f[6] == "true") e.export_grade = true;
    else if (f[6] != "false") fail("exportGrade must be true or false");
    for (auto v : split_fields(f[7], ';')) {
      auto pv = parse_version(v);
      if (!pv) fail(fmt::format("unknown version '{}'", v));
      e.specified_versions.insert(*pv);
    }
    if (f.size() == 9) e.alias = std::string(f[8]);
    if (e.export_grade != (e.enc_key_bits <= 56 && has_export_marker(e)))
      fail("exportGrade inconsistent with key size and EXP marker");

    if (reg.by_id_.contains(e.id)) fail(fmt::format("duplicate id {}", e.id.to_hex()));
    reg.by_id_.emplace(e.id, reg.entries_.size());
    reg.entries_.push_back(std::move(e));
  });
  return reg;
}

Registry Registry::load(const std::filesystem::path& path) { return parse(read_file(path)); }

const Registry& Registry::bundled() {
  static const Registry reg = parse(bundled::kRegistryCsv);
  return reg;
}

const CipherSuiteInfo* Registry::find(SuiteId id) const {
  auto it = by_id_.find(id);
  return it == by_id_.end() ? nullptr : &entries_[it->second];
}

std::optional<CipherSuiteInfo> Registry::classify(SuiteId id) const {
  if (auto* e = find(id)) return *e;
  return std::nullopt;
}

const CipherSuiteInfo* Registry::find_by_name(std::string_view name) const {
  const CipherSuiteInfo* v2_match = nullptr;
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
    if (e.alias == name) {
      if (!e.id.is_sslv2()) return &e;
      if (!v2_match) v2_match = &e;
    }
  }
  if (v2_match) return v2_match;
  try {
    return find(SuiteId::from_hex(name));
  } catch (const ParseError&) {
    return nullptr;
  }
}

std::size_t ProbePlan::count(ProtocolVersion v) const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [v](const ProbeEntry& e) { return e.version == v; }));
}

ProbePlan ProbePlan::restricted_to(const std::set<ProtocolVersion>& versions) const {
  ProbePlan out;
  out.inter_probe_delay = inter_probe_delay;
  for (const auto& e : entries)
    if (versions.contains(e.version)) out.entries.push_back(e);
  for (const auto& [v, list] : preference_sets)
    if (versions.contains(v)) out.preference_sets.emplace(v, list);
  return out;
}

std::span<const SuiteId> default_sslv2_suites() { return kSslv2Defaults; }
std::span<const SuiteId> default_tls_suites() { return tls_defaults(); }

std::vector<SuiteId> default_preference_candidates(const Registry& registry) {
  std::vector<SuiteId> out;
  for (auto id : default_tls_suites()) {
    const auto* e = registry.find(id);
    if (!e) throw ConfigError(fmt::format("registry lacks default suite {}", id.to_hex()));
    if (e->enc.starts_with("CAMELLIA") || e->enc.starts_with("3DES")) continue;
    out.push_back(id);
  }
  return out;
}

ProbePlan default_probe_plan(const Registry& registry) {
  ProbePlan plan;
  auto require = [&](SuiteId id) {
    if (!registry.find(id)) throw ConfigError(fmt::format("registry lacks default suite {}", id.to_hex()));
  };
  for (auto id : default_sslv2_suites()) {
    require(id);
    plan.entries.push_back({ProtocolVersion::SSLv2, id});
  }
  for (auto v : kAllVersions) {
    if (v == ProtocolVersion::SSLv2) continue;
    for (auto id : default_tls_suites()) {
      require(id);
      plan.entries.push_back({v, id});
    }
  }
  auto candidates = default_preference_candidates(registry);
  for (auto v : kAllVersions)
    if (v != ProtocolVersion::SSLv2) plan.preference_sets.emplace(v, candidates);
  return plan;
}

ProbePlan parse_probe_plan(std::string_view text, const Registry& registry) {
  ProbePlan plan;
  int id_col = -1;
  int version_col = -1;
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    if (line.empty() || line.front() == '#') return;
    auto f = split_fields(line);
    if (id_col < 0) {
      for (std::size_t i = 0; i < f.size(); ++i) {
        if (f[i] == "id") id_col = static_cast<int>(i);
        if (f[i] == "version") version_col = static_cast<int>(i);
      }
      if (id_col < 0 || version_col < 0)
        throw ParseError(fmt::format("plan line {}: header needs 'id' and 'version' columns", line_no));
      return;
    }
    auto need = static_cast<std::size_t>(std::max(id_col, version_col));
    if (f.size() <= need) throw ParseError(fmt::format("plan line {}: missing columns", line_no));
    SuiteId id;
    try {
      id = SuiteId::from_hex(f[static_cast<std::size_t>(id_col)]);
    } catch (const ParseError&) {
      throw ParseError(fmt::format("plan line {}: bad id", line_no));
    }
    auto v = parse_version(f[static_cast<std::size_t>(version_col)]);
    if (!v) throw ParseError(fmt::format("plan line {}: unknown version", line_no));
    if (!registry.find(id)) throw ParseError(fmt::format("plan line {}: suite {} not in registry", line_no, id.to_hex()));
    if ((*v == ProtocolVersion::SSLv2) != id.is_sslv2())
      throw ParseError(fmt::format("plan line {}: id width does not match version", line_no));
    plan.entries.push_back({*v, id});
  });
  std::vector<SuiteId> candidates;
  for (const auto& e : registry.entries()) {
    if (e.id.is_sslv2() || e.enc.starts_with("CAMELLIA") || e.enc.starts_with("3DES")) continue;
    bool planned = std::any_of(plan.entries.begin(), plan.entries.end(),
                               [&](const ProbeEntry& p) { return p.suite == e.id; });
    if (planned) candidates.push_back(e.id);
  }
  std::set<ProtocolVersion> versions;
  for (const auto& e : plan.entries) versions.insert(e.version);
  if (!candidates.empty())
    for (auto v : versions)
      if (v != ProtocolVersion::SSLv2) plan.preference_sets.emplace(v, candidates);
  return plan;
}

ProbePlan load_probe_plan(const std::filesystem::path& path, const Registry& registry) {
  return parse_probe_plan(read_file(path), registry);
}

}  // namespace mailtls
