#include "mailtls/cipher_islands.hpp"

#include <algorithm>
#include <bit>
#include <unordered_map>

namespace mailtls {

namespace bundled {
extern const std::string_view kRfc7525Allowlist;
}

namespace {

using Bits = std::vector<std::uint64_t>;

void set_bit(Bits& b, std::size_t i) { b[i / 64] |= std::uint64_t{1} << (i % 64); }

std::uint64_t checked_denominator(std::uint64_t w) {
  if (w == 0) throw ContractViolation("total weight must be positive");
  if (w > 0x7fffffffULL) throw ContractViolation("total weight too large for exact pair counts");
  return w * w;
}

}  // namespace

double PairDistribution::probability(const std::string& label) const {
  auto it = counts.find(label);
  if (it == counts.end() || denominator == 0) return 0.0;
  return static_cast<double>(it->second) / static_cast<double>(denominator);
}

std::vector<CipherConfigNode> normalize_nodes(std::vector<CipherConfigNode> nodes) {
  std::map<CipherConfig, std::uint64_t> merged;
  for (auto& n : nodes)
    if (n.weight > 0) merged[std::move(n.config)] += n.weight;
  std::vector<CipherConfigNode> out;
  out.reserve(merged.size());
  for (auto& [c, w] : merged) out.push_back({c, w});
  return out;
}

std::vector<CipherConfigNode> build_graph(std::span<const HostScanRecord> records) {
  std::vector<CipherConfigNode> nodes;
  for (const auto& r : records)
    if (r.valid) nodes.push_back({r.accepted_pairs(), 1});
  return normalize_nodes(std::move(nodes));
}

std::string bucket_label(const std::set<ProtocolVersion>& versions) {
  if (versions.empty()) return std::string(kPlaintextBucket);
  std::string out;
  for (auto v : kAllVersions) {
    if (!versions.contains(v)) continue;
    if (!out.empty()) out += ", ";
    out += to_string(v);
  }
  return out;
}

PairDistribution compatibility_report(std::span<const CipherConfigNode> nodes) {
  PairDistribution d;
  for (const auto& n : nodes) d.total_weight += n.weight;
  d.denominator = checked_denominator(d.total_weight);

  // Index every (version, suite) pair that occurs.
  std::map<ProbeEntry, std::size_t> index;
  for (const auto& n : nodes)
    for (const auto& e : n.config) index.emplace(e, 0);
  std::size_t k = 0;
  for (auto& [e, i] : index) i = k++;
  const std::size_t words = std::max<std::size_t>(1, (k + 63) / 64);

  std::vector<Bits> version_mask(kAllVersions.size(), Bits(words));
  for (const auto& [e, i] : index) set_bit(version_mask[static_cast<std::size_t>(e.version)], i);

  std::vector<Bits> bits(nodes.size(), Bits(words));
  for (std::size_t n = 0; n < nodes.size(); ++n)
    for (const auto& e : nodes[n].config) set_bit(bits[n], index.at(e));

  // Bucket counts keyed by version bitmask, then rendered.
  std::map<unsigned, std::uint64_t> by_mask;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (std::size_t j = i; j < nodes.size(); ++j) {
      unsigned mask = 0;
      for (std::size_t v = 0; v < kAllVersions.size(); ++v) {
        for (std::size_t w = 0; w < words; ++w) {
          if (bits[i][w] & bits[j][w] & version_mask[v][w]) {
            mask |= 1u << v;
            break;
          }
        }
      }
      auto pairs = nodes[i].weight * nodes[j].weight * (i == j ? 1 : 2);
      by_mask[mask] += pairs;
    }
  }
  for (const auto& [mask, c] : by_mask) {
    std::set<ProtocolVersion> vs;
    for (std::size_t v = 0; v < kAllVersions.size(); ++v)
      if (mask & (1u << v)) vs.insert(kAllVersions[v]);
    d.counts[bucket_label(vs)] += c;
  }
  return d;
}

SuitePolicy drop_rc4_policy(const Registry& registry) {
  return [&registry](const ProbeEntry& e) {
    const auto* info = registry.find(e.suite);
    return !(info && info->enc.starts_with("RC4"));
  };
}

SuitePolicy allowlist_policy(std::span<const SuiteId> allowed) {
  std::set<SuiteId> set(allowed.begin(), allowed.end());
  return [set = std::move(set)](const ProbeEntry& e) { return set.contains(e.suite); };
}

std::vector<CipherConfigNode> apply_policy(std::span<const CipherConfigNode> nodes, const SuitePolicy& keep) {
  std::vector<CipherConfigNode> out;
  out.reserve(nodes.size());
  for (const auto& n : nodes) {
    CipherConfigNode m;
    m.weight = n.weight;
    for (const auto& e : n.config)
      if (keep(e)) m.config.insert(e);
    out.push_back(std::move(m));
  }
  return normalize_nodes(std::move(out));
}

PairDistribution per_suite_attribution(std::span<const CipherConfigNode> nodes, std::span<const SuiteId> ranking) {
  PairDistribution d;
  for (const auto& n : nodes) d.total_weight += n.weight;
  d.denominator = checked_denominator(d.total_weight);

  std::unordered_map<SuiteId, std::size_t, SuiteIdHash> rank;
  for (std::size_t i = 0; i < ranking.size(); ++i) rank.emplace(ranking[i], i);

  // A pair can only use an entry both hosts accept at the same version. Bits
  // are ordered by suite rank so the lowest common bit names the winner.
  std::map<std::pair<std::size_t, ProbeEntry>, std::size_t> index;
  for (const auto& n : nodes)
    for (const auto& e : n.config) {
      auto it = rank.find(e.suite);
      if (it == rank.end()) throw ContractViolation("suite " + e.suite.to_hex() + " missing from ranking");
      index.emplace(std::pair{it->second, e}, 0);
    }
  std::vector<std::size_t> bit_rank;
  for (auto& [key, i] : index) {
    i = bit_rank.size();
    bit_rank.push_back(key.first);
  }
  const std::size_t words = std::max<std::size_t>(1, (bit_rank.size() + 63) / 64);

  std::vector<Bits> bits(nodes.size(), Bits(words));
  for (std::size_t n = 0; n < nodes.size(); ++n)
    for (const auto& e : nodes[n].config) set_bit(bits[n], index.at({rank.at(e.suite), e}));

  std::map<std::size_t, std::uint64_t> by_rank;
  std::uint64_t plaintext = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (std::size_t j = i; j < nodes.size(); ++j) {
      auto pairs = nodes[i].weight * nodes[j].weight * (i == j ? 1 : 2);
      bool found = false;
      for (std::size_t w = 0; w < words; ++w) {
        auto x = bits[i][w] & bits[j][w];
        if (x) {
          by_rank[bit_rank[w * 64 + static_cast<std::size_t>(std::countr_zero(x))]] += pairs;
          found = true;
          break;
        }
      }
      if (!found) plaintext += pairs;
    }
  }
  for (const auto& [r, c] : by_rank) d.counts[ranking[r].to_hex()] = c;
  if (plaintext > 0) d.counts[std::string(kPlaintextBucket)] = plaintext;
  return d;
}

std::vector<SuiteId> parse_suite_list(std::string_view text, const Registry& registry) {
  std::vector<SuiteId> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.remove_suffix(1);
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.front()))) line.remove_prefix(1);
    if (line.empty()) continue;
    const auto* info = registry.find_by_name(line);
    if (!info) throw ParseError("suite list line " + std::to_string(line_no) + ": unknown suite '" + std::string(line) + "'");
    if (std::find(out.begin(), out.end(), info->id) == out.end()) out.push_back(info->id);
  }
  return out;
}

std::vector<SuiteId> bundled_allowlist(const Registry& registry) {
  return parse_suite_list(bundled::kRfc7525Allowlist, registry);
}

}  // namespace mailtls
