#include "mailtls/cert_analysis.hpp"

#include <algorithm>
#include <ctime>
#include <fstream>
#include <regex>
#include <set>

#include <openssl/bio.h>
#include <openssl/bn.h>
#include <openssl/core_names.h>
#include <openssl/err.h>
#include <openssl/evp.h>
#include <openssl/pem.h>
#include <openssl/x509.h>
#include <openssl/x509v3.h>

namespace mailtls {

namespace {

struct X509Free {
  void operator()(X509* x) const { X509_free(x); }
};
using X509Ptr = std::unique_ptr<X509, X509Free>;

X509Ptr decode(ByteView der) {
  const unsigned char* p = der.data();
  X509Ptr x(d2i_X509(nullptr, &p, static_cast<long>(der.size())));
  if (x && p != der.data() + der.size()) return nullptr;
  return x;
}

std::string name_entry(const X509_NAME* name, int nid) {
  int idx = X509_NAME_get_index_by_NID(name, nid, -1);
  if (idx < 0) return {};
  auto* data = X509_NAME_ENTRY_get_data(X509_NAME_get_entry(name, idx));
  unsigned char* utf8 = nullptr;
  int len = ASN1_STRING_to_UTF8(&utf8, data);
  if (len < 0) return {};
  std::string out(reinterpret_cast<char*>(utf8), static_cast<std::size_t>(len));
  OPENSSL_free(utf8);
  return out;
}

DistinguishedName dn(const X509_NAME* name) {
  return {name_entry(name, NID_commonName), name_entry(name, NID_organizationName),
          name_entry(name, NID_organizationalUnitName)};
}

Timestamp asn1_time(const ASN1_TIME* t) {
  std::tm tm{};
  if (!t || ASN1_TIME_to_tm(t, &tm) != 1) return Timestamp{};
  return Timestamp(std::chrono::seconds(timegm(&tm)));
}

Bytes bn_bytes(const BIGNUM* bn) {
  Bytes out(static_cast<std::size_t>(BN_num_bytes(bn)));
  BN_bn2bin(bn, out.data());
  return out;
}

bool names_equal(const X509_NAME* a, const X509_NAME* b) { return X509_NAME_cmp(a, b) == 0; }

bool signed_by(X509* cert, X509* issuer) {
  EVP_PKEY* key = X509_get0_pubkey(issuer);
  return key && X509_verify(cert, key) == 1;
}

bool within(const CertificateRecord& r, Timestamp at) { return r.not_before <= at && at <= r.not_after; }

bool valid_date(const std::string& d) {
  static const std::regex re(R"(\d{4}-\d{2}-\d{2})");
  return std::regex_match(d, re);
}

}  // namespace

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Ok: return "ok";
    case Verdict::SelfSigned: return "selfSigned";
    case Verdict::UnableToGetLocalIssuer: return "unableToGetLocalIssuer";
    case Verdict::Expired: return "expired";
    case Verdict::ValidationError: return "validationError";
  }
  return "?";
}

std::optional<Verdict> parse_verdict(std::string_view s) {
  for (auto v : kAllVerdicts)
    if (to_string(v) == s) return v;
  return std::nullopt;
}

CertificateRecord parse_certificate(ByteView der, bool is_leaf) {
  CertificateRecord r;
  r.is_leaf = is_leaf;
  r.der.assign(der.begin(), der.end());
  r.sha1_fingerprint = sha1_hex(der);
  auto x = der.empty() ? nullptr : decode(der);
  if (!x) {
    r.malformed = true;
    return r;
  }
  r.subject = dn(X509_get_subject_name(x.get()));
  r.issuer = dn(X509_get_issuer_name(x.get()));
  r.not_before = asn1_time(X509_get0_notBefore(x.get()));
  r.not_after = asn1_time(X509_get0_notAfter(x.get()));
  EVP_PKEY* key = X509_get0_pubkey(x.get());
  if (!key) {
    r.malformed = true;
    return r;
  }
  if (EVP_PKEY_get_base_id(key) == EVP_PKEY_RSA) {
    BIGNUM* n = nullptr;
    BIGNUM* e = nullptr;
    if (EVP_PKEY_get_bn_param(key, OSSL_PKEY_PARAM_RSA_N, &n) == 1 &&
        EVP_PKEY_get_bn_param(key, OSSL_PKEY_PARAM_RSA_E, &e) == 1 && !BN_is_zero(n)) {
      r.key_algo = KeyAlgo::RSA;
      r.rsa_modulus = bn_bytes(n);
      r.rsa_exponent = bn_bytes(e);
      r.key_bits = bit_length(r.rsa_modulus);
    } else {
      r.malformed = true;
    }
    BN_free(n);
    BN_free(e);
  } else {
    r.key_algo = KeyAlgo::Other;
    r.key_bits = EVP_PKEY_get_bits(key);
  }
  return r;
}

std::vector<CertificateRecord> parse_chain(std::span<const Bytes> der_blobs) {
  std::vector<CertificateRecord> out;
  out.reserve(der_blobs.size());
  for (std::size_t i = 0; i < der_blobs.size(); ++i) out.push_back(parse_certificate(der_blobs[i], i == 0));
  return out;
}

std::vector<Bytes> parse_pem_bundle(std::string_view pem) {
  std::vector<Bytes> out;
  std::unique_ptr<BIO, decltype(&BIO_free)> bio(BIO_new_mem_buf(pem.data(), static_cast<int>(pem.size())), BIO_free);
  for (;;) {
    X509Ptr x(PEM_read_bio_X509(bio.get(), nullptr, nullptr, nullptr));
    if (!x) break;
    unsigned char* buf = nullptr;
    int len = i2d_X509(x.get(), &buf);
    if (len <= 0) throw ParseError("cannot re-encode certificate");
    out.emplace_back(buf, buf + len);
    OPENSSL_free(buf);
  }
  ERR_clear_error();
  return out;
}

std::vector<Bytes> read_pem_bundle(const std::filesystem::path& path) { return parse_pem_bundle(read_file(path)); }

struct TrustStore::Impl {
  std::vector<X509Ptr> roots;
};

TrustStore::TrustStore() : impl_(std::make_unique<Impl>()) {}
TrustStore::~TrustStore() = default;
TrustStore::TrustStore(TrustStore&&) noexcept = default;
TrustStore& TrustStore::operator=(TrustStore&&) noexcept = default;

TrustStore TrustStore::from_der(std::span<const Bytes> roots) {
  TrustStore s;
  for (const auto& der : roots) {
    auto x = decode(der);
    if (!x) throw ParseError("undecodable trust anchor");
    s.impl_->roots.push_back(std::move(x));
  }
  return s;
}

TrustStore TrustStore::load_pem(const std::filesystem::path& path) {
  auto ders = read_pem_bundle(path);
  return from_der(ders);
}

std::size_t TrustStore::size() const { return impl_->roots.size(); }

Verdict validate_chain(std::span<const Bytes> chain, const TrustStore& store, Timestamp at) {
  if (chain.empty()) throw ContractViolation("empty chain");
  std::vector<X509Ptr> presented;
  std::vector<CertificateRecord> records;
  for (std::size_t i = 0; i < chain.size(); ++i) {
    auto x = decode(chain[i]);
    if (!x) return Verdict::ValidationError;
    presented.push_back(std::move(x));
    records.push_back(parse_certificate(chain[i], i == 0));
  }

  X509* leaf = presented.front().get();
  if (names_equal(X509_get_subject_name(leaf), X509_get_issuer_name(leaf)) && signed_by(leaf, leaf))
    return Verdict::SelfSigned;

  // Build a path by name: trust anchors first, then presented certificates.
  std::vector<std::size_t> path{0};
  std::vector<X509*> anchors;
  for (;;) {
    X509* cur = presented[path.back()].get();
    const X509_NAME* want = X509_get_issuer_name(cur);
    for (const auto& r : store.impl_->roots)
      if (names_equal(X509_get_subject_name(r.get()), want)) anchors.push_back(r.get());
    if (!anchors.empty()) break;
    std::optional<std::size_t> next;
    for (std::size_t i = 1; i < presented.size(); ++i) {
      if (std::find(path.begin(), path.end(), i) != path.end()) continue;
      if (names_equal(X509_get_subject_name(presented[i].get()), want)) {
        next = i;
        break;
      }
    }
    if (!next) return Verdict::UnableToGetLocalIssuer;
    X509* cand = presented[*next].get();
    if (names_equal(X509_get_subject_name(cand), X509_get_issuer_name(cand)))
      return Verdict::UnableToGetLocalIssuer;  // untrusted root
    path.push_back(*next);
    if (path.size() > 32) return Verdict::ValidationError;
  }

  for (auto i : path)
    if (!within(records[i], at)) return Verdict::Expired;

  for (std::size_t k = 0; k + 1 < path.size(); ++k) {
    X509* cert = presented[path[k]].get();
    X509* issuer = presented[path[k + 1]].get();
    if (!signed_by(cert, issuer)) return Verdict::ValidationError;
    if (X509_check_ca(issuer) != 1) return Verdict::ValidationError;
  }
  X509* top = presented[path.back()].get();
  bool anchored = std::any_of(anchors.begin(), anchors.end(), [&](X509* a) { return signed_by(top, a); });
  if (!anchored) return Verdict::ValidationError;
  return Verdict::Ok;
}

std::vector<HostLeaf> collect_leaves(std::span<const HostScanRecord> records, const TrustStore& store,
                                     std::optional<Timestamp> at) {
  std::vector<HostLeaf> out;
  for (const auto& r : records) {
    const auto* chain = r.leaf_chain();
    if (!chain) continue;
    HostLeaf h;
    h.ip = r.endpoint.ip;
    h.port = r.endpoint.port;
    h.leaf = parse_certificate(chain->front(), true);
    h.verdict = validate_chain(*chain, store, at.value_or(r.scan_start));
    out.push_back(std::move(h));
  }
  return out;
}

int key_size_bucket(int bits) {
  switch (bits) {
    case 512:
    case 1024:
    case 2048:
    case 4096: return bits;
    default: return 0;
  }
}

std::map<int, double> KeySizeHistogram::fractions() const {
  std::map<int, double> out;
  if (rsa_total == 0) return out;
  for (const auto& [b, c] : counts) out[b] = static_cast<double>(c) / static_cast<double>(rsa_total);
  return out;
}

KeySizeHistogram key_size_histogram(std::span<const HostLeaf> leaves, KeyPopulation population) {
  KeySizeHistogram h;
  for (const auto& l : leaves) {
    if (l.leaf.malformed) continue;
    if (population == KeyPopulation::TrustedLeaves && l.verdict != Verdict::Ok) continue;
    if (population == KeyPopulation::SelfSigned && l.verdict != Verdict::SelfSigned) continue;
    if (l.leaf.key_algo != KeyAlgo::RSA) {
      ++h.non_rsa;
      continue;
    }
    ++h.counts[key_size_bucket(l.leaf.key_bits)];
    ++h.rsa_total;
  }
  return h;
}

std::size_t CertCluster::total() const {
  std::size_t n = 0;
  for (const auto& [_, c] : per_port_ips) n += c;
  return n;
}

std::vector<CertCluster> common_certificate_clusters(std::span<const HostLeaf> leaves) {
  std::map<std::string, CertCluster> by_fp;
  std::map<std::string, std::map<std::uint16_t, std::set<std::string>>> ips;
  for (const auto& l : leaves) {
    if (l.leaf.malformed) continue;
    auto& c = by_fp[l.leaf.sha1_fingerprint];
    c.fingerprint = l.leaf.sha1_fingerprint;
    c.subject_cn = l.leaf.subject.cn;
    c.issuer_cn = l.leaf.issuer.cn;
    ips[c.fingerprint][l.port].insert(l.ip);
  }
  std::vector<CertCluster> out;
  for (auto& [fp, c] : by_fp) {
    for (const auto& [port, set] : ips[fp]) c.per_port_ips[port] = set.size();
    out.push_back(std::move(c));
  }
  std::stable_sort(out.begin(), out.end(), [](const CertCluster& a, const CertCluster& b) {
    return a.total() != b.total() ? a.total() > b.total() : a.fingerprint < b.fingerprint;
  });
  return out;
}

std::vector<SubjectCluster> self_signed_subject_clusters(std::span<const HostLeaf> leaves) {
  struct Acc {
    std::set<std::string> ips;
    std::set<std::string> fps;
    std::map<int, std::size_t> bits;
  };
  std::map<DistinguishedName, Acc> groups;
  for (const auto& l : leaves) {
    if (l.verdict != Verdict::SelfSigned || l.leaf.malformed) continue;
    auto& a = groups[l.leaf.subject];
    a.ips.insert(l.ip);
    if (a.fps.insert(l.leaf.sha1_fingerprint).second) ++a.bits[l.leaf.key_bits];
  }
  std::vector<SubjectCluster> out;
  for (const auto& [subject, a] : groups) {
    SubjectCluster c;
    c.subject = subject;
    c.ip_count = a.ips.size();
    c.distinct_certs = a.fps.size();
    std::size_t best = 0;
    for (const auto& [bits, n] : a.bits)
      if (n > best) {
        best = n;
        c.key_bits_mode = bits;
      }
    out.push_back(std::move(c));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const SubjectCluster& a, const SubjectCluster& b) { return a.ip_count > b.ip_count; });
  return out;
}

Snapshot load_pem_snapshot(std::string date, const std::filesystem::path& dir) {
  static const std::regex name_re(R"((\d+\.\d+\.\d+\.\d+)_(\d+)\.pem)");
  Snapshot s;
  s.date = std::move(date);
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::smatch m;
    auto fname = f.filename().string();
    if (!std::regex_match(fname, m, name_re)) continue;
    auto ders = read_pem_bundle(f);
    if (ders.empty()) continue;
    auto port = std::stoul(m[2].str());
    if (port == 0 || port > 65535) throw ParseError("bad port in " + fname);
    s.certs.push_back({static_cast<std::uint16_t>(port), parse_certificate(ders.front(), true)});
  }
  return s;
}

Snapshot snapshot_from_records(std::string date, std::span<const HostScanRecord> records) {
  Snapshot s;
  s.date = std::move(date);
  for (const auto& r : records)
    if (const auto* c = r.leaf_chain()) s.certs.push_back({r.endpoint.port, parse_certificate(c->front(), true)});
  return s;
}

KeySizeSeries key_size_time_series(std::span<const Snapshot> snapshots) {
  KeySizeSeries out;
  std::set<std::uint16_t> ports;
  for (std::size_t i = 0; i < snapshots.size(); ++i) {
    if (!valid_date(snapshots[i].date)) throw ContractViolation("snapshot date must be YYYY-MM-DD: " + snapshots[i].date);
    if (i > 0 && !(snapshots[i - 1].date < snapshots[i].date))
      throw ContractViolation("snapshots must be sorted by date");
    for (const auto& c : snapshots[i].certs) ports.insert(c.port);
  }
  for (auto p : ports) out.by_port[p].resize(snapshots.size());
  for (std::size_t i = 0; i < snapshots.size(); ++i) {
    out.dates.push_back(snapshots[i].date);
    for (const auto& c : snapshots[i].certs) {
      if (c.cert.malformed || c.cert.key_algo != KeyAlgo::RSA) continue;
      ++out.by_port[c.port][i][key_size_bucket(c.cert.key_bits)];
    }
  }
  return out;
}

}  // namespace mailtls
