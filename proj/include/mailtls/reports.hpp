#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mailtls/cert_analysis.hpp"
#include "mailtls/cipher_islands.hpp"
#include "mailtls/cipher_registry.hpp"
#include "mailtls/scanner.hpp"

namespace mailtls {

enum class ReportKind {
  Summary,
  VersionSupport,
  SuiteAcceptance,
  Preference,
  KeyExchange,
  Encryption,
  DhParams,
  Curves,
  Truststore,
  KeySizes,
  CommonCerts,
  SelfSignedSubjects,
  Timeseries,
  AuthPlain,
  Islands,
  ExportViolation,
  SharedPrimes,
};

std::string_view to_string(ReportKind k);
std::optional<ReportKind> parse_report_kind(std::string_view s);
std::vector<std::string_view> report_kind_names();

enum class OutputFormat { Text, Json, Csv };
std::optional<OutputFormat> parse_output_format(std::string_view s);

inline constexpr std::string_view kReportFormat = "mailtls-report";
inline constexpr int kReportFormatVersion = 1;

struct Cell {
  enum class Kind { Text, Count, Fraction };
  Kind kind = Kind::Text;
  std::string text;
  std::uint64_t num = 0;
  std::uint64_t den = 0;

  static Cell str(std::string s) { return {Kind::Text, std::move(s), 0, 0}; }
  static Cell count(std::uint64_t n) { return {Kind::Count, {}, n, 0}; }
  static Cell fraction(std::uint64_t n, std::uint64_t d) { return {Kind::Fraction, {}, n, d}; }
  double value() const { return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den); }
};

struct Table {
  std::string title;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;
  std::vector<std::string> notes;
};

struct ReportInputs {
  const Registry* registry = nullptr;
  std::vector<HostScanRecord> records;
  bool have_records = false;
  const TrustStore* truststore = nullptr;
  std::optional<Timestamp> validation_time;
  std::vector<Snapshot> snapshots;
  std::optional<std::vector<SuiteId>> allowlist;
  std::optional<std::vector<SuiteId>> ranking;
  bool drop_rc4 = false;
  std::set<std::uint16_t> ports;  // empty: all ports
  std::size_t top_n = 20;
};

/// Throws UsageError when a required input is missing.
std::vector<Table> build_report(ReportKind kind, const ReportInputs& inputs);

/// Text percentages use two decimals; machine formats keep exact fractions.
std::string render(const std::vector<Table>& tables, OutputFormat format, std::string_view kind);

/// Hosts accepting export-grade suites at TLSv1.1 or TLSv1.2.
struct ExportViolation {
  std::string ip;
  std::uint16_t port = 0;
  ProtocolVersion version;
  SuiteId suite;
};
std::vector<ExportViolation> export_violations(std::span<const HostScanRecord> records, const Registry& registry);

/// Exclusive version-set rows: label and the exact set a host must support.
struct ExclusiveRow {
  std::string label;
  std::set<ProtocolVersion> versions;
};
std::span<const ExclusiveRow> exclusive_version_rows();

/// Versions at which the record accepted at least one suite.
std::set<ProtocolVersion> supported_versions(const HostScanRecord& record);

/// Percentage text with two decimals, e.g. "41.63%".
std::string percent_text(std::uint64_t num, std::uint64_t den);

}  // namespace mailtls
