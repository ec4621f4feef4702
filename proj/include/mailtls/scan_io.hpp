#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "mailtls/scanner.hpp"

namespace mailtls {

inline constexpr std::string_view kScanFormat = "mailtls-scan";
inline constexpr int kScanFormatVersion = 1;

/// RFC 3339 UTC with microseconds, e.g. 2015-04-01T12:00:00.000001Z.
std::string format_timestamp(Timestamp t);
/// Accepts fractional seconds of any precision and a `Z` or +00:00 suffix.
Timestamp parse_timestamp(std::string_view s);

std::string scan_header_line();
std::string record_to_json_line(const HostScanRecord& record);
/// Throws ParseError on schema violations.
HostScanRecord record_from_json_line(std::string_view line);

struct ScanFile {
  std::vector<HostScanRecord> records;
  bool partial = false;
};

/// Reads a scan file. Throws FormatVersionError when the header is missing or
/// names another format/version; ParseError names the offending line.
ScanFile read_scan_file(const std::filesystem::path& path);
ScanFile read_scan_stream(std::istream& in);

/// Writes the header on construction and one line per record.
class JsonlSink : public RecordSink {
 public:
  explicit JsonlSink(std::ostream& out);
  void write(const HostScanRecord& record) override;
  void mark_partial() noexcept override;

 private:
  std::ostream& out_;
  std::mutex mu_;
};

/// Target list: lines "ip,port[,protocol]" or JSON objects with ip, port and
/// optional protocol. Blank lines and '#' comments are skipped.
std::vector<Endpoint> parse_targets(std::string_view text);

}  // namespace mailtls
