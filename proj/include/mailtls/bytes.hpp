#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mailtls/errors.hpp"

namespace mailtls {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

/// Lowercase hex, no separators.
std::string to_hex(ByteView data);
Bytes from_hex(std::string_view hex);

std::string to_base64(ByteView data);
Bytes from_base64(std::string_view text);

std::string sha1_hex(ByteView data);
std::string sha256_hex(ByteView data);

inline ByteView as_bytes(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

/// Number of significant bits of an unsigned big-endian integer.
/// Throws ContractViolation when the value is zero.
int bit_length(ByteView big_endian);

/// Drops leading zero octets (keeps at least one octet).
Bytes strip_leading_zeros(ByteView big_endian);

/// Thrown by ByteReader when a read runs past the end of its input.
class TruncatedInput : public ParseError {
 public:
  TruncatedInput() : ParseError("truncated") {}
};

/// Cursor over a byte span with big-endian integer reads.
class ByteReader {
 public:
  explicit ByteReader(ByteView data) : data_(data) {}

  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u24();
  ByteView take(std::size_t n);
  /// Reads a vector prefixed by a length of `len_bytes` octets.
  ByteView vec(int len_bytes);
  void skip(std::size_t n) { take(n); }

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }
  bool empty() const { return remaining() == 0; }

 private:
  ByteView data_;
  std::size_t pos_ = 0;
};

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v);
  void u24(std::uint32_t v);
  void bytes(ByteView v) { out_.insert(out_.end(), v.begin(), v.end()); }
  /// Writes `v` prefixed with its length in `len_bytes` octets.
  void vec(int len_bytes, ByteView v);

  /// Reserves a length field and returns its offset for patch_length().
  std::size_t begin_length(int len_bytes);
  void patch_length(std::size_t offset, int len_bytes);

  std::size_t size() const { return out_.size(); }
  const Bytes& data() const& { return out_; }
  Bytes take() && { return std::move(out_); }

 private:
  Bytes out_;
};

}  // namespace mailtls
