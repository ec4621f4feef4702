#include "mailtls/bytes.hpp"

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <bit>

namespace mailtls {

namespace {

constexpr char kHexDigits[] = "0123456789abcdef";

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace

std::string to_hex(ByteView data) {
  std::string out;
  out.reserve(data.size() * 2);
  for (auto b : data) {
    out.push_back(kHexDigits[b >> 4]);
    out.push_back(kHexDigits[b & 0x0f]);
  }
  return out;
}

Bytes from_hex(std::string_view hex) {
  if (hex.size() % 2 != 0) throw ParseError("hex string has odd length");
  Bytes out;
  out.reserve(hex.size() / 2);
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    int hi = hex_value(hex[i]);
    int lo = hex_value(hex[i + 1]);
    if (hi < 0 || lo < 0) throw ParseError("invalid hex digit");
    out.push_back(static_cast<std::uint8_t>(hi << 4 | lo));
  }
  return out;
}

std::string to_base64(ByteView data) {
  std::string out(4 * ((data.size() + 2) / 3), '\0');
  int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data.data(),
                          static_cast<int>(data.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

Bytes from_base64(std::string_view text) {
  if (text.size() % 4 != 0) throw ParseError("base64 length not a multiple of 4");
  Bytes out(3 * text.size() / 4);
  int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                          static_cast<int>(text.size()));
  if (n < 0) throw ParseError("invalid base64");
  // EVP_DecodeBlock counts padding octets as data.
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

std::string sha1_hex(ByteView data) {
  unsigned char md[SHA_DIGEST_LENGTH];
  SHA1(data.data(), data.size(), md);
  return to_hex(ByteView(md, sizeof md));
}

std::string sha256_hex(ByteView data) {
  unsigned char md[SHA256_DIGEST_LENGTH];
  SHA256(data.data(), data.size(), md);
  return to_hex(ByteView(md, sizeof md));
}

int bit_length(ByteView big_endian) {
  std::size_t i = 0;
  while (i < big_endian.size() && big_endian[i] == 0) ++i;
  if (i == big_endian.size()) throw ContractViolation("bit_length of zero");
  auto remaining = big_endian.size() - i;
  return static_cast<int>(8 * (remaining - 1)) + std::bit_width(static_cast<unsigned>(big_endian[i]));
}

Bytes strip_leading_zeros(ByteView big_endian) {
  std::size_t i = 0;
  while (i + 1 < big_endian.size() && big_endian[i] == 0) ++i;
  return Bytes(big_endian.begin() + static_cast<std::ptrdiff_t>(i), big_endian.end());
}

std::uint8_t ByteReader::u8() { return take(1)[0]; }

std::uint16_t ByteReader::u16() {
  auto b = take(2);
  return static_cast<std::uint16_t>(b[0] << 8 | b[1]);
}

std::uint32_t ByteReader::u24() {
  auto b = take(3);
  return static_cast<std::uint32_t>(b[0]) << 16 | static_cast<std::uint32_t>(b[1]) << 8 | b[2];
}

ByteView ByteReader::take(std::size_t n) {
  if (n > remaining()) throw TruncatedInput();
  auto out = data_.subspan(pos_, n);
  pos_ += n;
  return out;
}

ByteView ByteReader::vec(int len_bytes) {
  std::size_t len = 0;
  switch (len_bytes) {
    case 1: len = u8(); break;
    case 2: len = u16(); break;
    case 3: len = u24(); break;
    default: throw ContractViolation("unsupported length width");
  }
  return take(len);
}

void ByteWriter::u16(std::uint16_t v) {
  out_.push_back(static_cast<std::uint8_t>(v >> 8));
  out_.push_back(static_cast<std::uint8_t>(v));
}

void ByteWriter::u24(std::uint32_t v) {
  out_.push_back(static_cast<std::uint8_t>(v >> 16));
  out_.push_back(static_cast<std::uint8_t>(v >> 8));
  out_.push_back(static_cast<std::uint8_t>(v));
}

void ByteWriter::vec(int len_bytes, ByteView v) {
  auto at = begin_length(len_bytes);
  bytes(v);
  patch_length(at, len_bytes);
}

std::size_t ByteWriter::begin_length(int len_bytes) {
  if (len_bytes < 1 || len_bytes > 3) throw ContractViolation("unsupported length width");
  auto at = out_.size();
  out_.resize(out_.size() + static_cast<std::size_t>(len_bytes), 0);
  return at;
}

void ByteWriter::patch_length(std::size_t offset, int len_bytes) {
  std::size_t len = out_.size() - offset - static_cast<std::size_t>(len_bytes);
  if (len >= (std::size_t{1} << (8 * len_bytes))) throw ContractViolation("length field overflow");
  for (int i = len_bytes - 1; i >= 0; --i) {
    out_[offset + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(len);
    len >>= 8;
  }
}

}  // namespace mailtls
