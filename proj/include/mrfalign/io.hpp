#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mrfalign/error.hpp"

namespace mrfalign {

inline constexpr std::string_view kToolkitVersion = "0.1.0";

// 64-bit FNV-1a.
constexpr std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

// Splits a text into whitespace-separated tokens per line, skipping blank
// lines and lines starting with '#'. Line numbers are 1-based.
struct TextLine {
  std::size_t number = 0;
  std::vector<std::string_view> tokens;
};
std::vector<TextLine> tokenize_lines(std::string_view text);

double parse_double(std::string_view token, std::size_t line);
long long parse_integer(std::string_view token, std::size_t line);

// Shortest round-trip decimal representation.
std::string format_double(double v);

// Little-endian binary encoding helpers.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { put(v); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u64(s.size());
    buf_.append(s);
  }
  void raw(std::string_view s) { buf_.append(s); }
  const std::string& bytes() const { return buf_; }

 private:
  template <class T>
  void put(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : data_(bytes) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint16_t u16() { return get<std::uint16_t>(); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string str() {
    const auto n = u64();
    if (n > remaining()) throw FormatError("truncated stream: string length exceeds data");
    return std::string(take(n));
  }
  std::string_view take(std::size_t n) {
    if (n > remaining()) throw FormatError("truncated stream");
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  template <class T>
  T get() {
    auto s = take(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

// Wraps a payload as: magic(4) major(u16) minor(u16) length(u64) payload checksum(u64).
std::string frame_payload(std::string_view magic, std::uint16_t major, std::uint16_t minor,
                          std::string_view payload);
// Skips leading '#' comment lines, then validates magic, major version, length,
// and checksum; returns the payload.
std::string_view unframe_payload(std::string_view bytes, std::string_view magic,
                                 std::uint16_t supported_major);

}  // namespace mrfalign
