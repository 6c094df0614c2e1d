#include "mrfalign/io.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <sstream>

namespace mrfalign {

std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error("write failed for " + path.string());
}

std::vector<TextLine> tokenize_lines(std::string_view text) {
  std::vector<TextLine> lines;
  std::size_t pos = 0;
  std::size_t number = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++number;
    TextLine tl;
    tl.number = number;
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
      if (j > i) tl.tokens.push_back(line.substr(i, j - i));
      i = j;
    }
    if (tl.tokens.empty() || tl.tokens.front().front() == '#') continue;
    lines.push_back(std::move(tl));
  }
  return lines;
}

double parse_double(std::string_view token, std::size_t line) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw FormatError("line " + std::to_string(line) + ": expected a number, got '" + std::string(token) + "'");
  }
  return v;
}

long long parse_integer(std::string_view token, std::size_t line) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw FormatError("line " + std::to_string(line) + ": expected an integer, got '" + std::string(token) + "'");
  }
  return v;
}

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

std::string frame_payload(std::string_view magic, std::uint16_t major, std::uint16_t minor,
                          std::string_view payload) {
  ByteWriter w;
  w.raw(magic);
  w.u16(major);
  w.u16(minor);
  w.u64(payload.size());
  w.raw(payload);
  w.u64(fnv1a(payload));
  return w.bytes();
}

std::string_view unframe_payload(std::string_view bytes, std::string_view magic,
                                 std::uint16_t supported_major) {
  // Text header lines ("# ...") written by the command-line tool precede the frame.
  while (!bytes.empty() && bytes.front() == '#') {
    const auto end = bytes.find('\n');
    bytes = end == std::string_view::npos ? std::string_view{} : bytes.substr(end + 1);
  }
  ByteReader r(bytes);
  if (r.take(magic.size()) != magic) throw FormatError("bad magic: not a " + std::string(magic) + " file");
  const auto major = r.u16();
  const auto minor = r.u16();
  (void)minor;
  if (major > supported_major) {
    throw FormatError("unsupported format version " + std::to_string(major) + " (reader supports up to " +
                      std::to_string(supported_major) + ")");
  }
  const auto length = r.u64();
  if (length > r.remaining()) throw FormatError("truncated stream: payload shorter than header length");
  const auto payload = r.take(length);
  const auto checksum = r.u64();
  if (checksum != fnv1a(payload)) throw FormatError("checksum mismatch");
  return payload;
}

}  // namespace mrfalign
