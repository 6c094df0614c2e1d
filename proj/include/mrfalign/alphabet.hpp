#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace mrfalign {

// 20 amino acids followed by the gap symbol.
inline constexpr std::size_t kNumAminoAcids = 20;
inline constexpr std::size_t kNumSymbols = 21;
inline constexpr std::uint8_t kGap = 20;
inline constexpr std::string_view kSymbols = "ACDEFGHIKLMNPQRSTVWY-";

// Maps a character to its symbol code. Lowercase letters are accepted;
// '-', '.', and every non-standard residue (B, Z, X, J, U, O, ...) map to gap.
constexpr std::uint8_t encode_symbol(char c) {
  if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
  for (std::size_t a = 0; a < kNumAminoAcids; ++a) {
    if (kSymbols[a] == c) return static_cast<std::uint8_t>(a);
  }
  return kGap;
}

constexpr char decode_symbol(std::uint8_t code) {
  return code < kNumSymbols ? kSymbols[code] : '-';
}

}  // namespace mrfalign
