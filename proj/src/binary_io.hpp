#pragma once

// Little-endian scalar encoding shared by checkpoint and dataset files.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

namespace powerpost::detail {

template <typename UInt>
void put_le(std::ostream& out, UInt v) {
  char bytes[sizeof(UInt)];
  for (std::size_t i = 0; i < sizeof(UInt); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  out.write(bytes, sizeof(UInt));
}

template <typename UInt>
UInt from_le(const unsigned char* bytes) {
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(bytes[i]) << (8 * i);
  return v;
}

inline void put_f32(std::ostream& out, float v) { put_le(out, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::ostream& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }
inline void put_u64(std::ostream& out, std::uint64_t v) { put_le(out, v); }

inline float get_f32(const unsigned char* p) { return std::bit_cast<float>(from_le<std::uint32_t>(p)); }
inline double get_f64(const unsigned char* p) { return std::bit_cast<double>(from_le<std::uint64_t>(p)); }
inline std::uint64_t get_u64(const unsigned char* p) { return from_le<std::uint64_t>(p); }

}  // namespace powerpost::detail
