#pragma once

// Little-endian primitive encoding shared by the feature and checkpoint
// formats. Byte order is explicit so files are portable across hosts.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "tecno/errors.hpp"

namespace tecno::detail {

template <typename U>
void put_le(std::ostream& out, U value) {
  unsigned char bytes[sizeof(U)];
  for (std::size_t n = 0; n < sizeof(U); ++n) bytes[n] = static_cast<unsigned char>(value >> (8 * n));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

inline void put_f32(std::ostream& out, float value) { put_le(out, std::bit_cast<std::uint32_t>(value)); }

template <typename U>
bool get_le(std::istream& in, U& value) {
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) return false;
  value = 0;
  for (std::size_t n = 0; n < sizeof(U); ++n) value |= static_cast<U>(bytes[n]) << (8 * n);
  return true;
}

inline bool get_f32(std::istream& in, float& value) {
  std::uint32_t bits = 0;
  if (!get_le(in, bits)) return false;
  value = std::bit_cast<float>(bits);
  return true;
}

}  // namespace tecno::detail
