#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "flowlift/error.hpp"

// Little-endian primitives shared by the checkpoint and dataset formats.
namespace flowlift::binio {

template <typename U>
void write_le(std::ostream& os, U value) {
  static_assert(std::is_unsigned_v<U>);
  char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  os.write(bytes, sizeof(U));
}

inline void write_f64(std::ostream& os, double v) { write_le(os, std::bit_cast<std::uint64_t>(v)); }

inline void write_bytes(std::ostream& os, std::string_view s) {
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename U>
U read_le(std::istream& is, const char* what) {
  static_assert(std::is_unsigned_v<U>);
  unsigned char bytes[sizeof(U)];
  is.read(reinterpret_cast<char*>(bytes), sizeof(U));
  require(is.gcount() == static_cast<std::streamsize>(sizeof(U)), ErrorCode::kTruncated,
          std::string("file truncated while reading ") + what);
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

inline double read_f64(std::istream& is, const char* what) {
  return std::bit_cast<double>(read_le<std::uint64_t>(is, what));
}

inline std::string read_bytes(std::istream& is, std::size_t n, const char* what) {
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  require(is.gcount() == static_cast<std::streamsize>(n), ErrorCode::kTruncated,
          std::string("file truncated while reading ") + what);
  return s;
}

}  // namespace flowlift::binio
