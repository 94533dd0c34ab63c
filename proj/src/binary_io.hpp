#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "sft/errors.hpp"

namespace sft::detail {

template <class U>
void put_le(std::ostream& out, U value) {
  char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  out.write(bytes, sizeof(U));
}

inline void put_u8(std::ostream& out, std::uint8_t v) { put_le<std::uint8_t>(out, v); }
inline void put_u32(std::ostream& out, std::uint32_t v) { put_le(out, v); }
inline void put_u64(std::ostream& out, std::uint64_t v) { put_le(out, v); }
inline void put_f64(std::ostream& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }

template <class U>
U get_le(std::istream& in, const char* what) {
  unsigned char bytes[sizeof(U)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(U));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(U))) {
    throw IoError(std::string("truncated file while reading ") + what);
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

inline std::uint8_t get_u8(std::istream& in, const char* what) { return get_le<std::uint8_t>(in, what); }
inline std::uint32_t get_u32(std::istream& in, const char* what) { return get_le<std::uint32_t>(in, what); }
inline std::uint64_t get_u64(std::istream& in, const char* what) { return get_le<std::uint64_t>(in, what); }
inline double get_f64(std::istream& in, const char* what) {
  return std::bit_cast<double>(get_le<std::uint64_t>(in, what));
}

inline std::string get_bytes(std::istream& in, std::size_t n, const char* what) {
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (in.gcount() != static_cast<std::streamsize>(n)) throw IoError(std::string("truncated file while reading ") + what);
  return s;
}

}  // namespace sft::detail
