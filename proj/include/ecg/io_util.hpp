#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "ecg/errors.hpp"

// Little-endian primitive I/O for the binary container formats.

namespace ecg::io {

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::istream& is, void* p, std::size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw TruncatedFile("unexpected end of stream");
}

template <class T>
void write_le(std::ostream& os, T v) {
  static_assert(std::is_arithmetic_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
    std::swap(buf[i], buf[sizeof(T) - 1 - i]);
#endif
  write_bytes(os, buf, sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
  static_assert(std::is_arithmetic_v<T>);
  unsigned char buf[sizeof(T)];
  read_bytes(is, buf, sizeof(T));
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
    std::swap(buf[i], buf[sizeof(T) - 1 - i]);
#endif
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

inline void write_magic(std::ostream& os, const char magic[8]) {
  write_bytes(os, magic, 8);
}

inline void expect_magic(std::istream& is, const char magic[8],
                         const std::string& what) {
  char buf[8];
  read_bytes(is, buf, 8);
  if (std::memcmp(buf, magic, 8) != 0)
    throw DataError(what + ": bad magic");
}

// FNV-1a 64-bit; used for run-manifest digests.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(s.data(), s.size());
}

}  // namespace ecg::io
