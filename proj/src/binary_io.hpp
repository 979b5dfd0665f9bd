#pragma once

// Little-endian byte-level helpers shared by the dataset and checkpoint
// readers/writers. Byte order is composed explicitly so files are identical
// on any host.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "evsnn/errors.hpp"

namespace evsnn::binio {

inline void put_u8(std::ostream& out, std::uint8_t v) {
  out.put(static_cast<char>(v));
}

inline void put_u16(std::ostream& out, std::uint16_t v) {
  out.put(static_cast<char>(v & 0xff));
  out.put(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::ostream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::ostream& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

[[noreturn]] inline void fail(const std::string& what) { throw FormatError(what); }

// Reads exactly n bytes or throws FormatError.
inline void get_bytes(std::istream& in, unsigned char* dst, std::size_t n,
                      const char* context) {
  in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    fail(std::string("truncated file while reading ") + context);
}

// Returns false on a clean end-of-file, throws on a partial read.
inline bool try_get_bytes(std::istream& in, unsigned char* dst, std::size_t n,
                          const char* context) {
  in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
  const std::size_t got = static_cast<std::size_t>(in.gcount());
  if (got == 0 && in.eof()) return false;
  if (got != n) fail(std::string("truncated file while reading ") + context);
  return true;
}

inline std::uint8_t get_u8(std::istream& in, const char* context) {
  unsigned char b;
  get_bytes(in, &b, 1, context);
  return b;
}

inline std::uint16_t get_u16(std::istream& in, const char* context) {
  unsigned char b[2];
  get_bytes(in, b, 2, context);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline bool try_get_u16(std::istream& in, std::uint16_t& v, const char* context) {
  unsigned char b[2];
  if (!try_get_bytes(in, b, 2, context)) return false;
  v = static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  return true;
}

inline std::uint32_t get_u32(std::istream& in, const char* context) {
  unsigned char b[4];
  get_bytes(in, b, 4, context);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline std::uint64_t get_u64(std::istream& in, const char* context) {
  unsigned char b[8];
  get_bytes(in, b, 8, context);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline double get_f64(std::istream& in, const char* context) {
  return std::bit_cast<double>(get_u64(in, context));
}

inline void check_magic(std::istream& in, const char (&magic)[5], const char* what) {
  unsigned char b[4];
  get_bytes(in, b, 4, "magic");
  for (int i = 0; i < 4; ++i) {
    if (static_cast<char>(b[i]) != magic[i])
      fail(std::string("bad magic, not a ") + what + " file");
  }
}

}  // namespace evsnn::binio
