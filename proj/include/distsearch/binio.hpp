#pragma once

// Little-endian binary primitives shared by the DPDS dataset and DPCK
// checkpoint formats. Explicit byte assembly keeps the files identical across
// hosts regardless of native endianness.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "distsearch/errors.hpp"

namespace distsearch::binio {

inline void write_u32(std::ostream& os, uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline void write_u64(std::ostream& os, uint64_t v) {
  write_u32(os, static_cast<uint32_t>(v & 0xffffffffu));
  write_u32(os, static_cast<uint32_t>(v >> 32));
}

inline void write_f64(std::ostream& os, double v) {
  write_u64(os, std::bit_cast<uint64_t>(v));
}

inline uint32_t read_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw FormatError("truncated while reading " + what);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline uint64_t read_u64(std::istream& is, const std::string& what) {
  const uint64_t lo = read_u32(is, what);
  const uint64_t hi = read_u32(is, what);
  return lo | (hi << 32);
}

inline double read_f64(std::istream& is, const std::string& what) {
  return std::bit_cast<double>(read_u64(is, what));
}

inline void write_magic(std::ostream& os, const char magic[4]) { os.write(magic, 4); }

inline void expect_magic(std::istream& is, const char magic[4], const std::string& format_name) {
  char b[4];
  if (!is.read(b, 4) || b[0] != magic[0] || b[1] != magic[1] || b[2] != magic[2] ||
      b[3] != magic[3])
    throw FormatError(format_name + ": bad magic (not a " + format_name + " file)");
}

inline void expect_eof(std::istream& is, const std::string& format_name) {
  if (is.peek() != std::istream::traits_type::eof())
    throw FormatError(format_name + ": trailing bytes after payload");
}

}  // namespace distsearch::binio
