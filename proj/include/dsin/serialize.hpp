#ifndef DSIN_SERIALIZE_HPP
#define DSIN_SERIALIZE_HPP

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "dsin/errors.hpp"

// Little-endian binary tensor blocks: u32 rank, u32 dims[rank], f64 values
// in row-major order. Shared by patch files and checkpoints.

namespace dsin::io {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  write_u32(os, static_cast<std::uint32_t>(v & 0xFFFFFFFFULL));
  write_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline void write_f64(std::ostream& os, double v) {
  write_u64(os, std::bit_cast<std::uint64_t>(v));
}

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw io_error("unexpected end of stream reading u32");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t lo = read_u32(is);
  std::uint64_t hi = read_u32(is);
  return lo | (hi << 32);
}

inline double read_f64(std::istream& is) {
  return std::bit_cast<double>(read_u64(is));
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
  std::uint32_t n = read_u32(is);
  if (n > (1u << 20)) throw io_error("implausible string length in stream");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw io_error("unexpected end of stream reading string");
  return s;
}

inline void write_tensor_block(std::ostream& os, const std::vector<int>& shape,
                               const std::vector<double>& values) {
  write_u32(os, static_cast<std::uint32_t>(shape.size()));
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw value_error("tensor block dims must be positive");
    write_u32(os, static_cast<std::uint32_t>(d));
    n *= static_cast<std::size_t>(d);
  }
  if (n != values.size())
    throw shape_error("tensor block shape does not match value count");
  for (double v : values) write_f64(os, v);
}

inline void read_tensor_block(std::istream& is, std::vector<int>& shape,
                              std::vector<double>& values) {
  std::uint32_t rank = read_u32(is);
  if (rank > 8) throw io_error("implausible tensor rank in stream");
  shape.assign(rank, 0);
  std::size_t n = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape[i] = static_cast<int>(read_u32(is));
    if (shape[i] <= 0) throw io_error("non-positive dim in tensor block");
    n *= static_cast<std::size_t>(shape[i]);
  }
  if (n > (1ull << 30)) throw io_error("implausible tensor size in stream");
  values.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) values[i] = read_f64(is);
}

}  // namespace dsin::io

#endif  // DSIN_SERIALIZE_HPP
