#pragma once

// Little-endian primitives for the checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "rvi/error.hpp"

namespace rvi::io {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

inline void write_magic(std::ostream& out, const std::string& magic) {
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void expect_magic(std::istream& in, const std::string& magic, const std::string& what) {
  std::string got(magic.size(), '\0');
  in.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (!in || got != magic) throw FormatError(what + ": expected magic " + magic);
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_u8(std::ostream& out, std::uint8_t v) {
  out.write(reinterpret_cast<const char*>(&v), 1);
}

inline void write_f64(std::ostream& out, std::span<const double> values) {
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
}

inline std::uint32_t read_u32(std::istream& in, const std::string& what) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw LengthError(what + ": truncated header");
  return v;
}

inline std::uint8_t read_u8(std::istream& in, const std::string& what) {
  std::uint8_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 1);
  if (!in) throw LengthError(what + ": truncated header");
  return v;
}

inline std::vector<double> read_f64(std::istream& in, std::size_t count, const std::string& what) {
  std::vector<double> v(count);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw LengthError(what + ": truncated payload");
  return v;
}

}  // namespace rvi::io
