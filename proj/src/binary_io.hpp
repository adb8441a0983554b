#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "prid/tensor.hpp"

namespace prid::detail {

static_assert(std::endian::native == std::endian::little, "PT1/PRC1 IO assumes a little-endian host");

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline std::uint32_t read_u32(std::istream& is, const char* what) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError(std::string("truncated ") + what);
  return v;
}

inline void write_bytes(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_bytes(std::istream& is, const char* what, std::uint32_t limit = 1u << 26) {
  const std::uint32_t len = read_u32(is, what);
  if (len > limit) throw FormatError(std::string("implausible length for ") + what);
  std::string s(len, '\0');
  if (len > 0 && !is.read(s.data(), len)) throw FormatError(std::string("truncated ") + what);
  return s;
}

}  // namespace prid::detail
