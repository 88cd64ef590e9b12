#pragma once

// Little-endian primitive readers/writers shared by the binary formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "usev/error.hpp"

namespace usev::binio {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) fail(ErrorKind::Format, std::string("truncated input while reading ") + what);
  return v;
}

inline void put_str(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_str(std::istream& is, const char* what,
                           std::uint32_t max_len = 1u << 24) {
  auto n = get<std::uint32_t>(is, what);
  if (n > max_len) fail(ErrorKind::Format, std::string("implausible length for ") + what);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) fail(ErrorKind::Format, std::string("truncated input while reading ") + what);
  return s;
}

}  // namespace usev::binio
