#pragma once

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fbridge {

inline constexpr const char* kVersion = "fbridge 0.1.0";

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::uint64_t parse_hash_hex(const std::string& text) {
  std::size_t used = 0;
  const unsigned long long v = std::stoull(text, &used, 16);
  if (used != text.size()) throw std::invalid_argument("malformed hash '" + text + "'");
  return v;
}

}  // namespace fbridge
