#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

namespace churnlab {

// 64-bit FNV-1a over raw bytes. Doubles are fed as their 8-byte little-endian
// bit pattern so digests are exact, not print-precision dependent.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      hash_ ^= static_cast<std::uint64_t>(p[i]);
      hash_ *= 1099511628211ULL;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  void update(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    update_u64(bits);
  }
  void update_u64(std::uint64_t v) {
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
    update(bytes, 8);
  }
  std::uint64_t digest() const { return hash_; }

 private:
  std::uint64_t hash_ = 14695981039346656037ULL;
};

// Shortest decimal representation that parses back to the identical bits.
std::string format_double(double v);

// Strict double parse of the whole token; throws ParseError on garbage.
double parse_double(std::string_view s);

// Strict non-negative integer parse; throws ParseError.
long long parse_int(std::string_view s);

std::string hex_u64(std::uint64_t v);
std::uint64_t parse_hex_u64(std::string_view s);

}  // namespace churnlab
