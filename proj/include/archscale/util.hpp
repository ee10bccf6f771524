#pragma once

#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>

namespace archscale {

/// 64-bit FNV-1a, used for config and plan fingerprints in manifests.
constexpr std::uint64_t fnv1a64(std::string_view text) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(std::uint64_t value);

/// Shortest text that parses back to exactly the same double.
std::string format_double(double value);

/// Strict full-string parse; throws Error(InvalidArgument) naming `what`.
double parse_double(std::string_view text, std::string_view what);
long long parse_int(std::string_view text, std::string_view what);

std::string_view trim(std::string_view s) noexcept;

/// SplitMix64 step; derives independent stream seeds from (base, index).
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) noexcept {
  return splitmix64(splitmix64(base) ^ splitmix64(index + 0x632be59bd9b4e019ull));
}

}  // namespace archscale
