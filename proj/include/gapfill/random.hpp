#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace gapfill {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_label(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a) noexcept {
  return mix_seed(root ^ mix_seed(a));
}

template <typename... Rest>
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a, Rest... rest) noexcept {
  return derive_seed(derive_seed(root, a), static_cast<std::uint64_t>(rest)...);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label) noexcept {
  return derive_seed(root, hash_label(label));
}

}  // namespace gapfill
