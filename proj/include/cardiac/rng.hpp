#pragma once

#include <cstdint>

namespace cardiac {

/// SplitMix64 step; used to derive independent child seeds from one root seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t child_seed(std::uint64_t root, std::uint64_t index) { return splitmix64(root ^ splitmix64(index)); }

}  // namespace cardiac
