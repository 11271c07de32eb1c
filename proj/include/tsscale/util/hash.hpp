#pragma once

#include <cstdint>
#include <string_view>

namespace tsscale::util {

/// 64-bit FNV-1a over the seed's bytes followed by `text`. Stable across
/// platforms, so anything ordered by it is reproducible.
inline std::uint64_t fnv1a(std::string_view text, std::uint64_t seed = 0) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](unsigned char byte) {
    h ^= byte;
    h *= 1099511628211ULL;
  };
  for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>(seed >> (8 * i)));
  for (char c : text) mix(static_cast<unsigned char>(c));
  return h;
}

}  // namespace tsscale::util
