#pragma once

// Seed derivation. Every random stream in the library is a std::mt19937_64
// seeded from one root seed and a path of integer identifiers, so that
// independent tasks (paths, blocks, epochs) own private streams and results
// do not depend on execution order.

#include <cstdint>
#include <initializer_list>
#include <random>

namespace jumpsde {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// derive_seed(root, {a, b}) = splitmix(splitmix(splitmix(root) ^ a) ^ b)
inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> ids) {
  std::uint64_t s = splitmix64(root);
  for (std::uint64_t id : ids) s = splitmix64(s ^ splitmix64(id + 0x632be59bd9b4e019ULL));
  return s;
}

inline Rng make_stream(std::uint64_t root, std::initializer_list<std::uint64_t> ids) {
  return Rng(derive_seed(root, ids));
}

// Stateless uniform on (0,1): the i-th draw of a counter-based sequence.
inline double counter_uniform(std::uint64_t seed, std::uint64_t i) {
  const std::uint64_t bits = splitmix64(seed ^ splitmix64(i));
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

inline double uniform01(Rng& rng) {
  // (0,1) open on both ends.
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return n(rng);
}

// Stream identifiers used with derive_seed.
namespace stream {
inline constexpr std::uint64_t kPaths = 1;
inline constexpr std::uint64_t kInitF = 2;
inline constexpr std::uint64_t kInitG = 3;
inline constexpr std::uint64_t kResetG = 4;
inline constexpr std::uint64_t kSelection = 5;
inline constexpr std::uint64_t kConfigs = 6;
inline constexpr std::uint64_t kProposal = 7;
inline constexpr std::uint64_t kPool = 8;
inline constexpr std::uint64_t kData = 9;
}  // namespace stream

}  // namespace jumpsde
