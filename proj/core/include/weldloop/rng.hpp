#pragma once

#include <cmath>
#include <cstdint>

// Counter-based deterministic random streams. Every draw is a pure function of
// (seed, stream, a, b), so replays are exact regardless of call order and the
// same numbers come out on both sides of a process boundary.
namespace weldloop::rng {

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

enum Stream : std::uint64_t {
  kEnvStepOr = 1,
  kEnvStepOe = 2,
  kEnvProbeOr = 3,
  kEnvProbeOe = 4,
  kEpsilons = 5,
  kExplore = 6,
  kPolicyInit = 7,
  kTrain = 8,
  kBaseline = 9,
};

constexpr std::uint64_t key(std::uint64_t seed, std::uint64_t stream,
                            std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = mix64(seed);
  h = mix64(h ^ stream);
  h = mix64(h ^ a);
  h = mix64(h ^ b);
  return h;
}

// uniform in [0, 1)
inline double uniform01(std::uint64_t k) {
  return static_cast<double>(mix64(k) >> 11) * 0x1.0p-53;
}

// standard normal via Box-Muller on two decorrelated uniforms
inline double normal(std::uint64_t k) {
  const double u1 = uniform01(k);
  const double u2 = uniform01(mix64(k ^ 0xda3e39cb94b95bdbULL));
  const double r = std::sqrt(-2.0 * std::log1p(-u1));
  return r * std::cos(6.283185307179586476925286766559 * u2);
}

}  // namespace weldloop::rng
