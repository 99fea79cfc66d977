#pragma once

#include <cmath>
#include <cstdint>

namespace lvik {

// Counter-based generator built on the splitmix64 finalizer. Every draw is
// addressed by (seed, stream, counter), so noise channels are independent of
// call order and safe to sample from parallel workers. Constants are the
// usual splitmix64 ones; any implementation reproducing them byte-for-byte
// generates identical streams.
namespace rng {

inline uint64_t mix64(uint64_t x) {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

inline uint64_t draw(uint64_t seed, uint64_t stream, uint64_t counter) {
  const uint64_t key = mix64(seed + 0x9E3779B97F4A7C15ULL * (stream + 1));
  return mix64(key + 0x9E3779B97F4A7C15ULL * (counter + 1));
}

/// Uniform in [0, 1) with 53 random bits.
inline double uniform(uint64_t seed, uint64_t stream, uint64_t counter) {
  return static_cast<double>(draw(seed, stream, counter) >> 11) * 0x1.0p-53;
}

/// Standard normal via Box-Muller on counters (2c, 2c+1).
inline double normal(uint64_t seed, uint64_t stream, uint64_t counter) {
  const double u1 = uniform(seed, stream, 2 * counter);
  const double u2 = uniform(seed, stream, 2 * counter + 1);
  return std::sqrt(-2.0 * std::log1p(-u1)) * std::cos(2.0 * M_PI * u2);
}

// Stream ids used by the simulator and the Monte Carlo test oracles.
enum Stream : uint64_t {
  kAccelNoise = 1,
  kGyroNoise = 2,
  kAccelWalk = 3,
  kGyroWalk = 4,
  kLidarRange = 5,
  kFeaturePixel = 6,
  kTrackLoss = 7,
  kJointAngle = 8,
  kJointRate = 9,
  kFootTwistAngular = 10,
  kFootTwistLinear = 11,
  kLandmarkJitter = 12,
  kMonteCarlo = 100,
};

}  // namespace rng
}  // namespace lvik
