#pragma once

// Counter-based random streams (Philox4x32-10, Salmon et al. SC 2011).
// Every draw is addressed by (seed, replication, particle, step, channel,
// index), so trajectories are reproducible bit-for-bit regardless of
// evaluation order and particle streams are independent by construction.

#include <array>
#include <cmath>
#include <cstdint>

#include "mfcq/types.hpp"

namespace mfcq::rng {

namespace detail {

inline constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
inline constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
inline constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
inline constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& lo, std::uint32_t& hi) {
  std::uint64_t prod = static_cast<std::uint64_t>(a) * b;
  lo = static_cast<std::uint32_t>(prod);
  hi = static_cast<std::uint32_t>(prod >> 32);
}

inline void philox_round(std::array<std::uint32_t, 4>& c, const std::array<std::uint32_t, 2>& k) {
  std::uint32_t lo0, hi0, lo1, hi1;
  mulhilo(kPhiloxM0, c[0], lo0, hi0);
  mulhilo(kPhiloxM1, c[2], lo1, hi1);
  c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

}  // namespace detail

/// One 10-round Philox4x32 block.
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                               std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    detail::philox_round(counter, key);
    if (round < 9) {
      key[0] += detail::kPhiloxW0;
      key[1] += detail::kPhiloxW1;
    }
  }
  return counter;
}

/// Draw channels used by the simulators.
enum class Channel : std::uint32_t {
  kCommonNoise = 0,    // dB, shared by the whole ensemble
  kIdiosyncratic = 1,  // dW, per particle
  kActionBar = 2,      // dWbar (relaxed dynamics), per particle
  kCommonBar = 3,      // dBbar (relaxed dynamics), per particle
  kAction = 4,         // action sampling at grid nodes
  kInit = 5,           // initial state draw
};

/// Particle id used for ensemble-wide draws (common noise).
inline constexpr std::uint32_t kSharedParticle = 0xFFFFFFFFu;

/// A keyed view into the Philox stream for one (seed, replication) pair.
class Stream {
 public:
  Stream(std::uint64_t seed, std::uint32_t replication)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        replication_(replication) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform(std::uint32_t particle, std::uint32_t step, Channel channel,
                 std::uint32_t index = 0) const {
    auto b = block(particle, step, channel, index);
    return u53(b[0], b[1]);
  }

  /// Standard normal via Box-Muller on one block.
  double normal(std::uint32_t particle, std::uint32_t step, Channel channel,
                std::uint32_t index = 0) const {
    auto b = block(particle, step, channel, index);
    double u1 = u53(b[0], b[1]) + 0x1p-54;  // keep log() finite
    double u2 = u53(b[2], b[3]);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  Vector normal_vector(Eigen::Index n, std::uint32_t particle, std::uint32_t step,
                       Channel channel) const {
    Vector z(n);
    for (Eigen::Index i = 0; i < n; ++i)
      z[i] = normal(particle, step, channel, static_cast<std::uint32_t>(i));
    return z;
  }

  std::uint64_t seed() const {
    return static_cast<std::uint64_t>(key_[1]) << 32 | key_[0];
  }
  std::uint32_t replication() const { return replication_; }

 private:
  std::array<std::uint32_t, 4> block(std::uint32_t particle, std::uint32_t step, Channel channel,
                                     std::uint32_t index) const {
    std::array<std::uint32_t, 4> counter{
        index, (replication_ << 8) | static_cast<std::uint32_t>(channel), particle, step};
    return philox4x32(counter, key_);
  }

  static double u53(std::uint32_t a, std::uint32_t b) {
    std::uint64_t mant = (static_cast<std::uint64_t>(a >> 6) << 27) | (b >> 5);
    return static_cast<double>(mant) * 0x1p-53;
  }

  std::array<std::uint32_t, 2> key_;
  std::uint32_t replication_;
};

}  // namespace mfcq::rng
