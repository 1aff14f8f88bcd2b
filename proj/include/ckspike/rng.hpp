// rng.hpp — counter-based, splittable random number generation.
//
// Every random object in this project is drawn from an addressable stream:
//
//   stream key   k  = mix(seed ^ fnv1a(role))
//   value at i      = mix(k + i * GOLDEN)
//
// where mix() is the SplitMix64 output permutation and GOLDEN is the 64-bit
// golden-ratio increment. Values can be generated at any counter position in
// any order, so matrix fills are parallelizable by column block and two
// streams with different role tags are independent by construction.
//
// Gaussian variates use the inverse-CDF map (Wichura's PPND16 algorithm,
// double precision) applied to the 53-bit uniform in (0,1). This is the one
// project-wide sampler; outputs are bitwise reproducible across platforms.

#pragma once

#include <cstdint>
#include <string_view>

namespace ckspike {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

// SplitMix64 output permutation (Stafford variant 13 as used by splitmix64).
inline constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline constexpr std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (char c : s) {
        h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
        h *= 0x100000001B3ull;
    }
    return h;
}

// Inverse of the standard normal CDF, accurate to full double precision
// (Wichura 1988, algorithm AS 241, PPND16).
double inv_normal_cdf(double p);

// One addressable random stream. Immutable key; all access is by counter.
class Stream {
  public:
    Stream(std::uint64_t seed, std::string_view role)
        : key_(mix64(seed ^ fnv1a(role))) {}

    // Raw 64 bits at counter position i.
    std::uint64_t bits(std::uint64_t i) const { return mix64(key_ + i * kGolden); }

    // Uniform in (0,1), 53-bit mantissa, endpoints excluded.
    double uniform(std::uint64_t i) const {
        return static_cast<double>(bits(i) >> 11) * 0x1.0p-53 + 0x1.0p-54;
    }

    // Standard normal via inverse CDF.
    double normal(std::uint64_t i) const { return inv_normal_cdf(uniform(i)); }

    // Derive a sub-stream (e.g. per trial).
    Stream substream(std::uint64_t index, std::string_view role) const {
        Stream s = *this;
        s.key_ = mix64(key_ ^ mix64(index * kGolden + 1) ^ fnv1a(role));
        return s;
    }

    std::uint64_t key() const { return key_; }

  private:
    std::uint64_t key_;
};

} // namespace ckspike
