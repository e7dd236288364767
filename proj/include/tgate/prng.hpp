#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string_view>

namespace tgate {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Counter-based splittable generator.
///
/// The i-th 64-bit word of a stream is `splitmix64(key + i * gamma)` where
/// `gamma` is the SplitMix64 golden increment. Splitting derives a child key
/// by mixing the parent key with a label hash, so streams never depend on the
/// order in which they are created or consumed.
class Prng {
 public:
  explicit constexpr Prng(std::uint64_t seed) : key_(splitmix64(seed)) {}

  constexpr Prng split(std::string_view label) const {
    return from_key(splitmix64(key_ ^ fnv1a64(label)));
  }
  constexpr Prng split(std::uint64_t index) const {
    return from_key(splitmix64(key_ ^ splitmix64(index + 0x632be59bd9b4e019ULL)));
  }

  constexpr std::uint64_t bits(std::uint64_t counter) const {
    return splitmix64(key_ + counter * 0x9e3779b97f4a7c15ULL);
  }

  // 24-bit uniform in [0, 1); exact in f32.
  constexpr float uniform(std::uint64_t counter) const {
    return static_cast<float>(bits(counter) >> 40) * 0x1.0p-24f;
  }

  // Uniform in [-half_width, half_width).
  constexpr float symmetric(std::uint64_t counter, float half_width) const {
    return (2.0f * uniform(counter) - 1.0f) * half_width;
  }

  // Standard normal via Box-Muller on two 53-bit uniforms, evaluated in double.
  float normal(std::uint64_t counter) const {
    const double u1 = static_cast<double>((bits(2 * counter) >> 11) + 1) * 0x1.0p-53;
    const double u2 = static_cast<double>(bits(2 * counter + 1) >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    return static_cast<float>(r * std::cos(2.0 * std::numbers::pi * u2));
  }

  void fill_normal(std::span<float> out) const {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = normal(i);
  }

  void fill_symmetric(std::span<float> out, float half_width) const {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = symmetric(i, half_width);
  }

  constexpr std::uint64_t key() const { return key_; }

 private:
  static constexpr Prng from_key(std::uint64_t key) {
    Prng p(0);
    p.key_ = key;
    return p;
  }

  std::uint64_t key_;
};

}  // namespace tgate
