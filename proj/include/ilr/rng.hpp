#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace ilr {

/// Counter-based SplitMix64.
///
///   key     = mix(seed ^ mix(stream + 0x632BE59BD9B4E019))
///   draw(i) = mix(key + (i + 1) * 0x9E3779B97F4A7C15)
///   mix(z)  = z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27; z *= 0x94D049BB133111EB; z ^ (z >> 31)
///
/// Uniforms take the top 53 bits of a draw. Normals use Box-Muller on two consecutive uniforms
/// and keep only the cosine branch. Distinct (seed, stream) pairs give independent sequences, so
/// per-band or per-epoch streams can be evaluated in any order.
class Rng
{
public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
    : key_{mix(seed ^ mix(stream + 0x632BE59BD9B4E019ULL))}
  {}

  static constexpr std::uint64_t mix(std::uint64_t z)
  {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64()
  {
    ++counter_;
    return mix(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  /// [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Integer in [0, n).
  std::uint64_t below(std::uint64_t n)
  {
    auto const k = static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
    return k < n ? k : n - 1;
  }

  double normal()
  {
    double const u1 = 1.0 - uniform(); // (0, 1]
    double const u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t counter() const { return counter_; }

private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

} // namespace ilr
