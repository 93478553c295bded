#pragma once

// Counter-based random streams. Every value is a pure function of
// (key, counter), so independent sub-streams can be split off by folding
// tags into the key, and extending a sample count never reshuffles the
// values that were already drawn. Output is identical across platforms
// for a given key.

#include <bit>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

namespace modalbound {

namespace rngdetail {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace rngdetail

// Immutable stream identifier. `with(...)` folds a tag into the key and
// returns the derived key, leaving the parent untouched.
class StreamKey {
 public:
  explicit constexpr StreamKey(std::uint64_t seed)
      : key_(rngdetail::mix64(seed + rngdetail::kGolden)) {}

  [[nodiscard]] constexpr StreamKey with(std::uint64_t v) const {
    StreamKey k = *this;
    k.key_ = rngdetail::mix64(k.key_ ^ (v + rngdetail::kGolden));
    return k;
  }

  [[nodiscard]] constexpr StreamKey with(std::string_view tag) const {
    return with(rngdetail::fnv1a(tag));
  }

  [[nodiscard]] StreamKey with(double v) const {
    return with(std::bit_cast<std::uint64_t>(v));
  }

  [[nodiscard]] constexpr std::uint64_t value() const { return key_; }

 private:
  std::uint64_t key_;
};

class StreamRng {
 public:
  explicit StreamRng(StreamKey key) : key_(key.value()) {}
  explicit StreamRng(std::uint64_t seed) : StreamRng(StreamKey(seed)) {}

  std::uint64_t next_u64() {
    return rngdetail::mix64(key_ + (++counter_) * rngdetail::kGolden);
  }

  // [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; consumes exactly two uniforms per normal, u1 in (0, 1].
  double normal() {
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  // +1 or -1 with equal probability.
  double sign() { return (next_u64() & 1u) ? 1.0 : -1.0; }

  // Uniform in {0, ..., n-1}. Modulo bias is < 2^-32 for the n used here.
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// Deterministic Fisher-Yates permutation of {0, ..., n-1}.
inline std::vector<int> permutation(int n, StreamRng& rng) {
  std::vector<int> p(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
  for (int i = n - 1; i > 0; --i) {
    auto j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1));
    std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
  }
  return p;
}

}  // namespace modalbound
