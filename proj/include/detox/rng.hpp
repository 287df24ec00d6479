#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace detox {

// SplitMix64. Used everywhere randomness must be reproducible across
// platforms; the standard <random> distributions are not portable.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform in [0, n). n must be > 0.
  std::uint64_t next_below(std::uint64_t n) {
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t threshold = -n % n;
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

 private:
  std::uint64_t state_;
};

/// Mixes words into a single stream seed so that derived streams
/// (per prompt, per continuation, per step) are independent of schedule.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  SplitMix64 rng(a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
  return rng.next_u64();
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b,
                              std::uint64_t c) {
  return mix_seed(mix_seed(a, b), c);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b,
                              std::uint64_t c, std::uint64_t d) {
  return mix_seed(mix_seed(a, b, c), d);
}

/// Deterministic Fisher-Yates shuffle.
template <typename T>
void shuffle(std::vector<T>& items, SplitMix64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.next_below(i));
    std::swap(items[i - 1], items[j]);
  }
}

/// FNV-1a over bytes; stable content hash for caches and report manifests.
inline std::uint64_t fnv1a64(const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(s.data(), s.size());
}

}  // namespace detox
