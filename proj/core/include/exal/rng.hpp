#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace exal {

/// Counter-based pseudo-random generator.
///
/// Output i of a stream is a fixed bijective mix of (key, i), so a stream is
/// fully described by its key and position and `split` derives independent
/// child streams without touching the parent. All derived quantities
/// (uniforms, normals, bounded integers) are computed with integer and IEEE
/// arithmetic only, so streams are identical across platforms and standard
/// libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t position() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept;
  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Standard normal (Box-Muller, one draw per call).
  double normal() noexcept;
  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }
  /// Unbiased integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;

  /// Independent child stream identified by `stream`.
  Rng split(std::uint64_t stream) const noexcept;

  template <typename T>
  void shuffle(std::span<T> items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  /// k distinct indices from [0, n), in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  Rng(std::uint64_t seed, std::uint64_t key) noexcept : seed_(seed), key_(key) {}

  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// SplitMix64 finaliser; exposed for hashing seeds together.
std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace exal
