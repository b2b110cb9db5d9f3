#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

#include "qnbm/matrix.hpp"

namespace qnbm::num {

/// Seeded xoshiro256** generator, state expanded from the seed by splitmix64.
///
/// Every draw is derived with integer arithmetic plus IEEE sqrt/log, so a
/// given seed yields the same stream on every platform that uses a
/// conforming libm. The algorithm id is written into checkpoint headers.
class Rng {
 public:
  static constexpr std::string_view kAlgorithm = "xoshiro256**+splitmix64/polar-normal/v1";

  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() noexcept;
  /// Unbiased integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);
  double normal() noexcept;
  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Fisher–Yates shuffle driven by uniform_index.
  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_index(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_{};
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

/// rows × cols matrix of i.i.d. N(mean, std²) draws. std must be ≥ 0.
Matrix sample_normal(Rng& rng, std::size_t rows, std::size_t cols, double mean, double std);

}  // namespace qnbm::num
