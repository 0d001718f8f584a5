// SPDX-License-Identifier: Apache-2.0

#ifndef FLAMKIT_RNG_H_
#define FLAMKIT_RNG_H_

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

namespace flamkit {

// Counter-based generator keyed by (seed, stream, index). Two generators built
// from the same key produce the same sequence regardless of what any other
// generator has done, so work item i can be reproduced in isolation.
//
// Distributions are implemented here rather than with <random> so that
// sequences are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t index = 0);

  // Independent child generator; does not advance this one.
  Rng substream(std::uint64_t stream, std::uint64_t index = 0) const;

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer on the closed range [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p);
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// SplitMix64 finalizer; also used for stable hashing.
std::uint64_t mix64(std::uint64_t x);

// Stream identifiers used across the project.
namespace streams {
inline constexpr std::uint64_t kMixture = 1;
inline constexpr std::uint64_t kEventAudio = 2;
inline constexpr std::uint64_t kBackgroundAudio = 3;
inline constexpr std::uint64_t kEpochPermutation = 4;
inline constexpr std::uint64_t kPromptSelection = 5;
inline constexpr std::uint64_t kInit = 6;
inline constexpr std::uint64_t kPlacement = 7;
inline constexpr std::uint64_t kAugment = 8;
inline constexpr std::uint64_t kTest = 99;
}  // namespace streams

}  // namespace flamkit

#endif  // FLAMKIT_RNG_H_
