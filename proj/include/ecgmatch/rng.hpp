#pragma once

#include <cstdint>
#include <string_view>

namespace ecgmatch {

/// Counter-based random stream. Every output is a pure function of
/// (key, counter), so results are identical across platforms and do not
/// depend on how work is split between threads. Independent sub-streams
/// are derived with substream().
class RandomStream {
 public:
  static constexpr std::string_view kAlgorithm = "splitmix64-ctr";

  explicit RandomStream(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  /// Derived stream whose outputs are uncorrelated with this one.
  RandomStream substream(std::uint64_t id) const;

  std::uint64_t next_u64();
  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [lo, hi] (inclusive), unbiased via rejection.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  /// Standard normal via Box-Muller (one output per two draws).
  double normal();

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace ecgmatch
