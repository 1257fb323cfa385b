#pragma once

#include <cstdint>
#include <string_view>

namespace cim {

/// Counter-based generator: output k of stream `key` is
/// splitmix64_finalize(key + (k + 1) * golden_gamma). Streams are keyed by
/// hashing (master seed, stream index), so task t of a batch always sees the
/// same numbers no matter which thread runs it or in what order.
class CounterRng {
 public:
  static constexpr std::string_view kAlgorithm = "splitmix64-ctr/v1";

  CounterRng(std::uint64_t master_seed, std::uint64_t stream)
      : key_(finalize(finalize(master_seed) ^ (stream * 0xd1b54a32d192ed03ULL + 0x8cb92ba72f3d8dd7ULL))) {}

  std::uint64_t next_u64() {
    ++counter_;
    return finalize(key_ + counter_ * kGamma);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  std::uint64_t counter() const noexcept { return counter_; }

  static std::uint64_t finalize(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace cim
