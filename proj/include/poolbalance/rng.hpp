#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace poolbalance {

// SplitMix64 finalizer. Bijective 64-bit mixing function.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Named substreams of one root seed.
enum class Stream : std::uint64_t {
  kArrivals = 1,
  kDepartures = 2,
  kDepartureSelection = 3,
  kSelection = 4,
  kCoupling = 5,
};

// Counter-based generator: the i-th output of a stream is mix64(key + i*gamma).
// A stream is fully determined by (root seed, stream id), so substreams can be
// created in any order and never overlap in practice. Outputs are bit-exact
// across platforms because all derived variates below use only integer ops and
// std::log.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng() = default;
  CounterRng(std::uint64_t seed, std::uint64_t stream_id)
      : key_(mix64(seed ^ mix64(stream_id * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL))) {}
  CounterRng(std::uint64_t seed, Stream stream)
      : CounterRng(seed, static_cast<std::uint64_t>(stream)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    ++counter_;
    return mix64(key_ + counter_ * 0x9e3779b97f4a7c15ULL);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1].
  double uniform_open_low() noexcept { return 1.0 - uniform(); }

  double exponential(double rate) noexcept { return -std::log(uniform_open_low()) / rate; }

  // Unbiased integer in [0, bound), bound > 0 (Lemire's multiply-shift with rejection).
  std::uint64_t below(std::uint64_t bound) noexcept {
    unsigned __int128 m = static_cast<unsigned __int128>((*this)()) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
      const std::uint64_t threshold = (0 - bound) % bound;
      while (low < threshold) {
        m = static_cast<unsigned __int128>((*this)()) * bound;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  std::uint64_t draws() const noexcept { return counter_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

// Seed of the r-th replication of an experiment with the given root seed.
constexpr std::uint64_t replication_seed(std::uint64_t root, std::uint64_t replication) noexcept {
  return mix64(root + 0x9e3779b97f4a7c15ULL * (replication + 1));
}

}  // namespace poolbalance
