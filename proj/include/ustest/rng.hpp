#pragma once

// Counter-based random streams.
//
// Every random quantity in the library is drawn from a Philox4x32-10 stream
// identified by (master seed, purpose tag, index, attempt). Streams are pure
// functions of that identity, so replicates can run in any order on any
// number of threads and still reproduce bit for bit.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

namespace ustest {

/// What a stream is used for. Distinct tags give independent streams.
enum class StreamTag : std::uint32_t {
  data = 1,
  sampling = 2,
  studentizer = 3,
  oracle = 4,
  monte_carlo = 5,
  user = 6,
};

/// Identity of one random stream.
struct StreamId {
  std::uint64_t seed = 0;
  StreamTag tag = StreamTag::user;
  std::uint64_t index = 0;
  std::uint32_t attempt = 0;
};

namespace detail {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline constexpr void mulhilo32(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                                std::uint32_t& lo) {
  const std::uint64_t prod = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(prod >> 32);
  lo = static_cast<std::uint32_t>(prod);
}

}  // namespace detail

/// Philox4x32 with 10 rounds (Salmon et al., SC'11).
inline constexpr std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                                         std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kMul0 = 0xD2511F53u;
  constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0 = 0, lo0 = 0, hi1 = 0, lo1 = 0;
    detail::mulhilo32(kMul0, ctr[0], hi0, lo0);
    detail::mulhilo32(kMul1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

/// UniformRandomBitGenerator over a single Philox stream.
///
/// Counter words 0-1 hold the block number, words 2-3 a hash of
/// (tag, index, attempt); the key is the master seed.
class CounterRng {
 public:
  using result_type = std::uint32_t;

  explicit CounterRng(const StreamId& id)
      : key_{static_cast<std::uint32_t>(id.seed), static_cast<std::uint32_t>(id.seed >> 32)} {
    std::uint64_t h = detail::splitmix64(static_cast<std::uint64_t>(id.tag));
    h = detail::splitmix64(h ^ id.index);
    h = detail::splitmix64(h ^ id.attempt);
    stream_lo_ = static_cast<std::uint32_t>(h);
    stream_hi_ = static_cast<std::uint32_t>(h >> 32);
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    if (pos_ == 4) refill();
    return buffer_[pos_++];
  }

  std::uint64_t next_u64() {
    const std::uint64_t hi = (*this)();
    return (hi << 32) | (*this)();
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, bound) by 128-bit multiply-shift.
  std::uint64_t below(std::uint64_t bound) {
    const unsigned __int128 prod = static_cast<unsigned __int128>(next_u64()) * bound;
    return static_cast<std::uint64_t>(prod >> 64);
  }

  /// Standard normal by Box-Muller; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 == 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const std::size_t j = below(i);
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  void refill() {
    buffer_ = philox4x32({static_cast<std::uint32_t>(block_),
                          static_cast<std::uint32_t>(block_ >> 32), stream_lo_, stream_hi_},
                         key_);
    ++block_;
    pos_ = 0;
  }

  std::array<std::uint32_t, 2> key_;
  std::uint32_t stream_lo_ = 0;
  std::uint32_t stream_hi_ = 0;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int pos_ = 4;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline CounterRng make_stream(std::uint64_t seed, StreamTag tag, std::uint64_t index = 0,
                              std::uint32_t attempt = 0) {
  return CounterRng(StreamId{seed, tag, index, attempt});
}

}  // namespace ustest
