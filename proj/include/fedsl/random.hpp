#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace fedsl {

//---------------------------------------------------------------------------//
// Philox4x32-10 block function (Salmon et al., "Parallel random numbers:
// as easy as 1, 2, 3", SC'11). Pure function of (counter, key).
//---------------------------------------------------------------------------//
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  static constexpr Counter block(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
  }
};

/// SplitMix64 output finalizer; used only for deriving stream keys.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Purpose of a derived stream. Distinct roles of the same (seed, index)
/// never share random numbers.
enum class StreamRole : std::uint64_t {
  kObservations = 1,
  kEstimator = 2,
  kAuxiliary = 3,
};

/// Child stream key for (master seed, index, role). Independent of any
/// scheduling order, so realizations can run on any worker.
constexpr std::uint64_t derive_stream_key(std::uint64_t master, std::uint64_t index,
                                          StreamRole role) {
  constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ull;
  std::uint64_t h = mix64(master + kGamma);
  h = mix64(h ^ (index * 0xd1342543de82ef95ull + kGamma));
  h = mix64(h ^ (static_cast<std::uint64_t>(role) * 0xaf251af3b0f025b5ull));
  return h;
}

/// Counter-based random stream. The key selects the stream, the counter walks
/// it; the n-th output depends only on (key, n). Satisfies
/// UniformRandomBitGenerator so it also plugs into <random> distributions.
class RandomStream {
 public:
  using result_type = std::uint64_t;

  explicit RandomStream(std::uint64_t key) : key_(key) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  std::uint64_t key() const noexcept { return key_; }

  result_type operator()() {
    if (lane_ == 2) refill();
    return buffer_[lane_++];
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform on the open interval (0, 1); safe to take logs of.
  double uniform_open() {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; the second variate of each pair is kept.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double radius = std::sqrt(-2.0 * std::log(uniform_open()));
    const double angle = 2.0 * std::numbers::pi * uniform();
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  /// Exponential with the given mean.
  double exponential(double mean) { return -mean * std::log(uniform_open()); }

 private:
  void refill() {
    const Philox4x32::Counter ctr = {static_cast<std::uint32_t>(block_),
                                     static_cast<std::uint32_t>(block_ >> 32), 0u, 0u};
    const Philox4x32::Key key = {static_cast<std::uint32_t>(key_),
                                 static_cast<std::uint32_t>(key_ >> 32)};
    const auto out = Philox4x32::block(ctr, key);
    buffer_[0] = (std::uint64_t{out[1]} << 32) | out[0];
    buffer_[1] = (std::uint64_t{out[3]} << 32) | out[2];
    ++block_;
    lane_ = 0;
  }

  std::uint64_t key_;
  std::uint64_t block_ = 0;
  std::array<std::uint64_t, 2> buffer_{};
  int lane_ = 2;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fedsl
