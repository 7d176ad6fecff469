#pragma once

#include <cstdint>
#include <limits>

namespace sae {

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  std::uint64_t s = x;
  return splitmix64(s);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
  return (x << k) | (x >> (64 - k));
}

}  // namespace detail

/// xoshiro256++ generator. Satisfies UniformRandomBitGenerator; cheap to seed,
/// which matters because every bootstrap replicate owns a fresh engine.
class Engine {
 public:
  using result_type = std::uint64_t;

  explicit Engine(std::uint64_t seed = 0) noexcept {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = detail::splitmix64(sm);
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    const std::uint64_t result = detail::rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = detail::rotl(s_[3], 45);
    return result;
  }

  friend bool operator==(const Engine&, const Engine&) = default;

 private:
  std::uint64_t s_[4]{};
};

/// Hierarchical substream key. A key derived from (seed, r, b, k) through
/// child() is a pure function of that path, so any worker can rebuild the
/// stream of any replicate without coordination.
class StreamKey {
 public:
  constexpr explicit StreamKey(std::uint64_t seed = 0) noexcept
      : state_(detail::mix64(seed ^ 0x6A09E667F3BCC909ULL)) {}

  constexpr StreamKey child(std::uint64_t index) const noexcept {
    StreamKey k;
    k.state_ = detail::mix64(state_ ^ detail::mix64(index + 0x3C6EF372FE94F82BULL));
    return k;
  }

  Engine engine() const noexcept { return Engine(state_); }

  constexpr std::uint64_t value() const noexcept { return state_; }

  friend constexpr bool operator==(const StreamKey&, const StreamKey&) = default;

 private:
  std::uint64_t state_;
};

}  // namespace sae
