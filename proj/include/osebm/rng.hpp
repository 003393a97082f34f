#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string_view>

namespace osebm {

namespace detail {

inline uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ull;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace detail

// xoshiro256++ generator with fully specified uniform and normal draws, so streams
// are bit-identical across platforms. A normal draw consumes exactly two raw words
// (no spare caching), which keeps the serialized state complete.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed) {
    uint64_t sm = seed;
    for (auto& w : state_) w = detail::splitmix64(sm);
  }

  uint64_t next_u64() {
    const uint64_t result = detail::rotl(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl(state_[3], 45);
    return result;
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // index in [0, n)
  uint64_t uniform_index(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  // Standard normal via the cosine Box-Muller branch.
  double normal() {
    const double two_pi = 6.283185307179586476925286766559;
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  // Child stream derived from the construction seed and a purpose tag; independent
  // of how many draws this stream has already produced.
  Rng fork(std::string_view tag) const {
    uint64_t mix = seed_ ^ detail::fnv1a64(tag);
    return Rng(detail::splitmix64(mix));
  }
  Rng fork(uint64_t tag) const {
    uint64_t mix = seed_ ^ (0x9e3779b97f4a7c15ull + tag * 0xd1342543de82ef95ull);
    return Rng(detail::splitmix64(mix));
  }

  uint64_t seed() const { return seed_; }
  std::array<uint64_t, 4> state() const { return state_; }
  void restore(uint64_t seed, const std::array<uint64_t, 4>& st) {
    seed_ = seed;
    state_ = st;
  }

 private:
  uint64_t seed_ = 0;
  std::array<uint64_t, 4> state_{};
};

}  // namespace osebm
