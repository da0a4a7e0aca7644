#ifndef MMREC_RNG_HPP
#define MMREC_RNG_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mmrec/common.hpp"

namespace mmrec {

// SplitMix64 generator. Pure 64-bit integer arithmetic, so the u64 stream is
// bit-identical across platforms. Streams are derived from (master seed, label):
// consumers each own a label, and adding one never shifts another's sequence.
class SeededRng {
 public:
  SeededRng(uint64_t master_seed, std::string_view stream_label)
      : state_(hash64(master_seed, stream_label)), label_(stream_label) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // [0,1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Unbiased integer in [0,n) via rejection.
  uint64_t uniform(uint64_t n) {
    if (n == 0) throw ValidationError("SeededRng::uniform: n must be positive");
    uint64_t threshold = (0ULL - n) % n;  // 2^64 mod n
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Standard normal via Box-Muller; second value cached.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double t = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(t);
    has_cached_ = true;
    return r * std::cos(t);
  }

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  const std::string& stream_label() const { return label_; }

 private:
  uint64_t state_;
  std::string label_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace mmrec

#endif
