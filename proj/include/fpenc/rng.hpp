#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace fpenc {

uint64_t splitmix64(uint64_t& state);

// xoshiro256** seeded through splitmix64. The raw stream is platform
// independent, so every draw is bit-identical for a given seed.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();

  // [0, 1), 53-bit resolution
  double uniform();
  double uniform(double lo, double hi);

  // standard normal via Box-Muller; consumes exactly two uniforms
  double normal();

  // [0, n), unbiased via rejection
  int64_t below(int64_t n);

  // independent stream derived from this rng's seed and a stream id
  Rng fork(uint64_t stream) const;

  uint64_t seed() const { return seed_; }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      std::swap(v[i], v[below(i + 1)]);
    }
  }

 private:
  uint64_t seed_ = 0;
  uint64_t s_[4] = {0, 0, 0, 0};
};

}  // namespace fpenc
