#pragma once

#include <cstdint>
#include <vector>

namespace gnnbench {

uint64_t splitmix64(uint64_t& state);

/// xoshiro256++ seeded through splitmix64. The standard <random> distributions
/// are implementation-defined, so every draw here is pinned to a fixed bit
/// pattern; runs stay reproducible across toolchains.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  double uniform();                             // [0, 1)
  double uniform(double lo, double hi);
  double normal();                              // standard normal
  int64_t uniform_int(int64_t lo, int64_t hi);  // inclusive bounds

  /// Independent substream; forking with distinct tags never correlates.
  Rng fork(uint64_t stream_tag) const;

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t s_[4];
  uint64_t seed_;
};

}  // namespace gnnbench
