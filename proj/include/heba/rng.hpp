#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace heba {

// Deterministic pseudorandom generator: SplitMix64 output scrambling over a
// 64-bit counter state, with Box-Muller for normal samples (the spare value
// is cached, so normals come in a fixed pair order). The stream depends only
// on the seed and the call sequence.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();
  double next_uniform();      // [0, 1), 53-bit resolution
  double next_uniform_pos();  // (0, 1], safe for log()
  double next_normal();       // standard normal via Box-Muller

  // Uniform integer in [0, n), rejection-sampled so every value is exactly
  // equally likely.
  std::int64_t next_below(std::int64_t n);

  // Derives an independent child stream without advancing this one.
  Rng fork(std::uint64_t tag) const;

  template <typename T>
  void shuffle(std::vector<T>& v) {  // Fisher-Yates
    for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<std::size_t>(i)],
                v[static_cast<std::size_t>(next_below(i + 1))]);
    }
  }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace heba
