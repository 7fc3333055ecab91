#include "heba/rng.hpp"

#include <cmath>
#include <numbers>

#include "heba/errors.hpp"

namespace heba {

namespace {

// SplitMix64 scramble (Steele, Lea, Flood 2014).
std::uint64_t scramble(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t Rng::next_u64() {
  state_ += 0x9E3779B97F4A7C15ull;
  return scramble(state_);
}

double Rng::next_uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_uniform_pos() {
  return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

double Rng::next_normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  const double u1 = next_uniform_pos();
  const double u2 = next_uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

std::int64_t Rng::next_below(std::int64_t n) {
  if (n <= 0) throw InvariantError("Rng::next_below: bound must be positive");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = ~0ull - (~0ull % bound + 1) % bound;
  std::uint64_t z = next_u64();
  while (z > limit) z = next_u64();
  return static_cast<std::int64_t>(z % bound);
}

Rng Rng::fork(std::uint64_t tag) const {
  return Rng(scramble(state_ ^ scramble(tag + 0x632BE59BD9B4E019ull)));
}

}  // namespace heba
