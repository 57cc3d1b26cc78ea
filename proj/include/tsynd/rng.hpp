#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include "tsynd/tensor.hpp"

namespace tsynd {

// splitmix64, also used to expand seeds into xoshiro state.
std::uint64_t splitmix64(std::uint64_t& state);

std::uint64_t fnv1a64(std::string_view s);

// Deterministic xoshiro256** stream. The 64-bit seed is expanded via
// splitmix64, so identical seeds give identical sequences on every platform.
// Independent sub-streams come from a fixed derivation rule:
//   child_seed = splitmix64(parent_seed XOR stream_label)
// with string labels hashed by FNV-1a.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64();
  // Uniform in [0, 1), 53-bit resolution.
  double next_double();
  float uniform_float(float lo, float hi);
  // std::size_t in [0, n)
  std::uint64_t next_below(std::uint64_t n);
  // Standard normal via Box-Muller; pairs are cached.
  double normal();
  bool bernoulli(double p_true);

  SeededRng child(std::uint64_t stream_label) const;
  SeededRng child(std::string_view stream_label) const;

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> s_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

// i.i.d. standard normal draws as f32; unit variance, caller applies scaling.
Tensor gaussian_sample(SeededRng& rng, Dims dims);

// Fisher-Yates over [0, n) driven by the stream.
std::vector<int> shuffled_indices(SeededRng& rng, int n);

}  // namespace tsynd
