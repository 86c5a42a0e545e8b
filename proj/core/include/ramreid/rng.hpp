#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace ramreid {

// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// Seeded generator whose outputs are identical on every platform. The engine
// is std::mt19937_64 (fully specified by the standard); the distributions are
// implemented here because the std:: ones are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n); n > 0. Rejection sampling, no modulo bias.
  std::size_t index(std::size_t n);
  // Standard normal via Box-Muller.
  double normal();

  // Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ramreid
