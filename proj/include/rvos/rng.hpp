#pragma once

#include <cstdint>

namespace rvos {

/// xoshiro256++ with splitmix64 seeding. Hand-rolled so that streams are
/// bit-identical regardless of the standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);
  double normal();                        // Box-Muller, cached pair
  std::uint64_t uniform_int(std::uint64_t n);  // [0, n)

 private:
  std::uint64_t s_[4];
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace rvos
