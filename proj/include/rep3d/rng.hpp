#pragma once

#include <cstdint>

#include "rep3d/tensor.hpp"

namespace rep3d {

// xoshiro256** seeded through splitmix64. Fixed algorithm so that a seed
// produces the same stream on every platform; never the implementation's
// std::default_random_engine.
class Rng {
public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // uniform in [0, 1), 53-bit mantissa
  double next_uniform();
  // standard normal via Box-Muller; the spare draw is cached
  double next_normal();

  Tensor normal(std::vector<std::size_t> shape);
  Tensor uniform(std::vector<std::size_t> shape, double lo = 0.0, double hi = 1.0);

private:
  std::uint64_t state_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

Tensor seeded_normal(std::uint64_t seed, std::vector<std::size_t> shape);

} // namespace rep3d
