#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "tsscale/tensor.hpp"

namespace tsscale::testing {

inline std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, bool requires_grad = true, double lo = -1.0,
                            double hi = 1.0) {
  const auto n = shape_numel(shape);
  return Tensor::from_data(std::move(shape), random_values(n, seed, lo, hi), requires_grad);
}

}  // namespace tsscale::testing
