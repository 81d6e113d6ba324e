#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "flsim/types.hpp"

namespace flsim::testing {

inline ParamVector random_vector(std::mt19937_64& rng, Eigen::Index d, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  ParamVector v(d);
  for (Eigen::Index i = 0; i < d; ++i) v[i] = n(rng);
  return v;
}

inline std::vector<ParamVector> random_updates(std::mt19937_64& rng, std::size_t n, Eigen::Index d) {
  std::vector<ParamVector> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_vector(rng, d));
  return out;
}

inline double rel_err(const ParamVector& a, const ParamVector& b) {
  return (a - b).norm() / std::max(1e-300, b.norm());
}

}  // namespace flsim::testing
