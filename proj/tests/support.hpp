#pragma once

// Random problem builders shared by the model tests.

#include "deepwarp/engine/params.hpp"
#include "deepwarp/warp/warp.hpp"

#include <Eigen/Dense>

#include <random>
#include <string>
#include <variant>
#include <vector>

namespace testutil {

inline Eigen::MatrixXd random_points(std::mt19937_64& rng, Eigen::Index n, double lo = -0.5, double hi = 0.5) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::MatrixXd p(n, 2);
  for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = u(rng);
  return p;
}

inline Eigen::VectorXd random_vector(std::mt19937_64& rng, Eigen::Index n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = u(rng);
  return v;
}

// Non-identity weights inside each unit's admissible set.
inline std::vector<deepwarp::warp::UnitWeights> random_weights(const deepwarp::warp::WarpStack& s, std::mt19937_64& rng) {
  namespace warp = deepwarp::warp;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto w = s.identity_weights();
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (std::holds_alternative<warp::AxialWarpUnit>(s.units()[k])) {
      w[k].parts[0](0) = 0.5 + u(rng);
      for (Eigen::Index i = 0; i < w[k].parts[1].size(); ++i) w[k].parts[1](i) = 0.5 * u(rng);
    } else if (const auto* r = std::get_if<warp::RbfBlockUnit>(&s.units()[k])) {
      for (Eigen::Index i = 0; i < w[k].parts[0].size(); ++i) {
        w[k].parts[0](i) = 0.8 * r->weight_bound() * (2.0 * u(rng) - 1.0);
      }
    } else {
      for (Eigen::Index i = 0; i < 8; ++i) w[k].parts[0](i) += 0.05 * (2.0 * u(rng) - 1.0);
    }
  }
  return w;
}

inline void randomize_warp(deepwarp::engine::ParamVector& params, const deepwarp::warp::WarpStack& stack,
                           const std::string& prefix, std::mt19937_64& rng) {
  if (stack.empty()) return;
  deepwarp::warp::set_weights(params, stack, prefix, random_weights(stack, rng));
}

}  // namespace testutil
