#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace flame {

/// Dense model parameters; every update in the engine operates on these.
using ParamVector = Eigen::VectorXd;

/// Sample-major feature storage (one row per sample).
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using IndexList = std::vector<std::size_t>;

/// [0, n) as an index list.
inline IndexList all_positions(std::size_t n) {
  IndexList out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = i;
  return out;
}

inline bool all_finite(const ParamVector& v) { return v.allFinite(); }

}  // namespace flame
