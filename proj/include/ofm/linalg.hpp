#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>

namespace ofm {

/// Dense buyer-by-item storage. Row i is buyer i, column j is item j.
using Matrix = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::ArrayXd;

using Index = Eigen::Index;

/// x log x with the 0 log 0 = 0 convention.
inline double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

inline double l1_distance_sq(const Vector& a, const Vector& b) {
  const double d = (a - b).abs().sum();
  return d * d;
}

}  // namespace ofm
