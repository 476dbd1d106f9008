#pragma once

// Random instance generators shared by the unit and acceptance suites.

#include <cstdint>
#include <random>

#include "ofm/linalg.hpp"
#include "ofm/market.hpp"

namespace ofm::testing {

inline Matrix uniform_matrix(std::mt19937_64& rng, Index rows, Index cols, double lo = 0.0,
                             double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = u(rng);
  return m;
}

/// Equal (or random) budgets, uniform(lo, 1) valuations normalized per row.
/// A larger `lo` keeps long proportional-response runs away from underflow.
inline MarketInstance random_market(std::mt19937_64& rng, Index n, Index m,
                                    bool random_budgets = false, double lo = 1e-3) {
  Vector budgets = Vector::Ones(n);
  if (random_budgets) {
    std::uniform_real_distribution<double> u(0.2, 1.0);
    for (Index i = 0; i < n; ++i) budgets(i) = u(rng);
  }
  return normalize_market(budgets, uniform_matrix(rng, n, m, lo, 1.0));
}

/// Feasible bids with full support; `spread` widens the dynamic range.
inline BidMatrix random_bids(std::mt19937_64& rng, const MarketInstance& market,
                             double spread = 3.0) {
  std::uniform_real_distribution<double> u(-spread, spread);
  Matrix w(market.n_buyers(), market.n_items());
  for (Index k = 0; k < w.size(); ++k) w.data()[k] = std::exp(u(rng));
  for (Index i = 0; i < w.rows(); ++i) w.row(i) *= market.budget(i) / w.row(i).sum();
  return BidMatrix{w};
}

inline Vector random_simplex(std::mt19937_64& rng, Index k, double spread = 3.0) {
  std::uniform_real_distribution<double> u(-spread, spread);
  Vector v(k);
  for (Index j = 0; j < k; ++j) v(j) = std::exp(u(rng));
  return v / v.sum();
}

inline Index random_dim(std::mt19937_64& rng, Index lo, Index hi) {
  return std::uniform_int_distribution<Index>(lo, hi)(rng);
}

}  // namespace ofm::testing
