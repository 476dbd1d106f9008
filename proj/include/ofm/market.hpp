#pragma once

// Static market data, bid/price/allocation state, and the trading-post
// mechanism that turns bids into prices and allocations.

#include <cmath>
#include <sstream>
#include <utility>

#include "ofm/error.hpp"
#include "ofm/linalg.hpp"

namespace ofm {

inline constexpr double kNormalizationTol = 1e-12;
inline constexpr double kFeasibilityTol = 1e-10;

/// Per-period budgets and base valuations of a linear Fisher market with unit
/// item supplies. Budgets sum to one and every valuation row sums to one.
class MarketInstance {
 public:
  /// Wraps already-normalized data; throws if the normalization invariants fail.
  static MarketInstance from_normalized(Vector budgets, Matrix base_values) {
    validate_shapes(budgets, base_values);
    require((budgets > 0.0).all(), errc::non_positive_input, "budgets must be strictly positive");
    require((base_values > 0.0).all(), errc::non_positive_input,
            "base values must be strictly positive");
    require(std::abs(budgets.sum() - 1.0) <= kNormalizationTol, errc::non_positive_input,
            "budgets must sum to 1");
    for (Index i = 0; i < base_values.rows(); ++i) {
      require(std::abs(base_values.row(i).sum() - 1.0) <= kNormalizationTol,
              errc::non_positive_input, "valuation rows must sum to 1");
    }
    return MarketInstance(std::move(budgets), std::move(base_values));
  }

  Index n_buyers() const noexcept { return budgets_.size(); }
  Index n_items() const noexcept { return base_values_.cols(); }
  const Vector& budgets() const noexcept { return budgets_; }
  const Matrix& base_values() const noexcept { return base_values_; }
  double budget(Index i) const { return budgets_(i); }

  friend bool operator==(const MarketInstance& a, const MarketInstance& b) {
    return a.budgets_.size() == b.budgets_.size() &&
           a.base_values_.rows() == b.base_values_.rows() &&
           a.base_values_.cols() == b.base_values_.cols() && (a.budgets_ == b.budgets_).all() &&
           (a.base_values_ == b.base_values_).all();
  }

 private:
  friend MarketInstance normalize_market(const Vector&, const Matrix&);

  MarketInstance(Vector budgets, Matrix base_values)
      : budgets_(std::move(budgets)), base_values_(std::move(base_values)) {}

  static void validate_shapes(const Vector& budgets, const Matrix& values) {
    require(budgets.size() > 0 && values.cols() > 0, errc::dimension_mismatch,
            "market needs at least one buyer and one item");
    if (budgets.size() != values.rows()) {
      std::ostringstream os;
      os << budgets.size() << " budgets but " << values.rows() << " valuation rows";
      fail(errc::dimension_mismatch, os.str());
    }
  }

  Vector budgets_;
  Matrix base_values_;
};

struct BidMatrix {
  Matrix bids;
};

struct PriceVector {
  Vector prices;
};

struct AllocationMatrix {
  Matrix alloc;
};

struct TradeOutcome {
  PriceVector prices;
  AllocationMatrix allocation;
  /// Set when some item received no bids; its allocation column is all zero.
  bool zero_price_item = false;
};

/// Scales budgets to sum to one and each valuation row to sum to one.
inline MarketInstance normalize_market(const Vector& raw_budgets, const Matrix& raw_values) {
  MarketInstance::validate_shapes(raw_budgets, raw_values);
  require((raw_budgets > 0.0).all(), errc::non_positive_input, "budgets must be strictly positive");
  require((raw_values > 0.0).all(), errc::non_positive_input,
          "valuations must be strictly positive");
  Vector budgets = raw_budgets / raw_budgets.sum();
  Matrix values = raw_values.colwise() / raw_values.rowwise().sum();
  return MarketInstance(std::move(budgets), std::move(values));
}

inline TradeOutcome trading_post(const MarketInstance& market, const BidMatrix& bids) {
  const Matrix& b = bids.bids;
  require(b.rows() == market.n_buyers() && b.cols() == market.n_items(), errc::dimension_mismatch,
          "bid matrix shape does not match market");
  TradeOutcome out;
  out.prices.prices = b.colwise().sum().transpose();
  out.allocation.alloc = Matrix::Zero(b.rows(), b.cols());
  for (Index j = 0; j < b.cols(); ++j) {
    const double p = out.prices.prices(j);
    if (p > 0.0) {
      out.allocation.alloc.col(j) = b.col(j) / p;
    } else {
      out.zero_price_item = true;
    }
  }
  return out;
}

/// u_i = sum_j v_ij x_ij.
inline Vector utilities(const Matrix& values, const AllocationMatrix& alloc) {
  require(values.rows() == alloc.alloc.rows() && values.cols() == alloc.alloc.cols(),
          errc::dimension_mismatch, "values and allocation shapes differ");
  return (values * alloc.alloc).rowwise().sum();
}

/// Every buyer splits the budget evenly: b_ij = B_i / M.
inline BidMatrix uniform_bids(const MarketInstance& market) {
  const double m = static_cast<double>(market.n_items());
  Matrix b = market.budgets().replicate(1, market.n_items()) / m;
  return BidMatrix{std::move(b)};
}

/// Largest |sum_j b_ij - B_i| over buyers.
inline double max_budget_violation(const MarketInstance& market, const BidMatrix& bids) {
  return (bids.bids.rowwise().sum() - market.budgets()).abs().maxCoeff();
}

/// Largest |sum_i x_ij - 1| over items with a positive price.
inline double max_clearance_violation(const TradeOutcome& trade) {
  double worst = 0.0;
  const Matrix& x = trade.allocation.alloc;
  for (Index j = 0; j < x.cols(); ++j) {
    if (trade.prices.prices(j) > 0.0) worst = std::max(worst, std::abs(x.col(j).sum() - 1.0));
  }
  return worst;
}

}  // namespace ofm
