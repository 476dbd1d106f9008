#pragma once

// Fairness regret, individual buyer regret, price-distance diagnostics,
// equilibrium fairness properties, and log-log slope fitting.

#include <cmath>
#include <limits>
#include <span>

#include "ofm/dynamics.hpp"
#include "ofm/error.hpp"
#include "ofm/linalg.hpp"
#include "ofm/market.hpp"
#include "ofm/objectives.hpp"

namespace ofm {

struct RegretSeries {
  Vector cumulative;
  double final = 0.0;

  static RegretSeries from_increments(const Vector& increments) {
    RegretSeries out;
    out.cumulative.resize(increments.size());
    double acc = 0.0;
    for (Index t = 0; t < increments.size(); ++t) {
      acc += increments(t);
      out.cumulative(t) = acc;
    }
    out.final = acc;
    return out;
  }
};

/// Cumulative sum over periods of Phi(b_t) - Phi(b*).
inline RegretSeries fairness_regret(const Trajectory& traj, const EquilibriumSolution& eq) {
  require(traj.baseline == eq.baseline, errc::baseline_mismatch,
          "trajectory and equilibrium use different baselines");
  return RegretSeries::from_increments(traj.expected_phi - eq.phi_star);
}

struct IndividualRegret {
  RegretSeries series;
  double u_star = 0.0;

  /// R_i(t) / (t u_i*), the relative regret after `t` periods (1-based).
  double relative(long t) const { return series.cumulative(t - 1) / (static_cast<double>(t) * u_star); }
  double relative_final() const { return relative(series.cumulative.size()); }
};

namespace detail {

inline void check_buyer(Index buyer, Index n) {
  require(buyer >= 0 && buyer < n, errc::index_out_of_range,
          "buyer " + std::to_string(buyer) + " outside [0, " + std::to_string(n) + ")");
}

}  // namespace detail

/// Cumulative sum of u_i* - sum_j E[v_ij] x_ij,t, both sides against the mean
/// values the trajectory was recorded with.
inline IndividualRegret individual_regret(const Trajectory& traj, const EquilibriumSolution& eq,
                                          Index buyer, const Matrix& mean_vals) {
  detail::check_buyer(buyer, traj.expected_utilities.cols());
  require(mean_vals.rows() == traj.mean_values.rows() &&
              mean_vals.cols() == traj.mean_values.cols() &&
              (mean_vals == traj.mean_values).all(),
          errc::baseline_mismatch, "mean values differ from those recorded in the trajectory");
  IndividualRegret out;
  out.u_star = (mean_vals.row(buyer) * eq.alloc_star.alloc.row(buyer)).sum();
  out.series = RegretSeries::from_increments(out.u_star - traj.expected_utilities.col(buyer));
  return out;
}

/// Same as individual_regret but against realized utilities v_t x_t.
inline IndividualRegret realized_individual_regret(const Trajectory& traj,
                                                   const EquilibriumSolution& eq, Index buyer) {
  detail::check_buyer(buyer, traj.utilities_history.cols());
  IndividualRegret out;
  out.u_star = (traj.mean_values.row(buyer) * eq.alloc_star.alloc.row(buyer)).sum();
  out.series = RegretSeries::from_increments(out.u_star - traj.utilities_history.col(buyer));
  return out;
}

struct PriceDiagnostics {
  double avg_dist = 0.0;   ///< ||mean_t p_t - p*||_1^2
  double last_dist = 0.0;  ///< ||p_T - p*||_1^2
};

inline PriceDiagnostics price_diagnostics(const Trajectory& traj, const EquilibriumSolution& eq) {
  require(traj.prices_history.rows() > 0, errc::config_error, "empty trajectory");
  const Vector avg = traj.prices_history.colwise().mean().transpose();
  const Vector last = traj.prices_history.row(traj.prices_history.rows() - 1).transpose();
  return {l1_distance_sq(avg, eq.prices_star.prices), l1_distance_sq(last, eq.prices_star.prices)};
}

/// Worst budget-normalized envy: max over i != k of
/// u_i(x_k) / B_k - u_i(x_i) / B_i. Negative infinity for a single buyer.
inline double envy_check(const AllocationMatrix& alloc, const Matrix& values, const Vector& budgets) {
  const Matrix& x = alloc.alloc;
  require(x.rows() == values.rows() && x.cols() == values.cols() && budgets.size() == x.rows(),
          errc::dimension_mismatch, "envy_check shapes differ");
  double worst = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < x.rows(); ++i) {
    const double own = (values.row(i) * x.row(i)).sum() / budgets(i);
    for (Index k = 0; k < x.rows(); ++k) {
      if (k == i) continue;
      worst = std::max(worst, (values.row(i) * x.row(k)).sum() / budgets(k) - own);
    }
  }
  return worst;
}

/// min_i (u_i(x_i) - sum_j v_ij / N).
inline double proportionality_check(const AllocationMatrix& alloc, const Matrix& values,
                                    Index n_buyers) {
  require(alloc.alloc.rows() == values.rows() && alloc.alloc.cols() == values.cols() &&
              values.rows() == n_buyers,
          errc::dimension_mismatch, "proportionality_check shapes differ");
  const Vector own = (values * alloc.alloc).rowwise().sum();
  const Vector fair_share = values.rowwise().sum() / static_cast<double>(n_buyers);
  return (own - fair_share).minCoeff();
}

/// Least-squares slope of log(ys) against log(xs).
inline double loglog_slope(std::span<const double> xs, std::span<const double> ys) {
  require(xs.size() == ys.size() && xs.size() >= 2, errc::dimension_mismatch,
          "slope fit needs two equal-length series of length >= 2");
  const auto n = static_cast<double>(xs.size());
  double sx = 0, sy = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    require(xs[k] > 0.0 && ys[k] > 0.0, errc::non_positive_series,
            "log-log fit needs strictly positive entries");
    sx += std::log(xs[k]);
    sy += std::log(ys[k]);
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const double dx = std::log(xs[k]) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(ys[k]) - my);
  }
  require(sxx > 0.0, errc::dimension_mismatch, "xs must not be constant");
  return sxy / sxx;
}

/// Largest excess of u_i* - E[u_i,t] over sqrt(2) vmax / pmin * sqrt(Phi(b_t) - Phi(b*)),
/// across periods and buyers. Non-positive when the per-period bound holds.
inline double individual_bound_violation(const Trajectory& traj, const EquilibriumSolution& eq) {
  const double vmax = traj.mean_values.maxCoeff();
  const double pmin = eq.prices_star.prices.minCoeff();
  const double scale = std::sqrt(2.0) * vmax / pmin;
  const Vector u_star = (traj.mean_values * eq.alloc_star.alloc).rowwise().sum();
  double worst = -std::numeric_limits<double>::infinity();
  for (Index t = 0; t < traj.expected_utilities.rows(); ++t) {
    const double gap = std::max(0.0, traj.expected_phi(t) - eq.phi_star);
    const double bound = scale * std::sqrt(gap);
    const double lhs = (u_star - traj.expected_utilities.row(t).transpose()).maxCoeff();
    worst = std::max(worst, lhs - bound);
  }
  return worst;
}

/// Largest (Psi(b_t) - Psi(b*)) - (Phi(b_t) - Phi(b*)) over stored bids, with
/// Psi the negated EG objective at exp(baseline). Non-positive when the
/// EG-gap-below-Shmyrev-gap inequality holds.
inline double eg_gap_violation(const Trajectory& traj, const EquilibriumSolution& eq,
                               const MarketInstance& market) {
  const Matrix v = eq.baseline.log_values.exp();
  const double psi_star = eg_sample_objective(eq.bids_star, v, market.budgets());
  double worst = -std::numeric_limits<double>::infinity();
  for (const BidMatrix& b : traj.bids_history) {
    const double psi_gap = eg_sample_objective(b, v, market.budgets()) - psi_star;
    const double phi_gap = expected_objective(b, eq.baseline) - eq.phi_star;
    worst = std::max(worst, psi_gap - phi_gap);
  }
  return worst;
}

}  // namespace ofm
