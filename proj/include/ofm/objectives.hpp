#pragma once

// Shmyrev and Eisenberg-Gale objective values, gradients, and the KL/Bregman
// quantities of the negative-entropy mirror map. All logs are natural.

#include <cmath>
#include <span>

#include "ofm/error.hpp"
#include "ofm/linalg.hpp"
#include "ofm/market.hpp"

namespace ofm {

/// log v_ij for one period's sample, or the baseline E[log v_ij].
struct LogValueMatrix {
  Matrix log_values;

  static LogValueMatrix of(const Matrix& values) { return LogValueMatrix{values.log()}; }

  friend bool operator==(const LogValueMatrix& a, const LogValueMatrix& b) {
    return a.log_values.rows() == b.log_values.rows() &&
           a.log_values.cols() == b.log_values.cols() && (a.log_values == b.log_values).all();
  }
};

namespace detail {

inline void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), errc::dimension_mismatch, what);
}

inline std::span<const double> flat(const Matrix& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

inline std::span<const double> flat(const Vector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace detail

/// phi(b) = -sum_ij b_ij log v_ij + sum_j p_j log p_j, p_j = sum_i b_ij.
inline double shmyrev_objective(const BidMatrix& bids, const LogValueMatrix& logv) {
  const Matrix& b = bids.bids;
  detail::check_same_shape(b, logv.log_values, "bids and log-values shapes differ");
  double linear = 0.0;
  for (Index k = 0; k < b.size(); ++k) {
    const double bk = b.data()[k];
    if (bk != 0.0) linear -= bk * logv.log_values.data()[k];
  }
  const Vector p = b.colwise().sum().transpose();
  double entropy = 0.0;
  for (Index j = 0; j < p.size(); ++j) entropy += xlogx(p(j));
  return linear + entropy;
}

/// Entry (i,j) is 1 - log v_ij + log p_j.
inline Matrix shmyrev_gradient(const BidMatrix& bids, const LogValueMatrix& logv) {
  const Matrix& b = bids.bids;
  detail::check_same_shape(b, logv.log_values, "bids and log-values shapes differ");
  const Vector p = b.colwise().sum().transpose();
  require((p > 0.0).all(), errc::zero_price, "gradient undefined at a zero price");
  Matrix g = 1.0 - logv.log_values;
  g.rowwise() += p.log().transpose();
  return g;
}

/// One sample of the negated Eisenberg-Gale objective: -sum_i B_i log u_i with u
/// from the trading-post allocation of `bids`.
inline double eg_sample_objective(const BidMatrix& bids, const Matrix& values,
                                  const Vector& budgets) {
  detail::check_same_shape(bids.bids, values, "bids and values shapes differ");
  require(budgets.size() == values.rows(), errc::dimension_mismatch,
          "budgets length does not match buyers");
  Matrix x = Matrix::Zero(values.rows(), values.cols());
  const Vector p = bids.bids.colwise().sum().transpose();
  for (Index j = 0; j < p.size(); ++j) {
    if (p(j) > 0.0) x.col(j) = bids.bids.col(j) / p(j);
  }
  const Vector u = utilities(values, AllocationMatrix{x});
  require((u > 0.0).all(), errc::zero_utility, "a buyer receives zero utility");
  return -(budgets * u.log()).sum();
}

/// sum_k p_k log(p_k / q_k) with 0 log 0 = 0.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size(), errc::dimension_mismatch, "KL arguments differ in length");
  double acc = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] == 0.0) continue;
    require(q[k] > 0.0, errc::support_mismatch, "q vanishes where p is positive");
    acc += p[k] * std::log(p[k] / q[k]);
  }
  return acc;
}

inline double kl_divergence(const Vector& p, const Vector& q) {
  return kl_divergence(detail::flat(p), detail::flat(q));
}

inline double kl_divergence(const BidMatrix& a, const BidMatrix& b) {
  detail::check_same_shape(a.bids, b.bids, "bid matrices differ in shape");
  return kl_divergence(detail::flat(a.bids), detail::flat(b.bids));
}

inline double kl_divergence(const PriceVector& a, const PriceVector& b) {
  return kl_divergence(a.prices, b.prices);
}

/// Bregman divergence of h(x) = sum x log x - x (generalized KL); equals
/// kl_divergence when both arguments have the same total.
inline double negentropy_bregman(std::span<const double> p, std::span<const double> q) {
  double acc = kl_divergence(p, q);
  for (std::size_t k = 0; k < p.size(); ++k) acc += q[k] - p[k];
  return acc;
}

/// Residual of phi(b') = phi(b) + <grad phi(b), b' - b> + KL(p', p).
inline double bregman_identity_residual(const BidMatrix& b_next, const BidMatrix& b_prev,
                                        const LogValueMatrix& logv) {
  detail::check_same_shape(b_next.bids, b_prev.bids, "bid matrices differ in shape");
  const Matrix grad = shmyrev_gradient(b_prev, logv);
  const Vector p_next = b_next.bids.colwise().sum().transpose();
  const Vector p_prev = b_prev.bids.colwise().sum().transpose();
  require((p_next > 0.0).all(), errc::zero_price, "next prices must be positive");
  const double linearization =
      shmyrev_objective(b_prev, logv) + (grad * (b_next.bids - b_prev.bids)).sum();
  return std::abs(shmyrev_objective(b_next, logv) - linearization -
                  kl_divergence(p_next, p_prev));
}

/// KL over the flattened bids minus KL over the induced prices; never negative
/// up to rounding.
inline double relative_smoothness_gap(const BidMatrix& b_next, const BidMatrix& b_prev) {
  const Vector p_next = b_next.bids.colwise().sum().transpose();
  const Vector p_prev = b_prev.bids.colwise().sum().transpose();
  return kl_divergence(b_next, b_prev) - kl_divergence(p_next, p_prev);
}

/// Phi(b) = E[phi(b, eps)]. Exact at the baseline E[log v] because phi is
/// linear in log v.
inline double expected_objective(const BidMatrix& bids, const LogValueMatrix& baseline) {
  return shmyrev_objective(bids, baseline);
}

}  // namespace ofm
