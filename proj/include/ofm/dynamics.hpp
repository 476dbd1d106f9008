#pragma once

// Online proportional response: the closed-form bid update, its step-size
// generalization, a numerical mirror-descent oracle for the same update, the
// online run loop, and the offline equilibrium solver.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "ofm/error.hpp"
#include "ofm/input_models.hpp"
#include "ofm/linalg.hpp"
#include "ofm/market.hpp"
#include "ofm/objectives.hpp"

namespace ofm {

enum class StepRule { constant_one, inverse_t, inverse_sqrt_t };

constexpr std::string_view to_string(StepRule r) noexcept {
  switch (r) {
    case StepRule::constant_one: return "constant_one";
    case StepRule::inverse_t: return "inverse_t";
    case StepRule::inverse_sqrt_t: return "inverse_sqrt_t";
  }
  return "?";
}

/// eta_t in (0, 1] for t >= 1.
inline double step_size(StepRule rule, long t) {
  switch (rule) {
    case StepRule::constant_one: return 1.0;
    case StepRule::inverse_t: return 1.0 / static_cast<double>(t);
    case StepRule::inverse_sqrt_t: return 1.0 / std::sqrt(static_cast<double>(t));
  }
  return 1.0;
}

/// Row-sum drift tolerated before the defensive renormalization.
inline constexpr double kRenormDriftTol = 1e-12;

namespace detail {

/// Scales row i of `weights` to sum to B_i. Returns the pre-renormalization
/// drift of the first scaling pass.
inline double scale_rows_to_budgets(Matrix& weights, const Vector& budgets, errc zero_code) {
  double drift = 0.0;
  for (Index i = 0; i < weights.rows(); ++i) {
    const double s = weights.row(i).sum();
    if (!(s > 0.0) || !std::isfinite(s)) {
      fail(zero_code, "buyer " + std::to_string(i) + " has a zero update denominator");
    }
    weights.row(i) *= budgets(i) / s;
    const double again = weights.row(i).sum();
    drift = std::max(drift, std::abs(again - budgets(i)));
    weights.row(i) *= budgets(i) / again;
  }
  require(drift < kRenormDriftTol, zero_code, "bid row drift exceeds tolerance");
  return drift;
}

}  // namespace detail

/// b_ij = B_i v_ij x_ij / sum_k v_ik x_ik.
inline BidMatrix pr_step(const MarketInstance& market, const AllocationMatrix& alloc_prev,
                         const Matrix& values_t) {
  require(values_t.rows() == market.n_buyers() && values_t.cols() == market.n_items() &&
              alloc_prev.alloc.rows() == values_t.rows() &&
              alloc_prev.alloc.cols() == values_t.cols(),
          errc::dimension_mismatch, "pr_step shapes do not match the market");
  Matrix w = values_t * alloc_prev.alloc;
  detail::scale_rows_to_budgets(w, market.budgets(), errc::zero_utility_row);
  return BidMatrix{std::move(w)};
}

/// b_ij proportional to b_ij,prev (v_ij / p_j,prev)^eta, rows scaled to B_i.
inline BidMatrix pr_step_eta(const MarketInstance& market, const BidMatrix& bids_prev,
                             const PriceVector& prices_prev, const Matrix& values_t, double eta) {
  const Matrix& b = bids_prev.bids;
  require(b.rows() == market.n_buyers() && b.cols() == market.n_items() &&
              values_t.rows() == b.rows() && values_t.cols() == b.cols() &&
              prices_prev.prices.size() == b.cols(),
          errc::dimension_mismatch, "pr_step_eta shapes do not match the market");
  require((b > 0.0).all(), errc::non_positive_bid, "previous bids must be positive");
  require((prices_prev.prices > 0.0).all(), errc::non_positive_price,
          "previous prices must be positive");
  require(eta > 0.0 && eta <= 1.0, errc::invalid_model_params, "eta must lie in (0, 1]");
  Matrix ratio = values_t.rowwise() / prices_prev.prices.transpose();
  Matrix w = b * ratio.pow(eta);
  detail::scale_rows_to_budgets(w, market.budgets(), errc::non_positive_bid);
  return BidMatrix{std::move(w)};
}

struct OmdSolverOptions {
  double damping = 0.5;
  int max_iter = 10'000;
  double feasibility_tol = 1e-10;
  double step_tol = 1e-14;
};

/// Solves each buyer's mirror-descent subproblem
///   argmin_{b_i >= 0, sum b_i = B_i} <g_i, b_i - b_i,prev> + KL(b_i, b_i,prev),
/// g_ij = 1 - log(v_ij / p_j,prev), by damped exponentiated-gradient iteration.
/// Slow and only meant to cross-check the closed-form update.
inline BidMatrix omd_step_numeric(const MarketInstance& market, const BidMatrix& bids_prev,
                                  const PriceVector& prices_prev, const Matrix& values_t,
                                  const OmdSolverOptions& opts = {}) {
  const Matrix& b_prev = bids_prev.bids;
  require(b_prev.rows() == market.n_buyers() && b_prev.cols() == market.n_items() &&
              values_t.rows() == b_prev.rows() && values_t.cols() == b_prev.cols(),
          errc::dimension_mismatch, "omd_step_numeric shapes do not match the market");
  require((b_prev > 0.0).all(), errc::non_positive_bid, "previous bids must be positive");
  require((prices_prev.prices > 0.0).all(), errc::non_positive_price,
          "previous prices must be positive");

  Matrix grad = 1.0 - values_t.log();
  grad.rowwise() += prices_prev.prices.log().transpose();

  Matrix out(b_prev.rows(), b_prev.cols());
  for (Index i = 0; i < b_prev.rows(); ++i) {
    const Eigen::ArrayXd log_prev = b_prev.row(i).transpose().log();
    const Eigen::ArrayXd g = grad.row(i).transpose();
    const double log_budget = std::log(market.budget(i));
    Eigen::ArrayXd lb = log_prev;
    bool converged = false;
    for (int it = 0; it < opts.max_iter; ++it) {
      // objective gradient g + log(b / b_prev) + 1, mirror step in log space
      Eigen::ArrayXd next = lb - opts.damping * (g + lb - log_prev + 1.0);
      const double shift = next.maxCoeff();
      next -= shift + std::log((next - shift).exp().sum()) - log_budget;
      const double change = (next - lb).abs().maxCoeff();
      lb = next;
      if (change <= opts.step_tol) {
        converged = true;
        break;
      }
    }
    const Eigen::ArrayXd row = lb.exp();
    if (!converged || std::abs(row.sum() - market.budget(i)) > opts.feasibility_tol) {
      throw convergence_error("mirror-descent subproblem did not converge for buyer " +
                                  std::to_string(i),
                              std::numeric_limits<double>::quiet_NaN(), opts.max_iter);
    }
    out.row(i) = row.transpose();
  }
  return BidMatrix{std::move(out)};
}

/// Per-period record of one online run.
struct Trajectory {
  long horizon = 0;
  StepRule rule = StepRule::constant_one;

  /// Stored bid matrices and the (1-based) periods they belong to. Complete
  /// when thinning is off or the horizon is at most kFullHistoryLimit.
  std::vector<BidMatrix> bids_history;
  std::vector<long> bid_periods;

  Matrix prices_history;       ///< T x M
  Matrix utilities_history;    ///< T x N, realized sum_j v_ij,t x_ij,t
  Matrix expected_utilities;   ///< T x N, sum_j E[v_ij] x_ij,t
  Vector sample_phi;           ///< phi(b_t, eps_t)
  Vector expected_phi;         ///< Phi(b_t)
  Vector phi_deviation_sup;    ///< sup_b |Phi(b) - phi(b, eps_t)|

  LogValueMatrix baseline;
  Matrix mean_values;

  double max_budget_violation = 0.0;
  double max_clearance_violation = 0.0;
  double max_price_sum_violation = 0.0;
  double min_bid = std::numeric_limits<double>::infinity();
  bool zero_price_seen = false;

  bool has_full_bids() const { return static_cast<long>(bids_history.size()) == horizon; }

  static constexpr long kFullHistoryLimit = 1000;
};

struct RunOptions {
  /// Keep only the first and last bid matrices when the horizon exceeds
  /// Trajectory::kFullHistoryLimit.
  bool thin = true;
  /// Period-1 bids; uniform B_i / M when empty.
  std::optional<BidMatrix> initial_bids;
};

namespace detail {

/// sup over feasible b of |sum_ij b_ij d_ij| where rows of b sum to B_i.
inline double sup_linear_deviation(const Matrix& d, const Vector& budgets) {
  double hi = 0.0, lo = 0.0;
  for (Index i = 0; i < d.rows(); ++i) {
    hi += budgets(i) * d.row(i).maxCoeff();
    lo += budgets(i) * d.row(i).minCoeff();
  }
  return std::max(std::abs(hi), std::abs(lo));
}

}  // namespace detail

/// Runs the online dynamics for `horizon` periods. Period 1 plays the initial
/// bids against the first drawn valuations; each later period draws v_t and
/// updates bids from the previous allocation (eta = 1) or previous bids and
/// prices (time-varying eta).
inline Trajectory run_online(const MarketInstance& market, ValueStream& stream, long horizon,
                             StepRule rule, const RunOptions& opts = {}) {
  require(horizon >= 1, errc::config_error, "horizon must be at least 1");
  require(stream.market() == market, errc::dimension_mismatch,
          "stream was built for a different market");
  stream.model().validate_horizon(horizon);

  const Index n = market.n_buyers(), m = market.n_items();
  Trajectory tr;
  tr.horizon = horizon;
  tr.rule = rule;
  tr.baseline = baseline_log_values(stream.model(), market);
  tr.mean_values = mean_values(stream.model(), market);
  tr.prices_history.resize(horizon, m);
  tr.utilities_history.resize(horizon, n);
  tr.expected_utilities.resize(horizon, n);
  tr.sample_phi.resize(horizon);
  tr.expected_phi.resize(horizon);
  tr.phi_deviation_sup.resize(horizon);

  const bool keep_all = !opts.thin || horizon <= Trajectory::kFullHistoryLimit;
  BidMatrix bids = opts.initial_bids ? *opts.initial_bids : uniform_bids(market);
  require(bids.bids.rows() == n && bids.bids.cols() == m, errc::dimension_mismatch,
          "initial bids shape does not match market");
  TradeOutcome trade;

  for (long t = 1; t <= horizon; ++t) {
    try {
      Matrix values = stream.next_values();
      if (t >= 2) {
        if (rule == StepRule::constant_one) {
          bids = pr_step(market, trade.allocation, values);
        } else {
          bids = pr_step_eta(market, bids, trade.prices, values, step_size(rule, t));
        }
      }
      trade = trading_post(market, bids);

      const Index row = t - 1;
      tr.prices_history.row(row) = trade.prices.prices.transpose();
      tr.utilities_history.row(row) = utilities(values, trade.allocation).transpose();
      tr.expected_utilities.row(row) = utilities(tr.mean_values, trade.allocation).transpose();
      const LogValueMatrix logv{stream.last_log_values()};
      tr.sample_phi(row) = shmyrev_objective(bids, logv);
      tr.expected_phi(row) = expected_objective(bids, tr.baseline);
      tr.phi_deviation_sup(row) =
          detail::sup_linear_deviation(logv.log_values - tr.baseline.log_values, market.budgets());

      tr.max_budget_violation = std::max(tr.max_budget_violation, max_budget_violation(market, bids));
      tr.max_clearance_violation = std::max(tr.max_clearance_violation, max_clearance_violation(trade));
      tr.max_price_sum_violation =
          std::max(tr.max_price_sum_violation, std::abs(trade.prices.prices.sum() - 1.0));
      tr.min_bid = std::min(tr.min_bid, bids.bids.minCoeff());
      tr.zero_price_seen = tr.zero_price_seen || trade.zero_price_item;

      if (keep_all || t == 1 || t == horizon) {
        tr.bids_history.push_back(bids);
        tr.bid_periods.push_back(t);
      }
    } catch (const convergence_error&) {
      throw;
    } catch (const error& e) {
      throw error(e.code(), std::string(e.what()) + " (period " + std::to_string(t) + ")");
    }
  }
  return tr;
}

/// Equilibrium bids b*, prices p*, allocation x*, utilities u* (against mean
/// values), and Phi(b*) at the baseline log-values.
struct EquilibriumSolution {
  BidMatrix bids_star;
  PriceVector prices_star;
  AllocationMatrix alloc_star;
  Vector utilities_star;
  double phi_star = 0.0;
  long iterations = 0;
  double final_kl = 0.0;
  /// Phi(b*) - D(p*), with D the price lower bound of price_lower_bound.
  double duality_gap = 0.0;
  /// True when b* came from the support refinement rather than the last iterate.
  bool refined = false;
  LogValueMatrix baseline;
};

struct EquilibriumOptions {
  double tol = 1e-12;
  long max_iter = 100'000;
  /// After the price test passes, keep iterating and periodically try to
  /// finish exactly on the support of the current bids, so that Phi(b*) sits
  /// at machine precision.
  bool polish = true;
  /// Accepted duality gap of a refined solution.
  double gap_tol = 1e-13;
};

/// D(q) = -sum_i B_i log max_j (v_ij / q_j). For q on the simplex (sum B_i = 1),
/// D(q) <= Phi(b) for every feasible b, with equality at the equilibrium.
inline double price_lower_bound(const MarketInstance& market, const Matrix& log_values,
                                const Vector& log_prices) {
  double d = 0.0;
  for (Index i = 0; i < log_values.rows(); ++i) {
    d -= market.budget(i) * (log_values.row(i) - log_prices.transpose()).maxCoeff();
  }
  return d;
}

namespace detail {

struct Refinement {
  BidMatrix bids;
  PriceVector prices;
  double phi = 0.0;
  double gap = 0.0;
};

/// Exact equilibrium on the maximum-weight spanning forest of the candidate
/// edges (weight, i * m + j): prices from v_ij / p_j equal across each buyer's
/// edges and per-component money balance, bids from the unique forest flow.
/// Returns nothing if the result is infeasible or not certified by the gap.
inline std::optional<Refinement> refine_on_edges(const MarketInstance& market, const Matrix& log_v,
                                                 const LogValueMatrix& baseline,
                                                 std::vector<std::pair<double, Index>> order,
                                                 double gap_tol) {
  const Index n = market.n_buyers(), m = market.n_items();
  // nodes: buyers 0..n-1, items n..n+m-1
  std::vector<Index> parent(static_cast<std::size_t>(n + m));
  for (Index k = 0; k < n + m; ++k) parent[k] = k;
  auto find = [&](Index x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    return a.first > b.first || (a.first == b.first && a.second < b.second);
  });
  std::vector<std::vector<Index>> adj(static_cast<std::size_t>(n + m));
  for (const auto& [w, e] : order) {
    const Index i = e / m, j = n + e % m;
    const Index ri = find(i), rj = find(j);
    if (ri == rj) continue;
    parent[ri] = rj;
    adj[i].push_back(j);
    adj[j].push_back(i);
  }

  // log prices per component up to a shift, then shift to balance money
  Vector log_p = Vector::Zero(m);
  Vector log_gamma = Vector::Zero(n);
  std::vector<int> comp(static_cast<std::size_t>(n + m), -1);
  std::vector<double> budget_mass, price_mass_max;
  int n_comp = 0;
  for (Index root = 0; root < n + m; ++root) {
    if (comp[root] >= 0) continue;
    if (adj[root].empty()) return std::nullopt;  // isolated item or buyer
    std::vector<Index> stack{root};
    comp[root] = n_comp;
    if (root < n) log_gamma(root) = 0.0;
    else log_p(root - n) = 0.0;
    while (!stack.empty()) {
      const Index u = stack.back();
      stack.pop_back();
      for (Index w : adj[u]) {
        if (comp[w] >= 0) continue;
        comp[w] = n_comp;
        if (u < n) log_p(w - n) = log_v(u, w - n) - log_gamma(u);
        else log_gamma(w) = log_v(w, u - n) - log_p(u - n);
        stack.push_back(w);
      }
    }
    ++n_comp;
  }
  std::vector<double> money(static_cast<std::size_t>(n_comp), 0.0), shift_max(
      static_cast<std::size_t>(n_comp), -std::numeric_limits<double>::infinity());
  for (Index i = 0; i < n; ++i) money[comp[i]] += market.budget(i);
  for (Index j = 0; j < m; ++j) shift_max[comp[n + j]] = std::max(shift_max[comp[n + j]], log_p(j));
  std::vector<double> sum_exp(static_cast<std::size_t>(n_comp), 0.0);
  for (Index j = 0; j < m; ++j) sum_exp[comp[n + j]] += std::exp(log_p(j) - shift_max[comp[n + j]]);
  for (Index j = 0; j < m; ++j) {
    const int c = comp[n + j];
    log_p(j) += std::log(money[c]) - shift_max[c] - std::log(sum_exp[c]);
  }
  const Vector p = log_p.exp();

  // forest flow by leaf peeling: buyers supply B_i, items absorb p_j
  Vector residual(n + m);
  for (Index i = 0; i < n; ++i) residual(i) = market.budget(i);
  for (Index j = 0; j < m; ++j) residual(n + j) = p(j);
  std::vector<Index> degree(static_cast<std::size_t>(n + m));
  std::vector<Index> leaves;
  for (Index k = 0; k < n + m; ++k) {
    degree[k] = static_cast<Index>(adj[k].size());
    if (degree[k] == 1) leaves.push_back(k);
  }
  std::vector<char> done(static_cast<std::size_t>(n + m), 0);
  Matrix flow = Matrix::Zero(n, m);
  while (!leaves.empty()) {
    const Index u = leaves.back();
    leaves.pop_back();
    if (done[u] || degree[u] != 1) continue;
    Index w = -1;
    for (Index x : adj[u])
      if (!done[x]) w = x;
    if (w < 0) continue;
    const double f = residual(u);
    if (u < n) flow(u, w - n) = f;
    else flow(w, u - n) = f;
    residual(w) -= f;
    residual(u) = 0.0;
    done[u] = 1;
    if (--degree[w] == 1) leaves.push_back(w);
  }
  const double scale = std::max(1.0, p.maxCoeff());
  if (flow.minCoeff() < -1e-14 * scale) return std::nullopt;
  flow = flow.max(0.0);

  Refinement r;
  r.bids = BidMatrix{flow};
  // exact row sums and column sums up to rounding
  for (Index i = 0; i < n; ++i) {
    const double s = r.bids.bids.row(i).sum();
    if (!(s > 0.0) || std::abs(s - market.budget(i)) > 1e-12) return std::nullopt;
    r.bids.bids.row(i) *= market.budget(i) / s;
  }
  const Vector col = r.bids.bids.colwise().sum().transpose();
  if ((col <= 0.0).any() || ((col - p).abs() > 1e-12).any()) return std::nullopt;
  r.prices = PriceVector{col};
  r.phi = expected_objective(r.bids, baseline);
  r.gap = r.phi - price_lower_bound(market, log_v, col.log());
  if (!(r.gap <= gap_tol * std::max(1.0, std::abs(r.phi)))) return std::nullopt;
  return r;
}

/// Candidates from the current bids: edges within `slack` (log bang-per-buck)
/// of each buyer's best item, weighted by bid share.
inline std::optional<Refinement> refine_on_support(const MarketInstance& market,
                                                   const Matrix& log_v, const LogValueMatrix& baseline,
                                                   const Matrix& bids, const Vector& log_prices,
                                                   double slack, double gap_tol) {
  const Index n = market.n_buyers(), m = market.n_items();
  std::vector<std::pair<double, Index>> order;
  for (Index i = 0; i < n; ++i) {
    const auto bpb = (log_v.row(i) - log_prices.transpose()).eval();
    const double best = bpb.maxCoeff();
    for (Index j = 0; j < m; ++j)
      if (bids(i, j) > 0.0 && bpb(j) >= best - slack) order.push_back({bids(i, j) / market.budget(i), i * m + j});
  }
  return refine_on_edges(market, log_v, baseline, std::move(order), gap_tol);
}

/// Newton continuation on the smoothed dual in y_i = log(1 / utility price):
///   f_mu(y) = sum_j exp(mu * logsumexp_i((y_i + log v_ij) / mu)) - sum_i B_i y_i,
/// whose stationary point is a market with softened best responses. As mu
/// shrinks the soft bids concentrate on the equilibrium support, which is then
/// solved exactly by refine_on_edges.
inline std::optional<Refinement> refine_by_smoothed_dual(const MarketInstance& market,
                                                         const Matrix& log_v,
                                                         const LogValueMatrix& baseline,
                                                         const Vector& log_prices, double gap_tol) {
  const Index n = market.n_buyers(), m = market.n_items();
  const Vector budgets = market.budgets();
  Vector y(n);
  for (Index i = 0; i < n; ++i) y(i) = (log_prices.transpose() - log_v.row(i)).minCoeff();

  Matrix w(n, m);
  Vector log_p(m);
  auto evaluate = [&](const Vector& yy, double mu) {
    for (Index j = 0; j < m; ++j) {
      const auto s = ((yy + log_v.col(j)) / mu).eval();
      const double mx = s.maxCoeff();
      const double lse = mx + std::log((s - mx).exp().sum());
      w.col(j) = (s - lse).exp();
      log_p(j) = mu * lse;
    }
    return log_p.exp().sum() - (budgets * yy).sum();
  };

  for (double mu = 1e-3; mu >= 1e-11; mu *= 0.1) {
    double f = evaluate(y, mu);
    for (int k = 0; k < 60; ++k) {
      const Vector p = log_p.exp();
      const Eigen::VectorXd g = w.matrix() * p.matrix() - budgets.matrix();
      if (g.cwiseAbs().maxCoeff() <= 1e-14) break;
      const Eigen::MatrixXd wp = w.matrix() * p.matrix().asDiagonal();
      Eigen::MatrixXd h = -(1.0 / mu - 1.0) * (wp * w.matrix().transpose());
      h.diagonal() += wp.rowwise().sum() / mu;
      const Eigen::VectorXd d = -h.ldlt().solve(g);
      if (!d.allFinite()) break;
      const double slope = g.dot(d);
      double step = 1.0, next_f = f;
      Vector next_y;
      bool moved = false;
      for (int ls = 0; ls < 40; ++ls, step *= 0.5) {
        next_y = y + step * d.array();
        next_f = evaluate(next_y, mu);
        if (next_f <= f + 1e-4 * step * slope) {
          moved = true;
          break;
        }
      }
      if (!moved) {
        evaluate(y, mu);
        break;
      }
      y = std::move(next_y);
      f = next_f;
    }
    if (mu > 1e-5) continue;
    std::vector<std::pair<double, Index>> order;
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < m; ++j) {
        const double slack = log_p(j) - (y(i) + log_v(i, j));
        if (slack <= 30.0 * mu) order.push_back({w(i, j) * std::exp(log_p(j)) / budgets(i), i * m + j});
      }
    auto r = refine_on_edges(market, log_v, baseline, std::move(order), gap_tol);
    if (r) return r;
  }
  return std::nullopt;
}

}  // namespace detail

/// Deterministic proportional response on v = exp(baseline) until the
/// consecutive-price KL drops below `tol`, then (with polish) refined to
/// machine precision and certified by the duality gap.
inline EquilibriumSolution solve_equilibrium(const MarketInstance& market,
                                             const LogValueMatrix& baseline,
                                             const EquilibriumOptions& opts,
                                             const Matrix& mean_vals) {
  require(opts.tol > 0.0, errc::config_error, "tolerance must be positive");
  require(baseline.log_values.rows() == market.n_buyers() &&
              baseline.log_values.cols() == market.n_items() &&
              mean_vals.rows() == market.n_buyers() && mean_vals.cols() == market.n_items(),
          errc::dimension_mismatch, "baseline or mean values do not match the market");
  const Matrix& log_v = baseline.log_values;
  const Matrix v = log_v.exp();

  BidMatrix bids = uniform_bids(market);
  TradeOutcome trade = trading_post(market, bids);
  double kl = std::numeric_limits<double>::infinity();
  long it = 0;
  auto step = [&] {
    BidMatrix next = pr_step(market, trade.allocation, v);
    TradeOutcome next_trade = trading_post(market, next);
    kl = kl_divergence(next_trade.prices, trade.prices);
    bids = std::move(next);
    trade = std::move(next_trade);
    ++it;
  };
  while (it < opts.max_iter && kl > opts.tol) step();
  if (kl > opts.tol) {
    throw convergence_error("equilibrium solver hit the iteration cap", kl, it);
  }

  EquilibriumSolution sol;
  double phi = expected_objective(bids, baseline);
  if (opts.polish) {
    constexpr long kRefineEvery = 16;
    std::optional<detail::Refinement> best =
        detail::refine_by_smoothed_dual(market, log_v, baseline, trade.prices.prices.log(), opts.gap_tol);
    if (best && !(best->phi <= phi + 1e-15 * std::max(1.0, std::abs(phi)))) best.reset();
    while (!best && it < opts.max_iter) {
      const Vector log_p = trade.prices.prices.log();
      for (double slack : {1e-4, 1e-7, 1e-10}) {
        auto r = detail::refine_on_support(market, log_v, baseline, bids.bids, log_p, slack,
                                           opts.gap_tol);
        if (r && r->phi <= phi + 1e-15 * std::max(1.0, std::abs(phi))) {
          best = std::move(r);
          break;
        }
      }
      if (best) break;
      for (long k = 0; k < kRefineEvery && it < opts.max_iter; ++k) step();
      phi = expected_objective(bids, baseline);
    }
    if (best) {
      bids = std::move(best->bids);
      trade = trading_post(market, bids);
      phi = best->phi;
      sol.refined = true;
    }
  }

  sol.duality_gap = phi - price_lower_bound(market, log_v, trade.prices.prices.log());
  sol.utilities_star = utilities(mean_vals, trade.allocation);
  sol.bids_star = std::move(bids);
  sol.prices_star = trade.prices;
  sol.alloc_star = trade.allocation;
  sol.phi_star = phi;
  sol.iterations = it;
  sol.final_kl = kl;
  sol.baseline = baseline;
  return sol;
}

/// Uses the model's analytic baseline and mean values.
inline EquilibriumSolution solve_equilibrium(const MarketInstance& market, const NoiseModel& model,
                                             const EquilibriumOptions& opts = {}) {
  return solve_equilibrium(market, baseline_log_values(model, market), opts,
                           mean_values(model, market));
}

/// Mean values default to exp(baseline).
inline EquilibriumSolution solve_equilibrium(const MarketInstance& market,
                                             const LogValueMatrix& baseline,
                                             const EquilibriumOptions& opts = {}) {
  return solve_equilibrium(market, baseline, opts, baseline.log_values.exp());
}

}  // namespace ofm
