#pragma once

// Randomized invariant suites over the objectives, dynamics and metrics, with
// a pass/fail table. Self-test mode corrupts one bid row so the budget suite
// must fail (negative control).

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <span>
#include <random>
#include <string>
#include <vector>

#include "ofm/dynamics.hpp"
#include "ofm/harness/experiment.hpp"
#include "ofm/metrics.hpp"
#include "ofm/objectives.hpp"

namespace ofm::harness {

struct SuiteResult {
  std::string name;
  long instances = 0;
  /// Worst observed value; compared as worst <= tol, or worst >= tol when lower_bound.
  double worst = 0.0;
  double tol = 0.0;
  bool lower_bound = false;

  bool passed() const { return lower_bound ? worst >= tol : worst <= tol; }
};

struct InvariantReport {
  std::vector<SuiteResult> suites;

  bool passed() const {
    for (const auto& s : suites)
      if (!s.passed()) return false;
    return true;
  }

  std::string table() const {
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-28s %9s %14s %14s  %s\n", "suite", "instances", "worst",
                  "tolerance", "verdict");
    out += buf;
    for (const auto& s : suites) {
      std::snprintf(buf, sizeof buf, "%-28s %9ld %14.3e %2s%12.3e  %s\n", s.name.c_str(), s.instances,
                    s.worst, s.lower_bound ? ">=" : "<=", s.tol, s.passed() ? "PASS" : "FAIL");
      out += buf;
    }
    return out;
  }
};

namespace detail {

class SuiteAccumulator {
 public:
  SuiteAccumulator(std::string name, double tol, bool lower_bound = false) {
    r_.name = std::move(name);
    r_.tol = tol;
    r_.lower_bound = lower_bound;
    r_.worst = lower_bound ? std::numeric_limits<double>::infinity()
                           : -std::numeric_limits<double>::infinity();
  }
  void add(double x) {
    ++r_.instances;
    // NaN counts as the worst possible outcome
    if (std::isnan(x)) x = r_.lower_bound ? -std::numeric_limits<double>::infinity()
                                          : std::numeric_limits<double>::infinity();
    r_.worst = r_.lower_bound ? std::min(r_.worst, x) : std::max(r_.worst, x);
  }
  const SuiteResult& result() const { return r_; }

 private:
  SuiteResult r_;
};

struct InstanceGen {
  std::mt19937_64 rng;

  Index dim(Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng); }

  Matrix uniform(Index rows, Index cols, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix out(rows, cols);
    for (Index k = 0; k < out.size(); ++k) out.data()[k] = u(rng);
    return out;
  }

  /// Random budgets in [0.2, 1] and valuations in [lo, 1], normalized.
  MarketInstance market(Index n, Index m, double lo) {
    std::uniform_real_distribution<double> u(0.2, 1.0);
    Vector budgets(n);
    for (Index i = 0; i < n; ++i) budgets(i) = u(rng);
    return normalize_market(budgets, uniform(n, m, lo, 1.0));
  }

  MarketInstance market(double lo = 1e-3) { return market(dim(1, 6), dim(1, 6), lo); }

  BidMatrix bids(const MarketInstance& mk, double spread = 3.0) {
    Matrix w = uniform(mk.n_buyers(), mk.n_items(), -spread, spread).exp();
    for (Index i = 0; i < w.rows(); ++i) w.row(i) *= mk.budget(i) / w.row(i).sum();
    return BidMatrix{w};
  }

  Vector simplex(Index k, double spread = 3.0) {
    Vector v = uniform(k, 1, -spread, spread).col(0).exp();
    return v / v.sum();
  }

  LogValueMatrix log_values(const MarketInstance& mk) {
    return LogValueMatrix{uniform(mk.n_buyers(), mk.n_items(), -3.0, 0.0)};
  }
};

}  // namespace detail

/// Runs every suite once per seed (seeds base_seed, base_seed + 1, ...).
inline InvariantReport check_invariants(long seeds = 1, bool self_test = false,
                                        std::uint64_t base_seed = 0) {
  using detail::SuiteAccumulator;
  require(seeds >= 1, errc::config_error, "seeds must be >= 1");

  SuiteAccumulator bregman("bregman_identity", 1e-9), three_point("three_point_identity", 1e-9),
      smooth("relative_smoothness", -1e-12, true), fd("gradient_finite_difference", 1e-5),
      omd("closed_form_vs_omd", 1e-6), eta_one("eta_one_equivalence", 1e-12),
      budget("budget_and_clearance", kConservationTol), decrease("objective_nonincreasing", 1e-12),
      lyapunov("kl_to_equilibrium_decrease", 1e-12), init("initial_kl_bound", 1e-12),
      pathwise("pathwise_regret", 1e-9), fairness("fairness_increments", -kGapTol, true),
      individual("individual_bound", kIndividualBoundTol), eg("eg_gap", kEgGapTol),
      envy("envy_free", 1e-8), prop("proportional", -1e-8, true);

  for (long s = 0; s < seeds; ++s) {
    detail::InstanceGen gen{std::mt19937_64(base_seed + static_cast<std::uint64_t>(s))};

    for (int k = 0; k < 100; ++k) {
      const MarketInstance mk = gen.market();
      const LogValueMatrix logv = gen.log_values(mk);
      const BidMatrix a = gen.bids(mk), b = gen.bids(mk);
      bregman.add(bregman_identity_residual(a, b, logv));
      smooth.add(relative_smoothness_gap(a, b));

      // D(c, a) = D(c, b) + D(b, a) + <log b - log a, c - b>
      const Index len = gen.dim(1, 12);
      const Vector x = gen.simplex(len), y = gen.simplex(len), z = gen.simplex(len);
      const auto flat = [](const Vector& v) { return std::span<const double>(v.data(), v.size()); };
      const double lhs = negentropy_bregman(flat(z), flat(x));
      const double rhs = negentropy_bregman(flat(z), flat(y)) + negentropy_bregman(flat(y), flat(x)) +
                         ((y.log() - x.log()) * (z - y)).sum();
      three_point.add(std::abs(lhs - rhs));

      // central differences along a feasible (row-sum preserving) direction
      Matrix d = gen.uniform(mk.n_buyers(), mk.n_items(), -1.0, 1.0);
      d.colwise() -= d.rowwise().mean();
      const double h = 1e-6 * a.bids.minCoeff();
      const double fd_value = (shmyrev_objective(BidMatrix{a.bids + h * d}, logv) -
                               shmyrev_objective(BidMatrix{a.bids - h * d}, logv)) / (2.0 * h);
      fd.add(std::abs(fd_value - (shmyrev_gradient(a, logv) * d).sum()));
    }

    for (int k = 0; k < 50; ++k) {
      const MarketInstance mk = gen.market();
      const BidMatrix b = gen.bids(mk);
      const TradeOutcome trade = trading_post(mk, b);
      const Matrix v = gen.uniform(mk.n_buyers(), mk.n_items(), 1e-3, 1.0);
      const BidMatrix closed = pr_step(mk, trade.allocation, v);
      omd.add((closed.bids - omd_step_numeric(mk, b, trade.prices, v).bids).abs().maxCoeff());
      eta_one.add((closed.bids - pr_step_eta(mk, b, trade.prices, v, 1.0).bids).abs().maxCoeff());
    }

    for (int k = 0; k < 10; ++k) {
      const MarketInstance mk = gen.market(0.2);
      const std::uint64_t stream_seed = gen.rng();

      // noisy run: conservation, pathwise regret, fairness and per-period bounds
      {
        const NoiseModel model = NoiseModel::stationary(0.05);
        constexpr long T = 200;
        ValueStream stream = make_stream(model, mk, stream_seed);
        RunOptions opts;
        opts.thin = false;
        const Trajectory tr = run_online(mk, stream, T, StepRule::constant_one, opts);
        budget.add(std::max(tr.max_budget_violation, tr.max_clearance_violation));
        if (self_test && k == 0) {
          BidMatrix bad = tr.bids_history.back();
          bad.bids.row(0) *= 1.01;
          budget.add(max_budget_violation(mk, bad));
        }

        ValueStream replay = make_stream(model, mk, stream_seed);
        std::vector<LogValueMatrix> logs;
        for (long t = 1; t <= T; ++t) {
          replay.next_values();
          logs.push_back(LogValueMatrix{replay.last_log_values()});
        }
        const EquilibriumSolution eq = solve_equilibrium(mk, model);
        for (const BidMatrix& comparator : {eq.bids_star, gen.bids(mk)}) {
          double regret = 0.0;
          for (long t = 2; t <= T; ++t) {
            regret += tr.sample_phi(t - 1) - shmyrev_objective(comparator, logs[t - 1]);
          }
          const double telescope = kl_divergence(comparator, tr.bids_history.front()) -
                                   kl_divergence(comparator, tr.bids_history.back());
          pathwise.add(regret - telescope);
        }
        fairness.add((tr.expected_phi - eq.phi_star).minCoeff());
        individual.add(individual_bound_violation(tr, eq));
        eg.add(eg_gap_violation(tr, eq, mk));
        const Matrix v_bar = eq.baseline.log_values.exp();
        const double psi_star = eg_sample_objective(eq.bids_star, v_bar, mk.budgets());
        for (int r = 0; r < 10; ++r) {
          const BidMatrix b = gen.bids(mk);
          eg.add(eg_sample_objective(b, v_bar, mk.budgets()) - psi_star -
                 (expected_objective(b, eq.baseline) - eq.phi_star));
        }
      }

      // zero-noise run: monotone objective and KL to the equilibrium
      {
        const NoiseModel model = NoiseModel::stationary(0.0);
        constexpr long T = 300;
        ValueStream stream = make_stream(model, mk, stream_seed);
        RunOptions opts;
        opts.thin = false;
        const Trajectory tr = run_online(mk, stream, T, StepRule::constant_one, opts);
        const EquilibriumSolution eq = solve_equilibrium(mk, model);
        const double log_mn = std::log(static_cast<double>(mk.n_buyers() * mk.n_items()));
        init.add(kl_divergence(eq.bids_star, tr.bids_history.front()) - log_mn);
        double worst_up = -std::numeric_limits<double>::infinity(), worst_kl = worst_up;
        double prev_kl = kl_divergence(eq.bids_star, tr.bids_history.front());
        for (long t = 2; t <= T; ++t) {
          worst_up = std::max(worst_up, tr.expected_phi(t - 1) - tr.expected_phi(t - 2));
          const double kl = kl_divergence(eq.bids_star, tr.bids_history[t - 1]);
          worst_kl = std::max(worst_kl, kl - prev_kl);
          prev_kl = kl;
        }
        decrease.add(worst_up);
        lyapunov.add(worst_kl);
      }
    }

    for (int k = 0; k < 20; ++k) {
      const MarketInstance mk = gen.market();
      const EquilibriumSolution eq = solve_equilibrium(mk, LogValueMatrix::of(mk.base_values()));
      envy.add(envy_check(eq.alloc_star, mk.base_values(), mk.budgets()));
      if (mk.n_buyers() > 1) {
        const MarketInstance equal = normalize_market(Vector::Ones(mk.n_buyers()), mk.base_values());
        const EquilibriumSolution eq_equal =
            solve_equilibrium(equal, LogValueMatrix::of(equal.base_values()));
        prop.add(proportionality_check(eq_equal.alloc_star, equal.base_values(), equal.n_buyers()));
      }
    }
  }

  InvariantReport report;
  for (const auto* acc : {&bregman, &three_point, &smooth, &fd, &omd, &eta_one, &budget, &decrease,
                          &lyapunov, &init, &pathwise, &fairness, &individual, &eg, &envy, &prop}) {
    report.suites.push_back(acc->result());
  }
  return report;
}

}  // namespace ofm::harness
