#pragma once

// Multi-trial experiments: the fairness-regret experiment, the stationary
// instance sweep, and the step-size comparison. Each returns an in-memory
// summary and, when an output directory is configured, writes CSV/JSON files.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "ofm/dynamics.hpp"
#include "ofm/harness/config.hpp"
#include "ofm/harness/csv.hpp"
#include "ofm/metrics.hpp"

namespace ofm::harness {

/// Tolerances of the per-run invariant checks.
inline constexpr double kConservationTol = 1e-10;
inline constexpr double kGapTol = 1e-12;
inline constexpr double kIndividualBoundTol = 1e-8;
inline constexpr double kEgGapTol = 1e-9;

struct TrialResult {
  long trial = 0;
  double fairness_final = 0.0;
  double individual_final = 0.0;
  double individual_relative_final = 0.0;
  /// Relative individual regret R_i(t) / (t u_i*) at the summary checkpoints.
  std::vector<double> relative_at_checkpoints;
  /// Cumulative fairness regret per period.
  Vector fairness_cumulative;
  double phi_bar = 0.0;  ///< max_t sup_b |Phi(b) - phi(b, eps_t)|
  double price_avg_dist = 0.0;
  double price_last_dist = 0.0;
  double max_budget_violation = 0.0;
  double max_clearance_violation = 0.0;
  double min_gap = 0.0;  ///< min_t Phi(b_t) - Phi(b*)
  double individual_bound_violation = 0.0;
  double eg_gap_violation = 0.0;
  bool phi_nonincreasing = true;  ///< Phi(b_t) <= Phi(b_{t-1}) + 1e-12 for all t
  long equilibrium_iterations = 0;

  bool invariants_ok() const {
    return max_budget_violation <= kConservationTol && max_clearance_violation <= kConservationTol &&
           min_gap >= -kGapTol && individual_bound_violation <= kIndividualBoundTol &&
           eg_gap_violation <= kEgGapTol;
  }
};

/// Checkpoints T/10, T/5, 2T/5, T (deduplicated, >= 1).
inline std::vector<long> slope_checkpoints(long horizon) {
  std::vector<long> out;
  for (long c : {horizon / 10, horizon / 5, 2 * horizon / 5, horizon}) {
    if (c >= 1 && (out.empty() || c > out.back())) out.push_back(c);
  }
  return out;
}

/// kappa = ceil(-log T / log alpha) and delta = alpha^kappa (both 0 when alpha = 0).
inline std::pair<long, double> ergodic_mixing(double alpha, long horizon) {
  if (alpha <= 0.0 || horizon <= 1) return {0, 0.0};
  const long kappa = std::min<long>(
      horizon, static_cast<long>(std::ceil(-std::log(static_cast<double>(horizon)) / std::log(alpha))));
  return {kappa, std::pow(alpha, static_cast<double>(kappa))};
}

/// Fairness-regret bound of the configured input model for one trial.
inline double fairness_bound(const NoiseModel& model, long horizon, double log_mn, double phi_bar) {
  const auto T = static_cast<double>(horizon);
  switch (model.kind) {
    case NoiseKind::stationary:
    case NoiseKind::periodic:  // partitions are identically distributed, so delta = 0
      return log_mn;
    case NoiseKind::corrupted:
      return 2.0 * model.mu_range * T + log_mn;
    case NoiseKind::ergodic: {
      const auto [kappa, delta] = ergodic_mixing(model.alpha, horizon);
      const auto k = static_cast<double>(kappa);
      return 2.0 * (T - k) * delta + 2.0 * k * phi_bar + log_mn;
    }
  }
  return log_mn;
}

namespace detail {

inline void rethrow_with_trial(const error& e, long trial) {
  if (const auto* ce = dynamic_cast<const convergence_error*>(&e)) {
    throw convergence_error(std::string(e.what()) + " (trial " + std::to_string(trial) + ")",
                            ce->last_kl(), ce->iterations());
  }
  throw error(e.code(), std::string(e.what()) + " (trial " + std::to_string(trial) + ")");
}

}  // namespace detail

/// Runs one trial; appends its result rows to `csv` when non-null.
inline TrialResult run_trial(const ExperimentConfig& c, long trial, StepRule rule,
                             std::string* csv, std::string_view row_prefix = {}) {
  try {
    const MarketInstance mk = build_market(c, trial);
    const EquilibriumSolution eq = solve_equilibrium(mk, c.noise);
    ValueStream stream = make_stream(c.noise, mk, noise_seed(c, trial));
    RunOptions opts;
    opts.thin = c.thin;
    const Trajectory tr = run_online(mk, stream, c.horizon, rule, opts);

    const RegretSeries fairness = fairness_regret(tr, eq);
    const IndividualRegret ind = individual_regret(tr, eq, c.tracked_buyer, tr.mean_values);
    const IndividualRegret realized = realized_individual_regret(tr, eq, c.tracked_buyer);

    TrialResult r;
    r.trial = trial;
    r.fairness_final = fairness.final;
    r.fairness_cumulative = fairness.cumulative;
    r.individual_final = ind.series.final;
    r.individual_relative_final = ind.relative_final();
    for (long cp : slope_checkpoints(c.horizon)) r.relative_at_checkpoints.push_back(ind.relative(cp));
    r.phi_bar = tr.phi_deviation_sup.maxCoeff();
    const PriceDiagnostics pd = price_diagnostics(tr, eq);
    r.price_avg_dist = pd.avg_dist;
    r.price_last_dist = pd.last_dist;
    r.max_budget_violation = tr.max_budget_violation;
    r.max_clearance_violation = tr.max_clearance_violation;
    r.min_gap = (tr.expected_phi - eq.phi_star).minCoeff();
    r.individual_bound_violation = individual_bound_violation(tr, eq);
    r.eg_gap_violation = eg_gap_violation(tr, eq, mk);
    for (Index t = 1; t < tr.expected_phi.size(); ++t) {
      r.phi_nonincreasing = r.phi_nonincreasing && tr.expected_phi(t) <= tr.expected_phi(t - 1) + 1e-12;
    }
    r.equilibrium_iterations = eq.iterations;

    if (csv != nullptr) {
      Vector price_sum = Vector::Zero(mk.n_items());
      for (long t = 1; t <= c.horizon; ++t) {
        const Index k = t - 1;
        const Vector p = tr.prices_history.row(k).transpose();
        price_sum += p;
        if (t % c.record_every != 0 && t != c.horizon) continue;
        ResultRow row;
        row.trial = trial;
        row.t = t;
        row.expected_phi = tr.expected_phi(k);
        row.sample_phi = tr.sample_phi(k);
        row.fairness_regret_cum = fairness.cumulative(k);
        row.individual_regret_cum = ind.series.cumulative(k);
        row.individual_regret_realized_cum = realized.series.cumulative(k);
        row.price_l1sq_avg = l1_distance_sq(price_sum / static_cast<double>(t), eq.prices_star.prices);
        row.price_l1sq_last = l1_distance_sq(p, eq.prices_star.prices);
        csv->append(row_prefix);
        append_row(*csv, row);
      }
    }
    return r;
  } catch (const error& e) {
    detail::rethrow_with_trial(e, trial);
  }
  return {};
}

struct ExperimentSummary {
  ExperimentConfig config;
  std::vector<TrialResult> trials;
  double log_mn = 0.0;
  double two_log_mn_over_t = 0.0;
  double fairness_mean = 0.0;
  double fairness_max = 0.0;
  double individual_mean_final = 0.0;
  double individual_relative_mean_final = 0.0;
  std::vector<long> checkpoints;
  std::vector<double> relative_mean_at_checkpoints;
  double slope = std::numeric_limits<double>::quiet_NaN();  ///< NaN when not fittable
  double bound = 0.0;       ///< bound compared with the mean (ergodic: mean of per-trial bounds)
  double phi_bar_max = 0.0;
  long kappa = 0;
  double delta = 0.0;
  bool bound_mean_ok = false;
  bool bound_max_ok = false;  ///< every trial within its own bound
  bool invariants_ok = false;

  bool passed() const { return bound_mean_ok && bound_max_ok && invariants_ok; }
};

inline nlohmann::json summary_to_json(const ExperimentSummary& s) {
  using nlohmann::json;
  auto num = [](double x) { return std::isfinite(x) ? json(x) : json(nullptr); };
  const auto& c = s.config;
  json j;
  j["n_buyers"] = c.market.n_buyers;
  j["n_items"] = c.market.n_items;
  j["horizon"] = c.horizon;
  j["trials"] = c.trials;
  j["base_seed"] = c.base_seed;
  j["step_rule"] = std::string(to_string(c.step_rule));
  j["tracked_buyer"] = c.tracked_buyer;
  j["noise"] = noise_to_json(c.noise);
  j["fairness_regret_mean"] = s.fairness_mean;
  j["fairness_regret_max"] = s.fairness_max;
  j["individual_regret_mean_final"] = s.individual_mean_final;
  j["individual_relative_regret_mean_final"] = s.individual_relative_mean_final;
  j["slope_checkpoints"] = s.checkpoints;
  json rel = json::array();
  for (double x : s.relative_mean_at_checkpoints) rel.push_back(num(x));
  j["individual_relative_regret_at_checkpoints"] = rel;
  j["individual_loglog_slope"] = num(s.slope);
  j["log_mn"] = s.log_mn;
  j["two_log_mn_over_t"] = s.two_log_mn_over_t;
  j["fairness_bound"] = s.bound;
  if (c.noise.kind == NoiseKind::ergodic) {
    j["ergodic"] = {{"kappa", s.kappa}, {"delta", s.delta}, {"phi_bar_max", s.phi_bar_max}};
  }
  double avg = 0, last = 0;
  for (const auto& t : s.trials) {
    avg += t.price_avg_dist;
    last += t.price_last_dist;
  }
  j["price_l1sq_avg_mean"] = avg / static_cast<double>(s.trials.size());
  j["price_l1sq_last_mean"] = last / static_cast<double>(s.trials.size());
  j["pass"] = {{"bound_mean", s.bound_mean_ok},
               {"bound_every_trial", s.bound_max_ok},
               {"invariants", s.invariants_ok},
               {"all", s.passed()}};
  j["assumptions"] = json::array(
      {"horizon defaults to 5000 for stationary runs, matching the non-stationary experiments",
       "individual regret uses expected utilities sum_j E[v_ij] x_ij,t of the tracked buyer"});
  return j;
}

namespace detail {

inline ExperimentSummary summarize(const ExperimentConfig& c, std::vector<TrialResult> trials) {
  ExperimentSummary s;
  s.config = c;
  s.trials = std::move(trials);
  const double n = static_cast<double>(s.trials.size());
  s.log_mn = std::log(static_cast<double>(c.market.n_buyers) * static_cast<double>(c.market.n_items));
  s.two_log_mn_over_t = 2.0 * s.log_mn / static_cast<double>(c.horizon);
  s.checkpoints = slope_checkpoints(c.horizon);
  s.relative_mean_at_checkpoints.assign(s.checkpoints.size(), 0.0);
  s.fairness_max = -std::numeric_limits<double>::infinity();
  s.invariants_ok = true;
  s.bound_max_ok = true;
  double bound_sum = 0.0;
  const auto [kappa, delta] = ergodic_mixing(c.noise.alpha, c.horizon);
  s.kappa = c.noise.kind == NoiseKind::ergodic ? kappa : 0;
  s.delta = c.noise.kind == NoiseKind::ergodic ? delta : 0.0;
  for (const auto& t : s.trials) {
    s.fairness_mean += t.fairness_final / n;
    s.fairness_max = std::max(s.fairness_max, t.fairness_final);
    s.individual_mean_final += t.individual_final / n;
    s.individual_relative_mean_final += t.individual_relative_final / n;
    for (std::size_t k = 0; k < s.checkpoints.size(); ++k)
      s.relative_mean_at_checkpoints[k] += t.relative_at_checkpoints[k] / n;
    s.phi_bar_max = std::max(s.phi_bar_max, t.phi_bar);
    const double b = fairness_bound(c.noise, c.horizon, s.log_mn, t.phi_bar);
    bound_sum += b;
    s.bound_max_ok = s.bound_max_ok && t.fairness_final <= b;
    s.invariants_ok = s.invariants_ok && t.invariants_ok();
  }
  s.bound = bound_sum / n;
  s.bound_mean_ok = s.fairness_mean <= s.bound;
  const bool fittable =
      s.checkpoints.size() >= 2 &&
      std::all_of(s.relative_mean_at_checkpoints.begin(), s.relative_mean_at_checkpoints.end(),
                  [](double x) { return x > 0.0; });
  if (fittable) {
    std::vector<double> xs(s.checkpoints.begin(), s.checkpoints.end());
    s.slope = loglog_slope(xs, s.relative_mean_at_checkpoints);
  }
  return s;
}

inline std::string csv_header(bool with_rule) {
  return (with_rule ? std::string("step_rule,") : std::string()) + std::string(kResultColumns) + "\n";
}

}  // namespace detail

/// Runs all trials of `c`; writes results.csv and summary.json under
/// c.output_dir when it is non-empty.
inline ExperimentSummary run_experiment(const ExperimentConfig& c) {
  c.validate();
  const bool write = !c.output_dir.empty();
  std::string csv = detail::csv_header(false);
  std::vector<TrialResult> trials;
  trials.reserve(static_cast<std::size_t>(c.trials));
  for (long k = 0; k < c.trials; ++k) {
    trials.push_back(run_trial(c, k, c.step_rule, write ? &csv : nullptr));
  }
  ExperimentSummary s = detail::summarize(c, std::move(trials));
  if (write) {
    const std::filesystem::path dir(c.output_dir);
    write_text(dir / "results.csv", csv);
    write_text(dir / "summary.json", summary_to_json(s).dump(2) + "\n");
  }
  return s;
}

struct SweepSummary {
  std::vector<InstanceSpec> instances;
  std::vector<ExperimentSummary> results;
  bool passed() const {
    return std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed(); });
  }
};

/// Config for instance k of a sweep: dimensions and sigma overridden, output in
/// <output_dir>/instance_<k>.
inline ExperimentConfig sweep_instance_config(const ExperimentConfig& c, const InstanceSpec& inst,
                                              std::size_t k) {
  ExperimentConfig ic = c;
  ic.instances.reset();
  ic.market.n_buyers = inst.n_buyers;
  ic.market.n_items = inst.n_items;
  ic.market.values.clear();
  ic.market.budgets.clear();
  ic.noise.sigma = inst.sigma;
  ic.tracked_buyer = std::min<long>(c.tracked_buyer, inst.n_buyers - 1);
  if (!c.output_dir.empty()) {
    ic.output_dir = (std::filesystem::path(c.output_dir) / ("instance_" + std::to_string(k))).string();
  }
  return ic;
}

inline SweepSummary run_instance_sweep(const ExperimentConfig& c) {
  SweepSummary sweep;
  sweep.instances = c.instances ? *c.instances : default_sweep_instances();
  require(!sweep.instances.empty(), errc::config_error, "instance list is empty");
  for (std::size_t k = 0; k < sweep.instances.size(); ++k) {
    sweep.results.push_back(run_experiment(sweep_instance_config(c, sweep.instances[k], k)));
  }
  if (!c.output_dir.empty()) {
    nlohmann::json j;
    j["instances"] = nlohmann::json::array();
    for (std::size_t k = 0; k < sweep.instances.size(); ++k) {
      const auto& r = sweep.results[k];
      j["instances"].push_back({{"index", k},
                                {"n_buyers", sweep.instances[k].n_buyers},
                                {"n_items", sweep.instances[k].n_items},
                                {"sigma", sweep.instances[k].sigma},
                                {"log_mn", r.log_mn},
                                {"fairness_regret_mean", r.fairness_mean},
                                {"fairness_regret_max", r.fairness_max},
                                {"fairness_bound", r.bound},
                                {"bound_mean_ok", r.bound_mean_ok},
                                {"bound_every_trial_ok", r.bound_max_ok},
                                {"invariants_ok", r.invariants_ok},
                                {"results_csv", "instance_" + std::to_string(k) + "/results.csv"}});
    }
    j["all_pass"] = sweep.passed();
    write_text(std::filesystem::path(c.output_dir) / "sweep_summary.json", j.dump(2) + "\n");
  }
  return sweep;
}

/// OLS slope of y against t over the last `window` entries (t is 1-based).
inline double trailing_slope(const Vector& y, long window) {
  const long n = static_cast<long>(y.size());
  window = std::clamp<long>(window, 2, n);
  const long start = n - window;
  double mt = 0, my = 0;
  for (long k = start; k < n; ++k) {
    mt += static_cast<double>(k + 1);
    my += y(k);
  }
  mt /= static_cast<double>(window);
  my /= static_cast<double>(window);
  double sxx = 0, sxy = 0;
  for (long k = start; k < n; ++k) {
    const double dt = static_cast<double>(k + 1) - mt;
    sxx += dt * dt;
    sxy += dt * (y(k) - my);
  }
  return sxx > 0 ? sxy / sxx : 0.0;
}

struct StepsizeSummary {
  std::array<StepRule, 3> rules{StepRule::constant_one, StepRule::inverse_t, StepRule::inverse_sqrt_t};
  std::array<ExperimentSummary, 3> results;
  std::array<double, 3> trailing_slope{};  ///< of the trial-mean cumulative regret
  long window = 0;

  const ExperimentSummary& of(StepRule r) const { return results[static_cast<std::size_t>(r)]; }
  double slope_of(StepRule r) const { return trailing_slope[static_cast<std::size_t>(r)]; }
};

/// Runs the same seeds under all three step rules. Long-format CSV with a
/// leading step_rule column.
inline StepsizeSummary run_stepsize_comparison(const ExperimentConfig& c) {
  c.validate();
  StepsizeSummary out;
  out.window = std::max<long>(2, c.horizon / 10);
  const bool write = !c.output_dir.empty();
  std::string csv = detail::csv_header(true);
  for (std::size_t r = 0; r < out.rules.size(); ++r) {
    ExperimentConfig rc = c;
    rc.step_rule = out.rules[r];
    rc.output_dir.clear();
    const std::string prefix = std::string(to_string(rc.step_rule)) + ",";
    std::vector<TrialResult> trials;
    Vector mean_curve = Vector::Zero(c.horizon);
    for (long k = 0; k < c.trials; ++k) {
      trials.push_back(run_trial(rc, k, rc.step_rule, write ? &csv : nullptr, prefix));
      mean_curve += trials.back().fairness_cumulative / static_cast<double>(c.trials);
    }
    out.results[r] = detail::summarize(rc, std::move(trials));
    out.trailing_slope[r] = trailing_slope(mean_curve, out.window);
  }
  if (write) {
    const std::filesystem::path dir(c.output_dir);
    write_text(dir / "results.csv", csv);
    nlohmann::json j;
    const double base = out.results[0].fairness_mean;
    j["window"] = out.window;
    j["rules"] = nlohmann::json::array();
    for (std::size_t r = 0; r < out.rules.size(); ++r) {
      const auto& s = out.results[r];
      j["rules"].push_back({{"step_rule", std::string(to_string(out.rules[r]))},
                            {"fairness_regret_mean", s.fairness_mean},
                            {"fairness_regret_max", s.fairness_max},
                            {"ratio_to_constant_one", base != 0.0 ? s.fairness_mean / base : 0.0},
                            {"trailing_window_slope", out.trailing_slope[r]},
                            {"invariants_ok", s.invariants_ok}});
    }
    j["log_mn"] = out.results[0].log_mn;
    write_text(dir / "summary.json", j.dump(2) + "\n");
  }
  return out;
}

}  // namespace ofm::harness
