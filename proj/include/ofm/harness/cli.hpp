#pragma once

// Command-line front end. Exit codes: 0 success, 1 config/IO error,
// 2 invariant or bound-check failure, 3 convergence failure.

#include <cstdio>
#include <exception>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ofm/harness/config.hpp"
#include "ofm/harness/experiment.hpp"
#include "ofm/harness/invariants.hpp"

namespace ofm::harness {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitCheckFailed = 2, kExitConvergence = 3 };

namespace detail {

inline std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

inline void print_matrix(std::ostream& out, const Matrix& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    out << "  ";
    for (Index j = 0; j < m.cols(); ++j) out << (j ? " " : "") << fmt(m(i, j));
    out << '\n';
  }
}

inline void print_summary(std::ostream& out, const ExperimentSummary& s) {
  out << s.config.market.n_buyers << "x" << s.config.market.n_items << " "
      << to_string(s.config.noise.kind) << ": fairness regret mean " << fmt(s.fairness_mean)
      << ", max " << fmt(s.fairness_max) << ", bound " << fmt(s.bound) << ", invariants "
      << (s.invariants_ok ? "ok" : "FAILED") << " -> " << (s.passed() ? "PASS" : "FAIL") << '\n';
}

inline int equilibrium_command(const ExperimentConfig& c, std::ostream& out) {
  const MarketInstance mk = build_market(c, 0);
  const EquilibriumSolution eq = solve_equilibrium(mk, c.noise);
  const Matrix v = mean_values(c.noise, mk);
  out << "bids b*:\n";
  print_matrix(out, eq.bids_star.bids);
  out << "prices p*:\n";
  print_matrix(out, eq.prices_star.prices.transpose());
  out << "Phi* " << fmt(eq.phi_star) << "\n";
  out << "duality gap " << fmt(eq.duality_gap) << "\n";
  out << "iterations " << eq.iterations << "\n";
  const double envy = envy_check(eq.alloc_star, v, mk.budgets());
  out << "envy max violation " << fmt(envy) << "\n";
  // proportionality is stated for equal budgets
  const bool equal = (mk.budgets() == mk.budgets()(0)).all();
  double prop = 0.0;
  if (equal) {
    prop = proportionality_check(eq.alloc_star, v, mk.n_buyers());
    out << "proportionality min margin " << fmt(prop) << "\n";
  } else {
    out << "proportionality not applicable (unequal budgets)\n";
  }
  return envy <= 1e-8 && prop >= -1e-8 ? kExitOk : kExitCheckFailed;
}

}  // namespace detail

/// Parses argv and runs one subcommand; returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Online Fisher market simulations: proportional response under noisy valuations"};
  app.require_subcommand(1);
  std::string config_path, out_dir;
  long seeds = 1;
  bool self_test = false;

  auto add_io = [&](CLI::App* sub, bool with_out) {
    sub->add_option("--config", config_path, "JSON experiment config")->required();
    if (with_out) sub->add_option("--out", out_dir, "output directory")->required();
  };
  CLI::App* simulate = app.add_subcommand("simulate", "multi-trial fairness-regret experiment");
  CLI::App* sweep = app.add_subcommand("sweep", "stationary instance sweep");
  CLI::App* stepsize = app.add_subcommand("stepsize", "compare the three step-size rules");
  CLI::App* equilibrium = app.add_subcommand("equilibrium", "solve and print the equilibrium");
  CLI::App* check = app.add_subcommand("check", "run the randomized invariant suites");
  add_io(simulate, true);
  add_io(sweep, true);
  add_io(stepsize, true);
  add_io(equilibrium, false);
  check->add_option("--seeds", seeds, "number of seeds")->check(CLI::PositiveNumber);
  check->add_flag("--self-test", self_test, "corrupt one bid row; the budget suite must fail");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostream& stream = e.get_exit_code() == 0 ? out : err;
    return app.exit(e, stream, stream) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (check->parsed()) {
      const InvariantReport r = check_invariants(seeds, self_test);
      out << r.table();
      return r.passed() ? kExitOk : kExitCheckFailed;
    }
    ExperimentConfig c = load_config(config_path);
    if (!out_dir.empty()) c.output_dir = out_dir;
    if (equilibrium->parsed()) return detail::equilibrium_command(c, out);
    if (simulate->parsed()) {
      const ExperimentSummary s = run_experiment(c);
      detail::print_summary(out, s);
      return s.passed() ? kExitOk : kExitCheckFailed;
    }
    if (sweep->parsed()) {
      const SweepSummary s = run_instance_sweep(c);
      for (const auto& r : s.results) detail::print_summary(out, r);
      return s.passed() ? kExitOk : kExitCheckFailed;
    }
    if (stepsize->parsed()) {
      const StepsizeSummary s = run_stepsize_comparison(c);
      bool ok = true;
      for (std::size_t r = 0; r < s.rules.size(); ++r) {
        out << to_string(s.rules[r]) << ": fairness regret mean " << detail::fmt(s.results[r].fairness_mean)
            << ", trailing slope " << detail::fmt(s.trailing_slope[r]) << ", invariants "
            << (s.results[r].invariants_ok ? "ok" : "FAILED") << '\n';
        ok = ok && s.results[r].invariants_ok;
      }
      return ok ? kExitOk : kExitCheckFailed;
    }
  } catch (const convergence_error& e) {
    err << "error: " << e.what() << " (last KL " << e.last_kl() << " after " << e.iterations()
        << " iterations)\n";
    return kExitConvergence;
  } catch (const error& e) {
    err << "error: " << e.what() << '\n';
    return e.code() == errc::config_error || e.code() == errc::io_error ? kExitConfig
                                                                        : kExitCheckFailed;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitOk;
}

}  // namespace ofm::harness
