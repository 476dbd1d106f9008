// Acceptance checks: one PASS/FAIL line per criterion. Run with a criterion
// name, or with no argument (or "all") to run every criterion in order.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ofm/harness/experiment.hpp"
#include "support.hpp"

using namespace ofm;
using namespace ofm::harness;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::span<const double> flat(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

ExperimentConfig base_config(long n, long m, NoiseModel noise, long horizon, long trials) {
  ExperimentConfig c;
  c.market.n_buyers = n;
  c.market.n_items = m;
  c.noise = noise;
  c.horizon = horizon;
  c.trials = trials;
  return c;
}

Verdict identities() {
  std::mt19937_64 rng(101);
  constexpr int kInstances = 200;
  double bregman = 0, three_point = 0, smooth = std::numeric_limits<double>::infinity(), fd = 0;
  for (int k = 0; k < kInstances; ++k) {
    const auto mk = testing::random_market(rng, testing::random_dim(rng, 1, 8),
                                           testing::random_dim(rng, 1, 8), true);
    const LogValueMatrix logv{testing::uniform_matrix(rng, mk.n_buyers(), mk.n_items(), -4.0, 0.0)};
    const auto a = testing::random_bids(rng, mk), b = testing::random_bids(rng, mk);
    bregman = std::max(bregman, bregman_identity_residual(a, b, logv));
    smooth = std::min(smooth, relative_smoothness_gap(a, b));

    // three-point identity of the generalized KL on positive vectors
    const Index len = testing::random_dim(rng, 1, 15);
    const Vector x = testing::uniform_matrix(rng, len, 1, 0.01, 2.0).col(0);
    const Vector y = testing::uniform_matrix(rng, len, 1, 0.01, 2.0).col(0);
    const Vector z = testing::uniform_matrix(rng, len, 1, 0.01, 2.0).col(0);
    const double lhs = negentropy_bregman(flat(z), flat(x));
    const double rhs = negentropy_bregman(flat(z), flat(y)) + negentropy_bregman(flat(y), flat(x)) +
                       ((y.log() - x.log()) * (z - y)).sum();
    three_point = std::max(three_point, std::abs(lhs - rhs));

    // directional derivative along a feasible direction vs central differences
    Matrix d = testing::uniform_matrix(rng, mk.n_buyers(), mk.n_items(), -1.0, 1.0);
    d.colwise() -= d.rowwise().mean();
    const double h = 1e-6 * a.bids.minCoeff();
    const double numeric = (shmyrev_objective(BidMatrix{a.bids + h * d}, logv) -
                            shmyrev_objective(BidMatrix{a.bids - h * d}, logv)) / (2.0 * h);
    fd = std::max(fd, std::abs(numeric - (shmyrev_gradient(a, logv) * d).sum()));
  }
  return {bregman <= 1e-9 && three_point <= 1e-9 && smooth >= -1e-12 && fd <= 1e-5,
          fmt("%d instances; bregman %.2e, three-point %.2e, smoothness gap min %.2e, "
              "finite difference %.2e",
              kInstances, bregman, three_point, smooth, fd)};
}

Verdict closed_form() {
  std::mt19937_64 rng(102);
  double omd = 0, eta = 0;
  for (int k = 0; k < 50; ++k) {
    const auto mk = testing::random_market(rng, testing::random_dim(rng, 1, 8),
                                           testing::random_dim(rng, 1, 8), true);
    const auto b = testing::random_bids(rng, mk);
    const auto trade = trading_post(mk, b);
    const Matrix v = testing::uniform_matrix(rng, mk.n_buyers(), mk.n_items(), 1e-3, 1.0);
    const auto closed = pr_step(mk, trade.allocation, v);
    omd = std::max(omd, (closed.bids - omd_step_numeric(mk, b, trade.prices, v).bids).abs().maxCoeff());
    eta = std::max(eta, (closed.bids - pr_step_eta(mk, b, trade.prices, v, 1.0).bids).abs().maxCoeff());
  }
  return {omd <= 1e-6 && eta <= 1e-12,
          fmt("50 states; closed form vs numeric OMD %.2e, eta=1 vs proportional response %.2e", omd, eta)};
}

Verdict conservation() {
  // every input model and step rule used by the experiments, plus the sweep sizes
  std::vector<ExperimentConfig> configs;
  for (const auto& noise : {NoiseModel::stationary(0.01), NoiseModel::corrupted(0.01, 0.01),
                            NoiseModel::ergodic(0.6, 0.01), NoiseModel::periodic(50, 100, 0.01, 0.01)}) {
    configs.push_back(base_config(20, 30, noise, 5000, 5));
  }
  for (StepRule rule : {StepRule::inverse_t, StepRule::inverse_sqrt_t}) {
    auto c = base_config(20, 30, NoiseModel::stationary(0.01), 5000, 5);
    c.step_rule = rule;
    configs.push_back(c);
  }
  for (const auto& inst : default_sweep_instances()) {
    configs.push_back(base_config(inst.n_buyers, inst.n_items, NoiseModel::stationary(inst.sigma), 5000, 2));
  }
  double budget = 0, clearance = 0;
  long runs = 0;
  for (const auto& c : configs) {
    const auto s = run_experiment(c);
    for (const auto& t : s.trials) {
      budget = std::max(budget, t.max_budget_violation);
      clearance = std::max(clearance, t.max_clearance_violation);
      ++runs;
    }
  }
  return {budget <= 1e-10 && clearance <= 1e-10,
          fmt("%ld runs of 5000 periods; max budget violation %.2e, max clearance violation %.2e",
              runs, budget, clearance)};
}

Verdict pathwise_regret() {
  std::mt19937_64 rng(104);
  constexpr long T = 500;
  double worst = -std::numeric_limits<double>::infinity(), init = worst;
  int comparators = 0;
  for (int k = 0; k < 5; ++k) {
    const auto mk = testing::random_market(rng, testing::random_dim(rng, 2, 8),
                                           testing::random_dim(rng, 2, 8), true, 0.05);
    const auto model = NoiseModel::stationary(0.05);
    auto stream = make_stream(model, mk, 500 + k);
    RunOptions opts;
    opts.thin = false;
    const auto tr = run_online(mk, stream, T, StepRule::constant_one, opts);
    auto replay = make_stream(model, mk, 500 + k);
    std::vector<LogValueMatrix> logs;
    for (long t = 1; t <= T; ++t) {
      replay.next_values();
      logs.push_back(LogValueMatrix{replay.last_log_values()});
    }
    const auto eq = solve_equilibrium(mk, model);
    const double log_mn = std::log(static_cast<double>(mk.n_buyers() * mk.n_items()));
    init = std::max(init, kl_divergence(eq.bids_star, tr.bids_history.front()) - log_mn);

    std::vector<BidMatrix> cmp{eq.bids_star};
    for (int r = 0; r < 20; ++r) cmp.push_back(testing::random_bids(rng, mk));
    for (const auto& b_hat : cmp) {
      // the first update happens after period 1, so the sum starts at t = 2
      double regret = 0.0;
      for (long t = 2; t <= T; ++t) regret += tr.sample_phi(t - 1) - shmyrev_objective(b_hat, logs[t - 1]);
      worst = std::max(worst, regret - kl_divergence(b_hat, tr.bids_history.front()));
      ++comparators;
    }
  }
  return {worst <= 1e-9 && init <= 1e-12,
          fmt("%d comparators over 5 runs (T=%ld); max regret - KL(b, b1) = %.3e; "
              "max KL(b*, b1) - log MN = %.3e",
              comparators, T, worst, init)};
}

Verdict stationary_bound() {
  ExperimentConfig c = base_config(20, 30, NoiseModel::stationary(0.01), 5000, 50);
  const auto sweep = run_instance_sweep(c);
  bool pass = true;
  std::string detail;
  for (std::size_t k = 0; k < sweep.results.size(); ++k) {
    const auto& r = sweep.results[k];
    const auto& inst = sweep.instances[k];
    const bool ok = r.fairness_mean <= r.log_mn && r.fairness_max <= r.log_mn && r.invariants_ok;
    pass = pass && ok;
    detail += fmt("\n    (%ld,%ld,sigma=%.2f) mean %.4f max %.4f bound log MN %.4f %s", inst.n_buyers,
                  inst.n_items, inst.sigma, r.fairness_mean, r.fairness_max, r.log_mn, ok ? "ok" : "EXCEEDED");
  }
  return {pass, "5 instances, T=5000, 50 trials" + detail};
}

Verdict last_iterate() {
  const auto s = run_experiment(base_config(20, 30, NoiseModel::stationary(0.0), 2000, 10));
  double last = 0, avg = 0;
  bool monotone = true;
  for (const auto& t : s.trials) {
    last = std::max(last, t.price_last_dist);
    avg = std::max(avg, t.price_avg_dist);
    monotone = monotone && t.phi_nonincreasing;
  }
  const double bound = s.two_log_mn_over_t;
  return {last <= bound && avg <= bound && monotone && s.invariants_ok,
          fmt("10 instances, T=2000; max |p_T - p*|^2 %.3e, max |avg p - p*|^2 %.3e, bound 2 log MN / T "
              "%.3e; Phi nonincreasing %s",
              last, avg, bound, monotone ? "yes" : "no")};
}

Verdict individual_slope() {
  auto c = base_config(20, 30, NoiseModel::stationary(0.01), 5000, 50);
  c.tracked_buyer = 0;
  const auto s = run_experiment(c);
  std::string points;
  for (std::size_t k = 0; k < s.checkpoints.size(); ++k) {
    points += fmt(" T=%ld:%.3e", s.checkpoints[k], s.relative_mean_at_checkpoints[k]);
  }
  const bool pass = std::isfinite(s.slope) && s.slope >= -0.6 && s.slope <= -0.4;
  return {pass, fmt("buyer 1, 50 trials; mean relative regret", 0) + points +
                    fmt("; log-log slope %.3f (target [-0.6, -0.4])", s.slope)};
}

Verdict nonstationary_bounds() {
  const auto stationary = run_experiment(base_config(20, 30, NoiseModel::stationary(0.01), 5000, 50));
  const auto corrupted = run_experiment(base_config(20, 30, NoiseModel::corrupted(0.01, 0.01), 5000, 50));
  const auto ergodic = run_experiment(base_config(20, 30, NoiseModel::ergodic(0.6, 0.01), 5000, 50));
  const auto periodic =
      run_experiment(base_config(20, 30, NoiseModel::periodic(50, 100, 0.01, 0.01), 5000, 50));
  const bool c_ok = corrupted.fairness_mean <= corrupted.bound && corrupted.invariants_ok;
  const bool e_ok = std::isfinite(ergodic.fairness_mean) && ergodic.bound_mean_ok &&
                    ergodic.bound_max_ok && ergodic.invariants_ok;
  const bool p_ok = std::abs(periodic.fairness_mean) <= 2.0 * std::abs(stationary.fairness_mean) &&
                    periodic.invariants_ok;
  return {c_ok && e_ok && p_ok,
          fmt("\n    corrupted: mean %.4f <= %.4f %s"
              "\n    ergodic: mean %.4f max %.4f, bound %.4f (kappa %ld, delta %.3e, phi_bar %.4f) %s"
              "\n    periodic: mean %.4f vs stationary %.4f (limit 2x) %s",
              corrupted.fairness_mean, corrupted.bound, c_ok ? "ok" : "EXCEEDED", ergodic.fairness_mean,
              ergodic.fairness_max, ergodic.bound, ergodic.kappa, ergodic.delta, ergodic.phi_bar_max,
              e_ok ? "ok" : "EXCEEDED", periodic.fairness_mean, stationary.fairness_mean,
              p_ok ? "ok" : "EXCEEDED")};
}

Verdict stepsize() {
  const auto s = run_stepsize_comparison(base_config(20, 30, NoiseModel::stationary(0.01), 5000, 50));
  const double base = s.of(StepRule::constant_one).fairness_mean;
  const double inv_t = s.of(StepRule::inverse_t).fairness_mean;
  const double inv_sqrt = s.of(StepRule::inverse_sqrt_t).fairness_mean;
  const bool pass = inv_t >= 10.0 * base && inv_sqrt >= 10.0 * base &&
                    s.slope_of(StepRule::inverse_t) > 0.0 && s.slope_of(StepRule::inverse_sqrt_t) > 0.0;
  return {pass, fmt("final regret constant_one %.4f, inverse_t %.4f (%.1fx, slope %.3e), "
                    "inverse_sqrt_t %.4f (%.1fx, slope %.3e); need >= 10x and slope > 0",
                    base, inv_t, inv_t / base, s.slope_of(StepRule::inverse_t), inv_sqrt,
                    inv_sqrt / base, s.slope_of(StepRule::inverse_sqrt_t))};
}

Verdict equilibrium_oracle() {
  Vector budgets(2);
  budgets << 0.5, 0.5;
  Matrix v(2, 2);
  v << 0.75, 0.25, 0.25, 0.75;
  const auto mk = normalize_market(budgets, v);
  const auto eq = solve_equilibrium(mk, LogValueMatrix::of(mk.base_values()));

  // grid search over feasible bids at resolution 1e-3
  const LogValueMatrix logv = LogValueMatrix::of(mk.base_values());
  double best = std::numeric_limits<double>::infinity();
  Vector best_p(2);
  constexpr int kSteps = 500;
  for (int a = 0; a <= kSteps; ++a) {
    for (int b = 0; b <= kSteps; ++b) {
      Matrix bids(2, 2);
      const double b11 = 0.5 * a / kSteps, b21 = 0.5 * b / kSteps;
      bids << b11, 0.5 - b11, b21, 0.5 - b21;
      if ((bids.colwise().sum() <= 0.0).any()) continue;
      const double phi = shmyrev_objective(BidMatrix{bids}, logv);
      if (phi < best) {
        best = phi;
        best_p = bids.colwise().sum().transpose();
      }
    }
  }
  const double price_err = (eq.prices_star.prices - best_p).abs().maxCoeff();
  // bang-per-buck optimality: every bid sits on a maximizer of v_ij / p_j
  double kkt = 0.0;
  for (Index i = 0; i < 2; ++i) {
    const Vector bpb = (mk.base_values().row(i).transpose() / eq.prices_star.prices);
    for (Index j = 0; j < 2; ++j)
      if (eq.bids_star.bids(i, j) > 1e-12) kkt = std::max(kkt, bpb.maxCoeff() - bpb(j));
  }

  std::mt19937_64 rng(110);
  double envy = -std::numeric_limits<double>::infinity(), prop = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 20; ++k) {
    const Index n = testing::random_dim(rng, 2, 10), m = testing::random_dim(rng, 2, 15);
    const auto market = testing::random_market(rng, n, m, false);
    const auto sol = solve_equilibrium(market, LogValueMatrix::of(market.base_values()));
    envy = std::max(envy, envy_check(sol.alloc_star, market.base_values(), market.budgets()));
    prop = std::min(prop, proportionality_check(sol.alloc_star, market.base_values(), n));
  }
  return {price_err <= 1e-4 && kkt <= 1e-9 && envy <= 1e-8 && prop >= -1e-8,
          fmt("2x2 p* = (%.6f, %.6f), grid oracle (%.6f, %.6f), error %.2e, bang-per-buck gap %.2e; "
              "20 equilibria: max envy %.2e, min proportionality margin %.2e",
              eq.prices_star.prices(0), eq.prices_star.prices(1), best_p(0), best_p(1), price_err, kkt,
              envy, prop)};
}

struct Criterion {
  const char* name;
  const char* title;
  Verdict (*run)();
};

constexpr Criterion kCriteria[] = {
    {"identities", "objective identities", identities},
    {"closed_form", "closed-form update", closed_form},
    {"conservation", "budget and clearance conservation", conservation},
    {"pathwise_regret", "pathwise regret oracle", pathwise_regret},
    {"stationary_bound", "stationary fairness bound (sweep)", stationary_bound},
    {"last_iterate", "zero-noise price convergence", last_iterate},
    {"individual_slope", "individual regret slope", individual_slope},
    {"nonstationary_bounds", "non-stationary fairness bounds", nonstationary_bounds},
    {"stepsize", "time-varying step sizes", stepsize},
    {"equilibrium_oracle", "equilibrium oracle and fairness", equilibrium_oracle},
};

}  // namespace

int main(int argc, char** argv) {
  const std::string want = argc > 1 ? argv[1] : "all";
  int failures = 0, ran = 0;
  for (const auto& c : kCriteria) {
    if (want != "all" && want != c.name) continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %s (%s) [%.1fs]: %s\n", v.pass ? "PASS" : "FAIL", c.name, c.title, secs,
                v.detail.c_str());
    std::fflush(stdout);
    failures += v.pass ? 0 : 1;
  }
  if (ran == 0) {
    std::fprintf(stderr, "unknown criterion '%s'\n", want.c_str());
    return 2;
  }
  return failures == 0 ? 0 : 1;
}
