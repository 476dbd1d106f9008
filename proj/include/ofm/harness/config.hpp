#pragma once

// Experiment configuration and its strict JSON mapping. Unknown keys are
// rejected at every level so that typos fail fast.

#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ofm/dynamics.hpp"
#include "ofm/error.hpp"
#include "ofm/input_models.hpp"
#include "ofm/market.hpp"

namespace ofm::harness {

using json = nlohmann::json;

struct MarketSpec {
  long n_buyers = 20;
  long n_items = 30;
  /// Empty means equal budgets.
  std::vector<double> budgets;
  /// Fixed valuation matrix; when empty valuations are drawn per trial.
  std::vector<std::vector<double>> values;
  /// When set, every trial draws valuations from this seed instead of base_seed + k.
  std::optional<std::uint64_t> valuation_seed;
};

struct InstanceSpec {
  long n_buyers = 0;
  long n_items = 0;
  double sigma = 0.0;
};

struct ExperimentConfig {
  MarketSpec market;
  NoiseModel noise = NoiseModel::stationary(0.01);
  long horizon = 5000;
  long trials = 50;
  std::uint64_t base_seed = 0;
  StepRule step_rule = StepRule::constant_one;
  std::string output_dir;
  long tracked_buyer = 0;
  bool thin = true;
  /// Write every k-th period to results.csv (the last period is always written).
  long record_every = 1;
  /// Sweep instances; absent means the default five.
  std::optional<std::vector<InstanceSpec>> instances;

  void validate() const {
    auto check = [](bool ok, const std::string& what) { require(ok, errc::config_error, what); };
    check(horizon >= 1, "horizon must be >= 1");
    check(trials >= 1, "trials must be >= 1");
    check(record_every >= 1, "record_every must be >= 1");
    if (market.values.empty()) {
      check(market.n_buyers >= 1 && market.n_items >= 1, "market dimensions must be >= 1");
    } else {
      check(static_cast<long>(market.values.size()) == market.n_buyers,
            "values must have n_buyers rows");
      for (const auto& row : market.values) {
        check(static_cast<long>(row.size()) == market.n_items, "values rows must have n_items entries");
      }
    }
    check(market.budgets.empty() || static_cast<long>(market.budgets.size()) == market.n_buyers,
          "budgets must be empty (equal) or have n_buyers entries");
    check(tracked_buyer >= 0 && tracked_buyer < market.n_buyers, "tracked_buyer out of range");
    try {
      noise.validate();
      noise.validate_horizon(horizon);
    } catch (const error& e) {
      fail(errc::config_error, e.what());
    }
    if (instances) {
      for (const auto& inst : *instances) {
        check(inst.n_buyers >= 1 && inst.n_items >= 1 && inst.sigma >= 0.0,
              "instances need positive dimensions and sigma >= 0");
      }
    }
  }
};

/// The five stationary sweep instances (N, M, sigma); sigma shrinks as the market grows.
inline std::vector<InstanceSpec> default_sweep_instances() {
  return {{5, 10, 0.05}, {10, 20, 0.04}, {20, 30, 0.03}, {40, 60, 0.02}, {80, 120, 0.01}};
}

namespace detail {

inline void reject_unknown(const json& obj, const std::set<std::string>& allowed,
                           const std::string& where) {
  require(obj.is_object(), errc::config_error, where + " must be a JSON object");
  for (const auto& [key, _] : obj.items()) {
    require(allowed.count(key) > 0, errc::config_error, "unknown field '" + key + "' in " + where);
  }
}

template <class T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(errc::config_error, where + "." + key + ": " + e.what());
  }
}

inline std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace detail

inline NoiseKind parse_noise_kind(const std::string& s) {
  const std::string k = detail::lower(s);
  if (k == "stationary") return NoiseKind::stationary;
  if (k == "corrupted") return NoiseKind::corrupted;
  if (k == "ergodic") return NoiseKind::ergodic;
  if (k == "periodic") return NoiseKind::periodic;
  fail(errc::config_error, "unknown noise kind '" + s + "'");
}

inline Injection parse_injection(const std::string& s) {
  const std::string k = detail::lower(s);
  if (k == "multiplicative_log") return Injection::multiplicative_log;
  if (k == "additive_clipped") return Injection::additive_clipped;
  fail(errc::config_error, "unknown injection '" + s + "'");
}

inline StepRule parse_step_rule(const std::string& s) {
  const std::string k = detail::lower(s);
  if (k == "constant_one") return StepRule::constant_one;
  if (k == "inverse_t") return StepRule::inverse_t;
  if (k == "inverse_sqrt_t") return StepRule::inverse_sqrt_t;
  fail(errc::config_error, "unknown step rule '" + s + "'");
}

inline NoiseModel noise_from_json(const json& j) {
  detail::reject_unknown(
      j, {"kind", "sigma", "alpha", "mu_range", "partitions", "partition_len", "injection"}, "noise");
  NoiseModel m;
  std::string kind = "stationary", injection = "multiplicative_log";
  detail::read(j, "kind", kind, "noise");
  detail::read(j, "injection", injection, "noise");
  m.kind = parse_noise_kind(kind);
  m.injection = parse_injection(injection);
  detail::read(j, "sigma", m.sigma, "noise");
  detail::read(j, "alpha", m.alpha, "noise");
  detail::read(j, "mu_range", m.mu_range, "noise");
  detail::read(j, "partitions", m.partitions, "noise");
  detail::read(j, "partition_len", m.partition_len, "noise");
  return m;
}

inline json noise_to_json(const NoiseModel& m) {
  return {{"kind", std::string(to_string(m.kind))},
          {"sigma", m.sigma},
          {"alpha", m.alpha},
          {"mu_range", m.mu_range},
          {"partitions", m.partitions},
          {"partition_len", m.partition_len},
          {"injection", std::string(to_string(m.injection))}};
}

inline ExperimentConfig config_from_json(const json& j) {
  detail::reject_unknown(j,
                         {"market", "noise", "horizon", "trials", "base_seed", "step_rule",
                          "output_dir", "tracked_buyer", "thin", "record_every", "instances"},
                         "config");
  ExperimentConfig c;
  if (j.contains("market")) {
    const json& mj = j.at("market");
    detail::reject_unknown(mj, {"n_buyers", "n_items", "budgets", "values", "valuation_seed"},
                           "market");
    detail::read(mj, "n_buyers", c.market.n_buyers, "market");
    detail::read(mj, "n_items", c.market.n_items, "market");
    if (mj.contains("budgets")) {
      const json& bj = mj.at("budgets");
      if (bj.is_string()) {
        require(bj.get<std::string>() == "equal", errc::config_error,
                "market.budgets must be \"equal\" or a list");
      } else {
        detail::read(mj, "budgets", c.market.budgets, "market");
      }
    }
    detail::read(mj, "values", c.market.values, "market");
    if (mj.contains("valuation_seed")) {
      std::uint64_t s = 0;
      detail::read(mj, "valuation_seed", s, "market");
      c.market.valuation_seed = s;
    }
    if (!c.market.values.empty()) {
      c.market.n_buyers = static_cast<long>(c.market.values.size());
      c.market.n_items = static_cast<long>(c.market.values.front().size());
    }
  }
  if (j.contains("noise")) c.noise = noise_from_json(j.at("noise"));
  detail::read(j, "horizon", c.horizon, "config");
  detail::read(j, "trials", c.trials, "config");
  detail::read(j, "base_seed", c.base_seed, "config");
  if (j.contains("step_rule")) {
    std::string r;
    detail::read(j, "step_rule", r, "config");
    c.step_rule = parse_step_rule(r);
  }
  detail::read(j, "output_dir", c.output_dir, "config");
  detail::read(j, "tracked_buyer", c.tracked_buyer, "config");
  detail::read(j, "thin", c.thin, "config");
  detail::read(j, "record_every", c.record_every, "config");
  if (j.contains("instances")) {
    const json& ij = j.at("instances");
    require(ij.is_array(), errc::config_error, "instances must be a list");
    std::vector<InstanceSpec> list;
    for (const json& e : ij) {
      detail::reject_unknown(e, {"n_buyers", "n_items", "sigma"}, "instances[]");
      InstanceSpec s;
      detail::read(e, "n_buyers", s.n_buyers, "instances[]");
      detail::read(e, "n_items", s.n_items, "instances[]");
      detail::read(e, "sigma", s.sigma, "instances[]");
      list.push_back(s);
    }
    c.instances = std::move(list);
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), errc::io_error, "cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(errc::config_error, "malformed JSON in '" + path + "': " + e.what());
  }
  return config_from_json(j);
}

/// Valuation seed and noise seed of trial k.
inline std::uint64_t valuation_seed(const ExperimentConfig& c, long trial) {
  return c.market.valuation_seed ? *c.market.valuation_seed : c.base_seed + trial;
}
inline std::uint64_t noise_seed(const ExperimentConfig& c, long trial) {
  return c.base_seed + 1'000'000 + trial;
}

/// Market of trial k: explicit valuations, or i.i.d. uniform (0, 1) draws; rows normalized.
inline MarketInstance build_market(const ExperimentConfig& c, long trial) {
  const Index n = c.market.n_buyers, m = c.market.n_items;
  Vector budgets = Vector::Ones(n);
  for (Index i = 0; i < static_cast<Index>(c.market.budgets.size()); ++i) budgets(i) = c.market.budgets[i];
  Matrix v(n, m);
  if (!c.market.values.empty()) {
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < m; ++j) v(i, j) = c.market.values[i][j];
  } else {
    std::mt19937_64 rng(valuation_seed(c, trial));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (Index k = 0; k < v.size(); ++k) {
      double x = 0.0;
      while (x <= 0.0) x = u(rng);
      v.data()[k] = x;
    }
  }
  try {
    return normalize_market(budgets, v);
  } catch (const error& e) {
    fail(errc::config_error, std::string("market: ") + e.what());
  }
}

}  // namespace ofm::harness
