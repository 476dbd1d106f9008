#pragma once

// Seeded valuation streams for the stationary, corrupted, ergodic and periodic
// input regimes, plus the analytic moments the metrics need.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "ofm/error.hpp"
#include "ofm/linalg.hpp"
#include "ofm/market.hpp"
#include "ofm/objectives.hpp"

namespace ofm {

inline constexpr double kMinValue = 1e-9;

enum class NoiseKind { stationary, corrupted, ergodic, periodic };
enum class Injection { multiplicative_log, additive_clipped };

constexpr std::string_view to_string(NoiseKind k) noexcept {
  switch (k) {
    case NoiseKind::stationary: return "stationary";
    case NoiseKind::corrupted: return "corrupted";
    case NoiseKind::ergodic: return "ergodic";
    case NoiseKind::periodic: return "periodic";
  }
  return "?";
}

constexpr std::string_view to_string(Injection k) noexcept {
  return k == Injection::multiplicative_log ? "multiplicative_log" : "additive_clipped";
}

/// Noise process eps_t and how it enters the valuations.
///
/// stationary: eps ~ N(0, sigma^2) i.i.d. per entry and period.
/// corrupted:  eps ~ N(mu_t, sigma^2), mu_t ~ U[-mu_range, mu_range] fresh each
///             period and shared by every (i, j).
/// ergodic:    eps_t = alpha eps_{t-1} + beta_t, beta ~ N(0, sigma^2), eps_0 = 0.
/// periodic:   partition_len mean shifts ~ U[-mu_range, mu_range] drawn once; each
///             partition walks a fresh permutation of them, eps_t ~ N(shift, sigma^2).
struct NoiseModel {
  NoiseKind kind = NoiseKind::stationary;
  double sigma = 0.0;
  double alpha = 0.0;
  double mu_range = 0.0;
  int partitions = 0;
  int partition_len = 0;
  Injection injection = Injection::multiplicative_log;

  static NoiseModel stationary(double sigma) { return {NoiseKind::stationary, sigma}; }
  static NoiseModel corrupted(double sigma, double mu_range) {
    return {NoiseKind::corrupted, sigma, 0.0, mu_range};
  }
  static NoiseModel ergodic(double alpha, double sigma) {
    return {NoiseKind::ergodic, sigma, alpha};
  }
  static NoiseModel periodic(int partitions, int partition_len, double sigma, double mu_range) {
    return {NoiseKind::periodic, sigma, 0.0, mu_range, partitions, partition_len};
  }

  void validate() const {
    auto check = [](bool ok, const char* what) { require(ok, errc::invalid_model_params, what); };
    check(std::isfinite(sigma) && sigma >= 0.0, "sigma must be >= 0");
    check(std::isfinite(mu_range) && mu_range >= 0.0, "mu_range must be >= 0");
    check(alpha >= 0.0 && alpha < 1.0, "alpha must lie in [0, 1)");
    if (kind == NoiseKind::periodic) {
      check(partitions >= 1 && partition_len >= 1, "periodic model needs positive partitions");
    }
  }

  /// Horizon check that only the periodic model constrains.
  void validate_horizon(long horizon) const {
    if (kind == NoiseKind::periodic) {
      require(static_cast<long>(partitions) * partition_len == horizon,
              errc::invalid_model_params, "partitions * partition_len must equal the horizon");
    }
  }

  /// Stationary (time-averaged) variance of eps around its mean shift.
  double stationary_variance() const {
    return kind == NoiseKind::ergodic ? sigma * sigma / (1.0 - alpha * alpha) : sigma * sigma;
  }

  /// Upper bound on E[eps^2] under the model's time-averaged law.
  double second_moment_bound() const {
    const bool shifted = kind == NoiseKind::corrupted || kind == NoiseKind::periodic;
    return stationary_variance() + (shifted ? mu_range * mu_range / 3.0 : 0.0);
  }

  friend bool operator==(const NoiseModel&, const NoiseModel&) = default;
};

/// Deterministic producer of per-period valuation matrices. Single owner.
class ValueStream {
 public:
  ValueStream(NoiseModel model, MarketInstance market, std::uint64_t seed)
      : model_(model), market_(std::move(market)), rng_(seed) {
    model_.validate();
    const Index n = market_.n_buyers(), m = market_.n_items();
    eps_ = Matrix::Zero(n, m);
    if (model_.kind == NoiseKind::periodic) {
      std::uniform_real_distribution<double> shift(-model_.mu_range, model_.mu_range);
      shifts_.resize(static_cast<std::size_t>(model_.partition_len));
      for (double& s : shifts_) s = model_.mu_range > 0.0 ? shift(rng_) : 0.0;
      order_.resize(shifts_.size());
    }
  }

  const NoiseModel& model() const noexcept { return model_; }
  const MarketInstance& market() const noexcept { return market_; }
  long period() const noexcept { return t_; }

  /// Noise matrix used for the most recent period.
  const Matrix& last_noise() const noexcept { return eps_; }

  /// The fixed set of periodic mean shifts (empty for other kinds).
  const std::vector<double>& periodic_shifts() const noexcept { return shifts_; }

  /// Mean shift applied in the most recent period (0 for uncentred kinds).
  double last_shift() const noexcept { return last_shift_; }

  Matrix next_values() {
    ++t_;
    draw_noise();
    const Matrix& v0 = market_.base_values();
    if (model_.injection == Injection::multiplicative_log) {
      if (log_v0_.size() == 0) log_v0_ = v0.log();
      log_values_ = (log_v0_ + eps_).max(std::log(kMinValue));
      return (v0 * eps_.exp()).max(kMinValue);
    }
    Matrix v = (v0 + eps_).max(kMinValue);
    log_values_ = v.log();
    return v;
  }

  /// log of the values returned by the most recent next_values().
  const Matrix& last_log_values() const noexcept { return log_values_; }

 private:
  void fill_gaussian(double mean) {
    for (Index k = 0; k < eps_.size(); ++k) eps_.data()[k] = mean + model_.sigma * normal_(rng_);
  }

  void draw_noise() {
    switch (model_.kind) {
      case NoiseKind::stationary:
        last_shift_ = 0.0;
        fill_gaussian(0.0);
        break;
      case NoiseKind::corrupted: {
        std::uniform_real_distribution<double> mu(-model_.mu_range, model_.mu_range);
        last_shift_ = model_.mu_range > 0.0 ? mu(rng_) : 0.0;
        fill_gaussian(last_shift_);
        break;
      }
      case NoiseKind::ergodic:
        last_shift_ = 0.0;
        for (Index k = 0; k < eps_.size(); ++k) {
          eps_.data()[k] = model_.alpha * eps_.data()[k] + model_.sigma * normal_(rng_);
        }
        break;
      case NoiseKind::periodic: {
        const auto len = static_cast<long>(shifts_.size());
        const long pos = (t_ - 1) % len;
        if (pos == 0) {
          std::iota(order_.begin(), order_.end(), std::size_t{0});
          std::shuffle(order_.begin(), order_.end(), rng_);
        }
        last_shift_ = shifts_[order_[static_cast<std::size_t>(pos)]];
        fill_gaussian(last_shift_);
        break;
      }
    }
  }

  NoiseModel model_;
  MarketInstance market_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  Matrix eps_;
  Matrix log_v0_;
  Matrix log_values_;
  std::vector<double> shifts_;
  std::vector<std::size_t> order_;
  double last_shift_ = 0.0;
  long t_ = 0;
};

inline ValueStream make_stream(const NoiseModel& model, const MarketInstance& market,
                               std::uint64_t seed) {
  return ValueStream(model, market, seed);
}

inline Matrix next_values(ValueStream& stream) { return stream.next_values(); }

namespace detail {

/// E[exp(mu)] for mu ~ U[-a, a].
inline double uniform_exp_mean(double a) { return a > 0.0 ? std::sinh(a) / a : 1.0; }

inline constexpr std::uint64_t kBaselineSeed = 0x0f15e4u;
inline constexpr int kBaselineSamples = 1'000'000;

/// Draws from the model's time-averaged marginal law of a single eps entry.
inline std::vector<double> marginal_noise_samples(const NoiseModel& model, int count,
                                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> shift(-model.mu_range, model.mu_range);
  const double sd = std::sqrt(model.stationary_variance());
  const bool shifted = (model.kind == NoiseKind::corrupted || model.kind == NoiseKind::periodic) &&
                       model.mu_range > 0.0;
  std::vector<double> out(static_cast<std::size_t>(count));
  for (double& e : out) {
    const double mu = shifted ? shift(rng) : 0.0;
    e = mu + sd * normal(rng);
  }
  return out;
}

}  // namespace detail

/// E[log v_ij,t] under the model's time-averaged law. Exact (log v0) for
/// multiplicative injection; a fixed-seed Monte-Carlo estimate otherwise.
inline LogValueMatrix baseline_log_values(const NoiseModel& model, const MarketInstance& market) {
  model.validate();
  const Matrix& v0 = market.base_values();
  if (model.injection == Injection::multiplicative_log || model.second_moment_bound() == 0.0) {
    return LogValueMatrix{v0.log()};
  }
  const auto samples =
      detail::marginal_noise_samples(model, detail::kBaselineSamples, detail::kBaselineSeed);
  Matrix out(v0.rows(), v0.cols());
  for (Index k = 0; k < v0.size(); ++k) {
    const double base = v0.data()[k];
    double acc = 0.0;
    for (double e : samples) acc += std::log(std::max(base + e, kMinValue));
    out.data()[k] = acc / static_cast<double>(samples.size());
  }
  return LogValueMatrix{std::move(out)};
}

/// E[v_ij,t] under the model's time-averaged law.
inline Matrix mean_values(const NoiseModel& model, const MarketInstance& market) {
  model.validate();
  const Matrix& v0 = market.base_values();
  if (model.injection == Injection::additive_clipped) return v0;
  double factor = std::exp(model.stationary_variance() / 2.0);
  if (model.kind == NoiseKind::corrupted || model.kind == NoiseKind::periodic) {
    factor *= detail::uniform_exp_mean(model.mu_range);
  }
  return v0 * factor;
}

}  // namespace ofm
