#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ofm {

enum class errc {
  non_positive_input,
  dimension_mismatch,
  zero_price,
  zero_utility,
  zero_utility_row,
  support_mismatch,
  non_positive_bid,
  non_positive_price,
  convergence_failure,
  invalid_model_params,
  index_out_of_range,
  non_positive_series,
  baseline_mismatch,
  config_error,
  io_error,
};

constexpr std::string_view to_string(errc code) noexcept {
  switch (code) {
    case errc::non_positive_input: return "NonPositiveInput";
    case errc::dimension_mismatch: return "DimensionMismatch";
    case errc::zero_price: return "ZeroPrice";
    case errc::zero_utility: return "ZeroUtility";
    case errc::zero_utility_row: return "ZeroUtilityRow";
    case errc::support_mismatch: return "SupportMismatch";
    case errc::non_positive_bid: return "NonPositiveBid";
    case errc::non_positive_price: return "NonPositivePrice";
    case errc::convergence_failure: return "ConvergenceFailure";
    case errc::invalid_model_params: return "InvalidModelParams";
    case errc::index_out_of_range: return "IndexOutOfRange";
    case errc::non_positive_series: return "NonPositiveSeries";
    case errc::baseline_mismatch: return "BaselineMismatch";
    case errc::config_error: return "ConfigError";
    case errc::io_error: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so that
/// callers (tests, the CLI exit-code mapping) can branch without string matching.
class error : public std::runtime_error {
 public:
  error(errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

class convergence_error : public error {
 public:
  convergence_error(const std::string& what, double last_kl, long iterations)
      : error(errc::convergence_failure, what), last_kl_(last_kl), iterations_(iterations) {}

  double last_kl() const noexcept { return last_kl_; }
  long iterations() const noexcept { return iterations_; }

 private:
  double last_kl_;
  long iterations_;
};

[[noreturn]] inline void fail(errc code, const std::string& what) { throw error(code, what); }

inline void require(bool cond, errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace ofm
