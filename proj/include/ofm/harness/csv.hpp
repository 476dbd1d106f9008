#pragma once

// Long-format result rows. Floats are written with 17 significant digits so
// reruns are byte-identical and values round-trip exactly.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>

#include "ofm/error.hpp"

namespace ofm::harness {

inline constexpr std::string_view kResultColumns =
    "trial,t,expected_phi,sample_phi,fairness_regret_cum,individual_regret_cum,"
    "individual_regret_realized_cum,price_l1sq_avg,price_l1sq_last";

struct ResultRow {
  long trial = 0;
  long t = 0;
  double expected_phi = 0.0;
  double sample_phi = 0.0;
  double fairness_regret_cum = 0.0;
  double individual_regret_cum = 0.0;
  double individual_regret_realized_cum = 0.0;
  double price_l1sq_avg = 0.0;
  double price_l1sq_last = 0.0;
};

inline void append_number(std::string& out, double x) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", x);
  out.append(buf, static_cast<std::size_t>(n));
}

inline void append_row(std::string& out, const ResultRow& r) {
  out += std::to_string(r.trial);
  out += ',';
  out += std::to_string(r.t);
  for (double x : {r.expected_phi, r.sample_phi, r.fairness_regret_cum, r.individual_regret_cum,
                   r.individual_regret_realized_cum, r.price_l1sq_avg, r.price_l1sq_last}) {
    out += ',';
    append_number(out, x);
  }
  out += '\n';
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  require(!ec, errc::io_error, "cannot create directory for '" + path.string() + "'");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), errc::io_error, "cannot open '" + path.string() + "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  require(static_cast<bool>(out), errc::io_error, "write to '" + path.string() + "' failed");
}

}  // namespace ofm::harness
