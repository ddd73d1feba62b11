// SPDX-License-Identifier: Apache-2.0
#include "fedchan/csv.hpp"

#include <charconv>
#include <cmath>

namespace fedchan {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::string bits_field(const std::optional<int>& bits) {
  return bits ? std::to_string(*bits) : std::string();
}

}  // namespace

void write_result_row(std::ostream& os, const ResultRow& r) {
  os << r.scenario << ',' << r.mode << ',' << r.sweep_axis << ',' << format_double(r.sweep_value)
     << ',' << r.seed << ',' << r.round << ',' << format_double(r.loss) << ','
     << format_double(r.val_rmse) << ',' << format_double(r.nmse) << ','
     << format_double(r.snr_theta_db) << ',' << bits_field(r.bits) << ','
     << format_double(r.zeta) << ',' << r.k_users << '\n';
}

void write_round_rows(std::ostream& os, std::span<const RoundLog> logs, TrainMode mode,
                      const CorruptionConfig& corruption, std::uint64_t seed) {
  for (const RoundLog& l : logs) {
    os << l.round << ',' << train_mode_name(mode) << ',' << format_double(l.loss) << ','
       << format_double(l.val_rmse) << ',' << format_double(l.grad_norm) << ','
       << format_double(corruption.snr_theta_db) << ',' << bits_field(corruption.quant_bits) << ','
       << format_double(corruption.erasure_frac) << ',' << seed << '\n';
  }
}

}  // namespace fedchan
