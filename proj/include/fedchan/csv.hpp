// SPDX-License-Identifier: Apache-2.0
//
// CSV artifacts. Column sets are fixed; numbers use the shortest
// round-trip representation, with "inf", "-inf" and "nan" for non-finite
// values and an empty field for an absent quantization setting.

#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>

#include "fedchan/fl_runtime.hpp"

namespace fedchan {

std::string format_double(double v);

inline constexpr const char* kResultsHeader =
    "scenario,mode,sweep_axis,sweep_value,seed,round,loss,val_rmse,nmse,snr_theta_db,bits,zeta,"
    "k_users";
inline constexpr const char* kRoundsHeader =
    "round,mode,loss,val_rmse,grad_norm,snr_theta_db,bits,zeta,seed";

/// One row of results.csv. `mode` is CL, FL, LS or LMMSE.
struct ResultRow {
  std::string scenario;
  std::string mode;
  std::string sweep_axis;
  double sweep_value = 0.0;
  std::uint64_t seed = 0;
  int round = 0;
  double loss = 0.0;
  double val_rmse = 0.0;
  double nmse = 0.0;
  double snr_theta_db = 0.0;
  std::optional<int> bits;
  double zeta = 0.0;
  int k_users = 0;
};

void write_result_row(std::ostream& os, const ResultRow& r);

void write_round_rows(std::ostream& os, std::span<const RoundLog> logs, TrainMode mode,
                      const CorruptionConfig& corruption, std::uint64_t seed);

}  // namespace fedchan
