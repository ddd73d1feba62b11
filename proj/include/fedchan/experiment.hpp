// SPDX-License-Identifier: Apache-2.0
//
// End-to-end runs: dataset generation for all users, CL/FL training, NMSE
// evaluation against fresh test channels, and sweeps written as CSV.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "fedchan/config.hpp"
#include "fedchan/csv.hpp"
#include "fedchan/fl_runtime.hpp"
#include "fedchan/neural_net.hpp"

namespace fedchan {

/// Copy of `base` with one sweep value applied. Sweeping K keeps K*G fixed.
ExperimentConfig apply_sweep_value(const ExperimentConfig& base, double value);

PilotConfig make_pilots(const ExperimentConfig& cfg);
NetworkSpec make_network_spec(const ExperimentConfig& cfg);
CollectOptions make_collect_options(const ExperimentConfig& cfg);

/// Total |D| over all users, by formula.
std::size_t total_dataset_size(const ExperimentConfig& cfg);

std::vector<LocalDataset> generate_datasets(const ExperimentConfig& cfg, std::uint64_t seed);

/// Trained network handed to the evaluator.
struct TrainedModel {
  const ChannelNet* net = nullptr;
  const ParamVector* params = nullptr;
  const NormState* norm = nullptr;
};

/// Covariance per user, for the LMMSE baseline.
std::vector<CMatrix> user_covariances(const ExperimentConfig& cfg, std::uint64_t seed);

struct NmseResult {
  double network = 0.0;
  double ls = 0.0;
  double lmmse = 0.0;
  std::vector<double> network_per_user;
};

/// NMSE over cfg.trials fresh realizations for every user at the given
/// pilot SNR. Every estimator sees the same channels and observations.
/// Estimators that are not supplied report NaN.
NmseResult evaluate_nmse(const ExperimentConfig& cfg, double snr_db, std::uint64_t seed,
                         std::optional<TrainedModel> model, bool with_ls,
                         const std::vector<CMatrix>* lmmse_cov);

/// Worker count: FEDCHAN_THREADS if set, else the hardware concurrency.
unsigned worker_count();

/// Runs every sweep value x seed x mode and writes results.csv plus per-point
/// round logs into cfg.out_dir. Returns the result rows in file order.
std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg, std::ostream& log);

}  // namespace fedchan
