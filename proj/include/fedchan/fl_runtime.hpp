// SPDX-License-Identifier: Apache-2.0
//
// Centralized and federated training drivers plus the transport impairments
// applied to exchanged vectors (quantization, erasure, AWGN, in that order).

#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedchan/neural_net.hpp"
#include "fedchan/pilot_frontend.hpp"

namespace fedchan {

/// How snr_theta_db maps to a per-coordinate noise variance.
enum class SnrConvention {
  kVerbatim,       // 20*log10(||v||^2 / sigma^2) = snr
  kPerCoordinate,  // 10*log10((||v||^2 / P) / sigma^2) = snr
};

/// How the erasure fraction maps to a count of zeroed coordinates.
enum class ErasureMode {
  kFraction,      // floor(zeta * P)
  kLiteralCount,  // floor(100 * zeta)
};

struct CorruptionConfig {
  double snr_theta_db = std::numeric_limits<double>::infinity();
  std::optional<int> quant_bits;
  double erasure_frac = 0.0;
  bool uplink = true;
  bool downlink = true;
  SnrConvention snr_convention = SnrConvention::kVerbatim;
  ErasureMode erasure_mode = ErasureMode::kFraction;

  void validate() const;
  bool clean() const;
};

double awgn_variance(std::span<const double> v, double snr_db,
                     SnrConvention convention = SnrConvention::kVerbatim);
std::vector<double> corrupt_awgn(std::span<const double> v, double snr_db, std::uint64_t seed,
                                 SnrConvention convention = SnrConvention::kVerbatim);

/// Mid-rise uniform quantizer on [-a, a], a = max|v_i|, 2^bits cells.
std::vector<double> quantize(std::span<const double> v, int bits);
double quantizer_step(double amplitude, int bits);

std::size_t erasure_count(std::size_t length, double zeta, ErasureMode mode);
std::vector<double> erase(std::span<const double> v, double zeta, std::uint64_t seed,
                          ErasureMode mode = ErasureMode::kFraction);

/// All enabled impairments of `cfg`, ignoring the uplink/downlink flags.
std::vector<double> corrupt(std::span<const double> v, const CorruptionConfig& cfg,
                            std::uint64_t seed);

/// Batch indices for (user, step): consecutive windows over a chain of
/// seeded per-epoch permutations. batch_size 0 or >= n selects everything.
std::vector<std::size_t> select_batch(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                      std::uint64_t user, std::uint64_t step);

ChannelNet::GradResult local_gradient(const ChannelNet& net, const LocalDataset& user,
                                      const ParamVector& params, const NormState& norm,
                                      const DropoutMask* mask, std::size_t batch_size,
                                      std::uint64_t seed, std::uint64_t step);

/// Elementwise mean, summed in index order.
GradientVector mean_gradient(std::span<const GradientVector> grads);

/// mean_gradient(grads) followed by sgd_step.
void aggregate_and_update(ParamVector& params, std::span<const GradientVector> grads, double lr,
                          MomentumState& state, double mu,
                          std::span<const std::uint8_t> active = {});

/// Per-user received copies of `params`. Only coordinates flagged in
/// `active` are transmitted and corrupted; the rest are copied unchanged.
std::vector<ParamVector> broadcast(const ParamVector& params, const CorruptionConfig& cfg,
                                   std::span<const std::uint64_t> user_seeds,
                                   std::span<const std::uint8_t> active = {});

/// Corrupts the active coordinates of an uplink gradient.
GradientVector transmit_uplink(const GradientVector& grad, const CorruptionConfig& cfg,
                               std::uint64_t seed, std::span<const std::uint8_t> active = {});

enum class TrainMode { kCL, kFL };

const char* train_mode_name(TrainMode m);
TrainMode parse_train_mode(const std::string& text);

struct TrainConfig {
  TrainMode mode = TrainMode::kFL;
  int rounds = 100;
  double lr = 1e-3;
  double momentum = 0.9;
  int batch_size = 128;  // 0 selects the full local (or pooled) train split
  int local_batches = 1;
  std::uint64_t seed = 1;
  bool track_validation = true;
  double divergence_factor = 1e6;

  void validate() const;
};

struct RoundLog {
  int round = 0;
  double loss = 0.0;
  double val_rmse = std::numeric_limits<double>::quiet_NaN();
  double grad_norm = 0.0;
  std::vector<double> user_grad_norms;
  double wall_seconds = 0.0;
  bool diverged = false;
};

struct TrainResult {
  ParamVector params;
  NormState norm;
  std::vector<RoundLog> logs;
  bool diverged = false;
  std::string diagnostic;
};

/// Called after every applied update with (round, params).
using RoundHook = std::function<void(int, const ParamVector&)>;

TrainResult train(const ChannelNet& net, std::span<const LocalDataset> datasets,
                  const TrainConfig& cfg, const CorruptionConfig& corruption,
                  const RoundHook& on_round = {});

/// Pooled validation samples of all users.
std::vector<SampleRef> validation_refs(std::span<const LocalDataset> datasets);

}  // namespace fedchan
