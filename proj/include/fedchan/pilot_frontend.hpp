// SPDX-License-Identifier: Apache-2.0
//
// Pilot reception for both scenarios, conversion of received pilots into
// three-plane network inputs with vectorized channel labels, and per-user
// local dataset collection with SNR augmentation.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedchan/channel_model.hpp"
#include "fedchan/linalg.hpp"

namespace fedchan {

enum class Scenario { kMimo = 0, kIrs = 1 };

const char* scenario_name(Scenario s);
Scenario parse_scenario(const std::string& text);

struct PilotConfig {
  int m_bs = 0;
  int m_ms = 0;
  CMatrix f_bar;  // N_BS x M_BS
  CMatrix w_bar;  // N_MS x M_MS
  CMatrix s_bar;  // M_BS x M_BS (mMIMO) or N_BS x M_BS (IRS)
  std::vector<double> snr_levels_db{20.0, 25.0, 30.0};
  double rho = 1.0;
  double eps_on = 0.0;   // IRS insertion loss when an element is on
  double eps_off = 0.0;  // IRS leakage when an element is off

  /// First M_BS / M_MS columns of unitary DFT matrices, identity pilots.
  static PilotConfig dft(int n_bs, int n_ms, int m_bs, int m_ms);
  /// Pilots for the IRS sweep: S_IRS = I (M_BS = N_BS).
  static PilotConfig irs_identity(int n_bs);
};

struct TrainingSample {
  Scenario scenario = Scenario::kMimo;
  int user = 0;
  int subcarrier = -1;  // mMIMO only
  int rows = 0;
  int cols = 0;
  /// Plane-major: [Re | Im | angle], each rows x cols row-major.
  std::vector<double> input;
  std::vector<double> label;

  std::size_t input_size() const { return input.size(); }
};

struct LocalDataset {
  int user = 0;
  Scenario scenario = Scenario::kMimo;
  std::uint64_t seed = 0;
  std::vector<TrainingSample> samples;
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> val_idx;
};

/// Per-entry noise variance giving the requested pilot SNR for a channel with
/// the given mean per-entry power.
double noise_variance_for_snr(double mean_entry_power, double snr_db, double rho = 1.0);
double mean_entry_power(const MimoChannel& h);
double mean_entry_power(const IrsChannelSet& chs);

/// Ybar[m] = sqrt(rho) W^H H[m] F S + W^H N[m], N i.i.d. CN(0, noise_var).
std::vector<CMatrix> receive_pilots_mimo(const MimoChannel& h, const PilotConfig& cfg,
                                         double noise_var, std::uint64_t seed);

/// G = T_MS * Ybar * T_BS.
CMatrix preprocess_mimo(const CMatrix& y_bar, const PilotConfig& cfg);

/// Three-plane tensor of a complex matrix (Re, Im, angle in (-pi, pi]).
std::vector<double> three_plane_tensor(const CMatrix& m);

/// [vec(Re M); vec(Im M)] and its inverse.
std::vector<double> vectorize_label(const CMatrix& m);
CMatrix unvectorize_label(const std::vector<double>& label, int rows, int cols);

/// Adds CN noise at label_snr_db relative to the mean entry power of m.
CMatrix add_label_noise(const CMatrix& m, double label_snr_db, std::uint64_t seed);

TrainingSample make_sample_mimo(const CMatrix& g, const CMatrix& h_true,
                                std::optional<double> label_noise_db = std::nullopt,
                                std::uint64_t seed = 0);

/// Direct-link frame, all IRS elements off: 1 x M_BS.
CRowVector receive_direct_irs(const IrsChannelSet& chs, const PilotConfig& cfg,
                              double noise_var, std::uint64_t seed);

/// One frame per IRS element with only that element on: N_IRS x M_BS.
CMatrix receive_cascaded_sweep(const IrsChannelSet& chs, const PilotConfig& cfg,
                               double noise_var, std::uint64_t seed);

/// Sigma = [h_B, V], N_BS x (N_IRS + 1).
CMatrix irs_label_matrix(const IrsChannelSet& chs);

TrainingSample make_sample_irs(const CRowVector& y_direct, const CMatrix& y_sweep,
                               const IrsChannelSet& chs,
                               std::optional<double> label_noise_db = std::nullopt,
                               std::uint64_t seed = 0);

struct CollectOptions {
  int realizations = 100;  // N
  int augment = 20;        // G per SNR level
  std::optional<double> label_noise_db;
};

/// Expected dataset size: 3*M*N*G for mMIMO, 3*N*G for IRS (with 3 SNR levels).
std::size_t local_dataset_size(Scenario scenario, int m_sub, int realizations,
                               int augment, std::size_t snr_levels);

/// Deterministic 80/20 split; validation holds floor(0.2 * n) indices.
void split_train_validation(LocalDataset& ds, std::uint64_t seed);

LocalDataset collect_local_dataset(Scenario scenario, const SystemConfig& sys,
                                   const PilotConfig& pilots, int user_index,
                                   const CollectOptions& opts, std::uint64_t seed);

}  // namespace fedchan
