// SPDX-License-Identifier: Apache-2.0
//
// Geometric mm-Wave channels: the conventional BS-user MIMO-OFDM link and the
// three links of the IRS-assisted setup (BS-user, BS-IRS, IRS-user) together
// with the cascaded BS-IRS-user channel. Everything is a pure function of the
// configuration and a seed.

#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "fedchan/linalg.hpp"

namespace fedchan {

struct SystemConfig {
  int n_bs = 128;
  int n_ms = 32;
  int n_irs = 64;
  int m_sub = 16;  // OFDM subcarriers M
  int cp_len = 4;  // CP length D in taps
  int n_paths = 5;
  int n_paths_b = 5;    // BS-user paths (IRS setup)
  int n_paths_s = 5;    // IRS-user paths
  int n_paths_irs = 5;  // BS-IRS paths
  double sym_period = 1e-9;
  int k_users = 8;
  double antenna_spacing = 0.5;  // in wavelengths

  /// Throws std::invalid_argument on a violated invariant.
  void validate() const;
};

/// ULA response, element i = exp(j*2*pi*spacing*i*sin(phi)).
CVector steering_vector(double phi, int n, double spacing = 0.5);

/// Angular sector [lo, hi) of user k out of K equal partitions of [-pi/2, pi/2].
std::pair<double, double> user_sector(int user_index, int k_users);

/// Normalized sinc, the pulse shape p(t) evaluated at t / T_s.
double sinc_pulse(double t_over_ts);

struct Path {
  Complex gain;
  double delay = 0.0;  // seconds
  double aoa = 0.0;    // radians, user side
  double aod = 0.0;    // radians, BS side
};

struct PathSet {
  std::vector<Path> paths;
};

/// Draws L paths for one user: angles uniform in the user's sector, gains
/// CN(0,1), delays uniform on [0, (D-1)*T_s].
PathSet gen_user_paths(const SystemConfig& cfg, int user_index, std::uint64_t seed);

/// Time-domain tap d (N_MS x N_BS).
CMatrix delay_tap(const PathSet& paths, int d, const SystemConfig& cfg);

struct MimoChannel {
  std::vector<CMatrix> subcarriers;  // H[m], m = 0..M-1, each N_MS x N_BS
};

/// H[m] = sum_d Hbar[d] exp(-j*2*pi*m*d/M).
MimoChannel ofdm_channel(const PathSet& paths, const SystemConfig& cfg);

struct IrsChannelSet {
  CVector h_direct;    // h_B,k   (N_BS)
  CVector h_irs_user;  // h_S,k   (N_IRS)
  CMatrix h_bs_irs;    // H_B     (N_BS x N_IRS)
  CMatrix cascaded;    // V_k = H_B diag(h_S,k)
};

/// Assembles a channel set and computes the cascaded channel.
IrsChannelSet make_irs_channel_set(CVector h_direct, CVector h_irs_user,
                                   CMatrix h_bs_irs);

/// Draws one IRS realization for a user. The BS-IRS matrix depends only on the
/// seed, so every user of the same realization seed shares it.
IrsChannelSet gen_irs_channels(const SystemConfig& cfg, int user_index,
                               std::uint64_t seed);

/// IRS reflection vector psi_n = a_n * exp(j*phi_n) with a_n in {eps_off, 1 - eps_on}.
struct IrsPhaseVector {
  std::vector<bool> on;
  std::vector<double> phase;
  double eps_on = 0.0;
  double eps_off = 0.0;

  static IrsPhaseVector all_off(int n, double eps_on = 0.0, double eps_off = 0.0);
  static IrsPhaseVector single_on(int n, int index, double eps_on = 0.0,
                                  double eps_off = 0.0);

  int size() const { return static_cast<int>(on.size()); }
  CVector entries() const;
};

/// Effective cascaded response v * psi.
CVector irs_reflect_gain(const IrsPhaseVector& psi, const CMatrix& v);

}  // namespace fedchan
