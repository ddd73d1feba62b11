// SPDX-License-Identifier: Apache-2.0
//
// LS and genie-covariance LMMSE estimators, NMSE / validation RMSE, and the
// closed-form parameter, overhead and complexity counts used in reports.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedchan/channel_model.hpp"
#include "fedchan/linalg.hpp"
#include "fedchan/neural_net.hpp"
#include "fedchan/pilot_frontend.hpp"

namespace fedchan {

/// H = pinv(W^H) Ybar pinv(sqrt(rho) F S). Throws on rank-deficient pilots.
CMatrix ls_estimate_mimo(const CMatrix& y_bar, const PilotConfig& cfg);

/// Sigma = [h_d, V] from the direct frame and the single-element sweep.
CMatrix ls_estimate_irs(const CRowVector& y_direct, const CMatrix& y_sweep,
                        const PilotConfig& cfg);

/// Linear observation models y = A x + n with x the column-major vec of the
/// channel (mMIMO) or of Sigma (IRS).
CMatrix mimo_pilot_operator(const PilotConfig& cfg);
CMatrix mimo_noise_covariance(const PilotConfig& cfg, double noise_var);
CVector mimo_observation(const CMatrix& y_bar);
CMatrix irs_pilot_operator(const PilotConfig& cfg, int n_irs);
CVector irs_observation(const CRowVector& y_direct, const CMatrix& y_sweep);

/// x = R_h A^H (A R_h A^H + R_n)^{-1} y, with R_h diagonally loaded by
/// 1e-8 * trace(R_h) / N. Throws when the system is ill-conditioned
/// (condition estimate above 1e12).
CVector lmmse_estimate(const CVector& y, const CMatrix& a, const CMatrix& r_h,
                       const CMatrix& r_n);
CMatrix lmmse_estimate_mimo(const CMatrix& y_bar, const PilotConfig& cfg, const CMatrix& r_h,
                            double noise_var);
CMatrix lmmse_estimate_irs(const CRowVector& y_direct, const CMatrix& y_sweep,
                           const PilotConfig& cfg, const CMatrix& r_h, double noise_var);

/// Sample covariance of vec(H[m]) pooled over subcarriers and `draws`
/// independent realizations of the user's channel.
CMatrix channel_covariance_mimo(const SystemConfig& sys, int user, int draws, std::uint64_t seed);
/// Sample covariance of vec([h_d, V]).
CMatrix channel_covariance_irs(const SystemConfig& sys, int user, int draws, std::uint64_t seed);

/// Running mean of ||H - Hhat||_F^2 / ||H||_F^2; zero-norm truths are skipped.
class NmseAccumulator {
 public:
  void add(const CMatrix& truth, const CMatrix& estimate);
  double value() const;
  std::size_t terms() const { return terms_; }
  std::size_t skipped() const { return skipped_; }

 private:
  double sum_ = 0.0;
  std::size_t terms_ = 0;
  std::size_t skipped_ = 0;
};

double nmse(std::span<const CMatrix> truth, std::span<const CMatrix> estimates);

/// sqrt(mean_i ||f(X_i) - Y_i||^2) in eval mode.
double validation_rmse(const ChannelNet& net, const ParamVector& params, const NormState& norm,
                       std::span<const SampleRef> samples);

struct PaperParamConstants {
  int n_cl = 3;
  int c = 3;
  int n_sf = 128;
  int w_x = 3;
  int w_y = 3;
  double kappa = 0.5;
  int n_fcl = 1024;
};

/// N_CL*C*N_SF*Wx*Wy + kappa*N_SF*Wx*Wy*N_FCL.
std::uint64_t param_count_paper(const PaperParamConstants& k = {});

std::uint64_t overhead_cl_mimo(std::uint64_t n_ms, std::uint64_t n_bs, std::uint64_t dataset);
std::uint64_t overhead_cl_irs(std::uint64_t n_irs, std::uint64_t m_bs, std::uint64_t n_bs,
                              std::uint64_t dataset);
std::uint64_t overhead_fl(std::uint64_t p, std::uint64_t rounds, std::uint64_t users);

struct MetricReport {
  Scenario scenario = Scenario::kMimo;
  double snr_db = 0.0;
  int trials = 0;
  double nmse = 0.0;
  std::vector<double> per_user_nmse;
};

struct OverheadReport {
  Scenario scenario = Scenario::kMimo;
  std::uint64_t p_paper = 0;
  std::uint64_t t_cl = 0;
  std::uint64_t t_fl = 0;
  double ratio = 0.0;
};

OverheadReport overhead_report(Scenario scenario, const SystemConfig& sys, int m_bs,
                               std::uint64_t dataset, int rounds);

struct ComplexityReport {
  double c_cl = 0.0;
  double c_fcl = 0.0;
  double c_total = 0.0;
  double c_ls = 0.0;
  double c_mmse = 0.0;
};

ComplexityReport complexity_report(int n_ms, int n_bs);

}  // namespace fedchan
