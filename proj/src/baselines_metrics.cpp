// SPDX-License-Identifier: Apache-2.0
#include "fedchan/baselines_metrics.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>
#include <string>

#include "fedchan/rng.hpp"

namespace fedchan {

namespace {

constexpr double kMaxCondition = 1e12;
constexpr double kLoading = 1e-8;

CMatrix kron(const CMatrix& a, const CMatrix& b) {
  CMatrix k(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      k.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return k;
}

CMatrix checked_pinv(const CMatrix& m, const char* what) {
  Eigen::CompleteOrthogonalDecomposition<CMatrix> cod(m);
  cod.setThreshold(1e-10);
  if (cod.rank() < std::min(m.rows(), m.cols())) {
    throw std::runtime_error(std::string(what) + " is rank deficient (rank " +
                             std::to_string(cod.rank()) + ")");
  }
  return cod.pseudoInverse();
}

// Columns are the IRS states of the direct frame and each sweep frame,
// prefixed by a 1 for the direct path: E = Sigma * B.
CMatrix irs_state_matrix(const PilotConfig& cfg, int n_irs) {
  CMatrix b(n_irs + 1, n_irs + 1);
  b.col(0) << Complex(1.0), IrsPhaseVector::all_off(n_irs, cfg.eps_on, cfg.eps_off).entries();
  for (int n = 0; n < n_irs; ++n) {
    b.col(n + 1) << Complex(1.0),
        IrsPhaseVector::single_on(n_irs, n, cfg.eps_on, cfg.eps_off).entries();
  }
  return b;
}

CMatrix stack_irs(const CRowVector& y_direct, const CMatrix& y_sweep) {
  if (y_sweep.cols() != y_direct.size()) {
    throw std::invalid_argument("IRS estimate: direct and sweep frames differ in length");
  }
  CMatrix upsilon(y_sweep.rows() + 1, y_sweep.cols());
  upsilon.row(0) = y_direct;
  upsilon.bottomRows(y_sweep.rows()) = y_sweep;
  return upsilon;
}

}  // namespace

CMatrix ls_estimate_mimo(const CMatrix& y_bar, const PilotConfig& cfg) {
  if (y_bar.rows() != cfg.w_bar.cols() || y_bar.cols() != cfg.f_bar.cols()) {
    throw std::invalid_argument("ls_estimate_mimo: Ybar shape does not match the pilots");
  }
  const CMatrix fs = std::sqrt(cfg.rho) * (cfg.f_bar * cfg.s_bar);
  return checked_pinv(cfg.w_bar.adjoint(), "ls_estimate_mimo: W^H") * y_bar *
         checked_pinv(fs, "ls_estimate_mimo: F S");
}

CMatrix ls_estimate_irs(const CRowVector& y_direct, const CMatrix& y_sweep,
                        const PilotConfig& cfg) {
  const CMatrix upsilon = stack_irs(y_direct, y_sweep);
  if (cfg.s_bar.cols() != upsilon.cols()) {
    throw std::invalid_argument("ls_estimate_irs: frame length does not match S_IRS");
  }
  const int n_irs = static_cast<int>(y_sweep.rows());
  const CMatrix e = checked_pinv(std::sqrt(cfg.rho) * cfg.s_bar.adjoint(), "ls_estimate_irs: S^H") *
                    upsilon.adjoint();
  return e * checked_pinv(irs_state_matrix(cfg, n_irs), "ls_estimate_irs: IRS state matrix");
}

CMatrix mimo_pilot_operator(const PilotConfig& cfg) {
  const CMatrix fs = cfg.f_bar * cfg.s_bar;
  return std::sqrt(cfg.rho) * kron(fs.transpose(), cfg.w_bar.adjoint());
}

CMatrix mimo_noise_covariance(const PilotConfig& cfg, double noise_var) {
  const auto m = cfg.f_bar.cols();
  return noise_var * kron(CMatrix::Identity(m, m), cfg.w_bar.adjoint() * cfg.w_bar);
}

CVector mimo_observation(const CMatrix& y_bar) { return vec(y_bar); }

CMatrix irs_pilot_operator(const PilotConfig& cfg, int n_irs) {
  return std::sqrt(cfg.rho) * kron(irs_state_matrix(cfg, n_irs).transpose(), cfg.s_bar.adjoint());
}

CVector irs_observation(const CRowVector& y_direct, const CMatrix& y_sweep) {
  return vec(stack_irs(y_direct, y_sweep).adjoint());
}

CVector lmmse_estimate(const CVector& y, const CMatrix& a, const CMatrix& r_h,
                       const CMatrix& r_n) {
  const auto n = a.cols();
  if (r_h.rows() != n || r_h.cols() != n || y.size() != a.rows() || r_n.rows() != a.rows() ||
      r_n.cols() != a.rows()) {
    throw std::invalid_argument("lmmse_estimate: dimension mismatch");
  }
  CMatrix prior = r_h;
  prior.diagonal().array() += kLoading * r_h.trace().real() / static_cast<double>(n);
  const CMatrix c = a * prior * a.adjoint() + r_n;
  Eigen::LLT<CMatrix> llt(c);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("lmmse_estimate: observation covariance is not positive definite");
  }
  const double rcond = llt.rcond();
  if (!(rcond > 0.0) || 1.0 / rcond > kMaxCondition) {
    throw std::runtime_error("lmmse_estimate: ill-conditioned filter (condition estimate " +
                             std::to_string(rcond > 0.0 ? 1.0 / rcond : INFINITY) + ")");
  }
  return prior * (a.adjoint() * llt.solve(y));
}

CMatrix lmmse_estimate_mimo(const CMatrix& y_bar, const PilotConfig& cfg, const CMatrix& r_h,
                            double noise_var) {
  const auto n_ms = cfg.w_bar.rows();
  const auto n_bs = cfg.f_bar.rows();
  const CVector x = lmmse_estimate(mimo_observation(y_bar), mimo_pilot_operator(cfg), r_h,
                                   mimo_noise_covariance(cfg, noise_var));
  return unvec(x, n_ms, n_bs);
}

CMatrix lmmse_estimate_irs(const CRowVector& y_direct, const CMatrix& y_sweep,
                           const PilotConfig& cfg, const CMatrix& r_h, double noise_var) {
  const int n_irs = static_cast<int>(y_sweep.rows());
  const CMatrix a = irs_pilot_operator(cfg, n_irs);
  const CMatrix r_n = noise_var * CMatrix::Identity(a.rows(), a.rows());
  const CVector x = lmmse_estimate(irs_observation(y_direct, y_sweep), a, r_h, r_n);
  return unvec(x, cfg.s_bar.rows(), n_irs + 1);
}

CMatrix channel_covariance_mimo(const SystemConfig& sys, int user, int draws, std::uint64_t seed) {
  if (draws < 1) throw std::invalid_argument("channel_covariance_mimo: draws must be >= 1");
  const Eigen::Index n = static_cast<Eigen::Index>(sys.n_ms) * sys.n_bs;
  CMatrix r = CMatrix::Zero(n, n);
  CMatrix block(n, sys.m_sub);
  for (int d = 0; d < draws; ++d) {
    const auto rs = derive_seed(seed, Stream::kCovariance, {static_cast<std::uint64_t>(d)});
    const MimoChannel h = ofdm_channel(gen_user_paths(sys, user, rs), sys);
    for (int m = 0; m < sys.m_sub; ++m) block.col(m) = vec(h.subcarriers[m]);
    r.noalias() += block * block.adjoint();
  }
  return r / (static_cast<double>(draws) * sys.m_sub);
}

CMatrix channel_covariance_irs(const SystemConfig& sys, int user, int draws, std::uint64_t seed) {
  if (draws < 1) throw std::invalid_argument("channel_covariance_irs: draws must be >= 1");
  const Eigen::Index n = static_cast<Eigen::Index>(sys.n_bs) * (sys.n_irs + 1);
  CMatrix r = CMatrix::Zero(n, n);
  for (int d = 0; d < draws; ++d) {
    const auto rs = derive_seed(seed, Stream::kCovariance, {static_cast<std::uint64_t>(d)});
    const CVector x = vec(irs_label_matrix(gen_irs_channels(sys, user, rs)));
    r.noalias() += x * x.adjoint();
  }
  return r / static_cast<double>(draws);
}

void NmseAccumulator::add(const CMatrix& truth, const CMatrix& estimate) {
  if (truth.rows() != estimate.rows() || truth.cols() != estimate.cols()) {
    throw std::invalid_argument("nmse: truth and estimate shapes differ");
  }
  const double den = truth.squaredNorm();
  if (den == 0.0) {
    ++skipped_;
    std::cerr << "warning: nmse skips a zero-norm true channel\n";
    return;
  }
  sum_ += (truth - estimate).squaredNorm() / den;
  ++terms_;
}

double NmseAccumulator::value() const {
  if (terms_ == 0) throw std::invalid_argument("nmse: every true channel has zero norm");
  return sum_ / static_cast<double>(terms_);
}

double nmse(std::span<const CMatrix> truth, std::span<const CMatrix> estimates) {
  if (truth.size() != estimates.size()) throw std::invalid_argument("nmse: count mismatch");
  NmseAccumulator acc;
  for (std::size_t i = 0; i < truth.size(); ++i) acc.add(truth[i], estimates[i]);
  return acc.value();
}

double validation_rmse(const ChannelNet& net, const ParamVector& params, const NormState& norm,
                       std::span<const SampleRef> samples) {
  if (samples.empty()) throw std::invalid_argument("validation_rmse: empty validation set");
  std::vector<std::span<const double>> inputs;
  inputs.reserve(samples.size());
  for (const SampleRef& s : samples) inputs.push_back(s.input);
  const Eigen::MatrixXd out = net.forward_batch(params, norm, inputs, nullptr, Mode::kEval);
  double sum = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    sum += loss({out.col(col).data(), static_cast<std::size_t>(out.rows())}, samples[i].label);
  }
  return std::sqrt(sum / static_cast<double>(samples.size()));
}

std::uint64_t param_count_paper(const PaperParamConstants& k) {
  const std::uint64_t kernel = static_cast<std::uint64_t>(k.w_x) * k.w_y;
  const std::uint64_t conv = static_cast<std::uint64_t>(k.n_cl) * k.c * k.n_sf * kernel;
  const double fc = k.kappa * static_cast<double>(k.n_sf) * kernel * k.n_fcl;
  return conv + static_cast<std::uint64_t>(std::llround(fc));
}

std::uint64_t overhead_cl_mimo(std::uint64_t n_ms, std::uint64_t n_bs, std::uint64_t dataset) {
  return (3 * n_ms * n_bs + 2 * n_ms * n_bs) * dataset;
}

std::uint64_t overhead_cl_irs(std::uint64_t n_irs, std::uint64_t m_bs, std::uint64_t n_bs,
                              std::uint64_t dataset) {
  return (3 * (n_irs + 1) * m_bs + 2 * n_bs * (n_irs + 1)) * dataset;
}

std::uint64_t overhead_fl(std::uint64_t p, std::uint64_t rounds, std::uint64_t users) {
  return 2 * p * rounds * users;
}

OverheadReport overhead_report(Scenario scenario, const SystemConfig& sys, int m_bs,
                               std::uint64_t dataset, int rounds) {
  OverheadReport r;
  r.scenario = scenario;
  r.p_paper = param_count_paper();
  r.t_cl = scenario == Scenario::kMimo
               ? overhead_cl_mimo(sys.n_ms, sys.n_bs, dataset)
               : overhead_cl_irs(sys.n_irs, m_bs, sys.n_bs, dataset);
  r.t_fl = overhead_fl(r.p_paper, rounds, sys.k_users);
  r.ratio = r.t_fl == 0 ? 0.0 : static_cast<double>(r.t_cl) / static_cast<double>(r.t_fl);
  return r;
}

ComplexityReport complexity_report(int n_ms, int n_bs) {
  if (n_ms < 1 || n_bs < 1) throw std::invalid_argument("complexity_report: dims must be >= 1");
  const double n = static_cast<double>(n_ms) * n_bs;
  const double f2 = 128.0 * 128.0;
  ComplexityReport c;
  c.c_cl = 3.0 * 9.0 * f2 * n;
  c.c_fcl = 4.0 * f2 * n;
  c.c_total = 31.0 * f2 * n;
  c.c_ls = n * n;
  c.c_mmse = n * n * n;
  return c;
}

}  // namespace fedchan
