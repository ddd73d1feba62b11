// SPDX-License-Identifier: Apache-2.0
#include "fedchan/pilot_frontend.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "fedchan/rng.hpp"

namespace fedchan {

namespace {

void require_dims(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

std::string shape(const CMatrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

CMatrix complex_noise(Eigen::Index rows, Eigen::Index cols, double variance,
                      std::uint64_t seed) {
  CMatrix n(rows, cols);
  if (variance <= 0.0) {
    n.setZero();
    return n;
  }
  Rng rng(seed);
  // Row-major fill order so a 1-row request draws the same stream as a row.
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) n(r, c) = rng.complex_normal(variance);
  }
  return n;
}

double safe_angle(Complex z) {
  if (z.real() == 0.0 && z.imag() == 0.0) return 0.0;
  const double a = std::atan2(z.imag(), z.real());
  return a <= -std::numbers::pi ? std::numbers::pi : a;
}

void check_irs_pilots(const IrsChannelSet& chs, const PilotConfig& cfg) {
  const auto n_bs = chs.h_direct.size();
  require_dims(cfg.s_bar.rows() == n_bs,
               "IRS pilots: S_IRS has " + shape(cfg.s_bar) + ", expected " +
                   std::to_string(n_bs) + " rows");
  require_dims(cfg.s_bar.cols() >= n_bs, "IRS pilots: S_IRS needs N_BS <= M_BS");
  require_dims(chs.cascaded.rows() == n_bs, "IRS pilots: cascaded channel rows");
}

}  // namespace

const char* scenario_name(Scenario s) { return s == Scenario::kMimo ? "mmimo" : "irs"; }

Scenario parse_scenario(const std::string& text) {
  if (text == "mmimo" || text == "mimo") return Scenario::kMimo;
  if (text == "irs") return Scenario::kIrs;
  throw std::invalid_argument("unknown scenario '" + text + "' (expected mmimo or irs)");
}

PilotConfig PilotConfig::dft(int n_bs, int n_ms, int m_bs, int m_ms) {
  if (m_bs < 1 || m_bs > n_bs || m_ms < 1 || m_ms > n_ms) {
    throw std::invalid_argument("PilotConfig::dft: need 1 <= M_BS <= N_BS and 1 <= M_MS <= N_MS");
  }
  PilotConfig cfg;
  cfg.m_bs = m_bs;
  cfg.m_ms = m_ms;
  cfg.f_bar = dft_matrix(n_bs).leftCols(m_bs);
  cfg.w_bar = dft_matrix(n_ms).leftCols(m_ms);
  cfg.s_bar = CMatrix::Identity(m_bs, m_bs);
  return cfg;
}

PilotConfig PilotConfig::irs_identity(int n_bs) {
  PilotConfig cfg;
  cfg.m_bs = n_bs;
  cfg.m_ms = 1;
  cfg.s_bar = CMatrix::Identity(n_bs, n_bs);
  return cfg;
}

double noise_variance_for_snr(double mean_entry_power, double snr_db, double rho) {
  return rho * mean_entry_power / std::pow(10.0, snr_db / 10.0);
}

double mean_entry_power(const MimoChannel& h) {
  double sum = 0.0;
  Eigen::Index count = 0;
  for (const CMatrix& m : h.subcarriers) {
    sum += m.squaredNorm();
    count += m.size();
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

double mean_entry_power(const IrsChannelSet& chs) {
  const CMatrix sigma = irs_label_matrix(chs);
  return sigma.squaredNorm() / static_cast<double>(sigma.size());
}

std::vector<CMatrix> receive_pilots_mimo(const MimoChannel& h, const PilotConfig& cfg,
                                         double noise_var, std::uint64_t seed) {
  if (h.subcarriers.empty()) throw std::invalid_argument("receive_pilots_mimo: empty channel");
  const auto n_ms = h.subcarriers.front().rows();
  const auto n_bs = h.subcarriers.front().cols();
  require_dims(cfg.w_bar.rows() == n_ms,
               "receive_pilots_mimo: W is " + shape(cfg.w_bar) + ", channel has " +
                   std::to_string(n_ms) + " user antennas");
  require_dims(cfg.f_bar.rows() == n_bs,
               "receive_pilots_mimo: F is " + shape(cfg.f_bar) + ", channel has " +
                   std::to_string(n_bs) + " BS antennas");
  require_dims(cfg.s_bar.rows() == cfg.f_bar.cols() && cfg.s_bar.cols() == cfg.f_bar.cols(),
               "receive_pilots_mimo: S must be M_BS x M_BS, got " + shape(cfg.s_bar));

  const CMatrix wh = cfg.w_bar.adjoint();
  const CMatrix fs = cfg.f_bar * cfg.s_bar;
  const double amp = std::sqrt(cfg.rho);
  std::vector<CMatrix> out;
  out.reserve(h.subcarriers.size());
  for (std::size_t m = 0; m < h.subcarriers.size(); ++m) {
    const CMatrix& hm = h.subcarriers[m];
    require_dims(hm.rows() == n_ms && hm.cols() == n_bs, "receive_pilots_mimo: ragged channel");
    const CMatrix noise = complex_noise(n_ms, fs.cols(), noise_var,
                                        derive_seed(seed, Stream::kPilotNoise, {m}));
    out.push_back(amp * (wh * hm * fs) + wh * noise);
  }
  return out;
}

CMatrix preprocess_mimo(const CMatrix& y_bar, const PilotConfig& cfg) {
  const auto n_ms = cfg.w_bar.rows();
  const auto m_ms = cfg.w_bar.cols();
  const auto n_bs = cfg.f_bar.rows();
  const auto m_bs = cfg.f_bar.cols();
  require_dims(y_bar.rows() == m_ms && y_bar.cols() == m_bs,
               "preprocess_mimo: Ybar is " + shape(y_bar) + ", expected " +
                   std::to_string(m_ms) + "x" + std::to_string(m_bs));

  CMatrix t_ms;
  if (m_ms < n_ms) {
    t_ms = cfg.w_bar;
  } else {
    Eigen::FullPivLU<CMatrix> lu(cfg.w_bar * cfg.w_bar.adjoint());
    lu.setThreshold(1e-12);
    if (!lu.isInvertible()) throw std::runtime_error("preprocess_mimo: W W^H is singular");
    t_ms = lu.solve(cfg.w_bar);
  }
  CMatrix t_bs;
  if (m_bs < n_bs) {
    t_bs = cfg.f_bar.adjoint();
  } else {
    const CMatrix ffh = cfg.f_bar * cfg.f_bar.adjoint();
    Eigen::FullPivLU<CMatrix> lu(ffh);
    lu.setThreshold(1e-12);
    if (!lu.isInvertible()) throw std::runtime_error("preprocess_mimo: F F^H is singular");
    // F^H (F F^H)^{-1} = ((F F^H)^{-H} F)^H and F F^H is Hermitian.
    t_bs = lu.solve(cfg.f_bar).adjoint();
  }
  return t_ms * y_bar * t_bs;
}

std::vector<double> three_plane_tensor(const CMatrix& m) {
  const auto rows = m.rows();
  const auto cols = m.cols();
  const auto plane = rows * cols;
  std::vector<double> t(static_cast<std::size_t>(3 * plane));
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      const auto i = static_cast<std::size_t>(r * cols + c);
      const Complex z = m(r, c);
      t[i] = z.real();
      t[plane + i] = z.imag();
      t[2 * plane + i] = safe_angle(z);
    }
  }
  return t;
}

std::vector<double> vectorize_label(const CMatrix& m) {
  const auto n = static_cast<std::size_t>(m.size());
  std::vector<double> label(2 * n);
  const Complex* data = m.data();  // column-major storage is vec(M)
  for (std::size_t i = 0; i < n; ++i) {
    label[i] = data[i].real();
    label[n + i] = data[i].imag();
  }
  return label;
}

CMatrix unvectorize_label(const std::vector<double>& label, int rows, int cols) {
  const auto n = static_cast<std::size_t>(rows) * cols;
  if (label.size() != 2 * n) {
    throw std::invalid_argument("unvectorize_label: label length " +
                                std::to_string(label.size()) + " != 2*" + std::to_string(n));
  }
  CMatrix m(rows, cols);
  Complex* data = m.data();
  for (std::size_t i = 0; i < n; ++i) data[i] = {label[i], label[n + i]};
  return m;
}

CMatrix add_label_noise(const CMatrix& m, double label_snr_db, std::uint64_t seed) {
  const double power = m.squaredNorm() / static_cast<double>(std::max<Eigen::Index>(1, m.size()));
  const double var = noise_variance_for_snr(power, label_snr_db);
  return m + complex_noise(m.rows(), m.cols(), var, seed);
}

TrainingSample make_sample_mimo(const CMatrix& g, const CMatrix& h_true,
                                std::optional<double> label_noise_db, std::uint64_t seed) {
  require_dims(g.rows() == h_true.rows() && g.cols() == h_true.cols(),
               "make_sample_mimo: G is " + shape(g) + ", H is " + shape(h_true));
  TrainingSample s;
  s.scenario = Scenario::kMimo;
  s.rows = static_cast<int>(g.rows());
  s.cols = static_cast<int>(g.cols());
  s.input = three_plane_tensor(g);
  s.label = vectorize_label(label_noise_db ? add_label_noise(h_true, *label_noise_db, seed)
                                           : h_true);
  return s;
}

CRowVector receive_direct_irs(const IrsChannelSet& chs, const PilotConfig& cfg,
                              double noise_var, std::uint64_t seed) {
  check_irs_pilots(chs, cfg);
  const auto psi = IrsPhaseVector::all_off(static_cast<int>(chs.cascaded.cols()), cfg.eps_on,
                                           cfg.eps_off);
  const CVector effective = chs.h_direct + irs_reflect_gain(psi, chs.cascaded);
  const CMatrix noise = complex_noise(1, cfg.s_bar.cols(), noise_var,
                                      derive_seed(seed, Stream::kPilotNoise));
  return std::sqrt(cfg.rho) * (effective.adjoint() * cfg.s_bar) + noise.row(0);
}

CMatrix receive_cascaded_sweep(const IrsChannelSet& chs, const PilotConfig& cfg,
                               double noise_var, std::uint64_t seed) {
  check_irs_pilots(chs, cfg);
  const int n_irs = static_cast<int>(chs.cascaded.cols());
  const double amp = std::sqrt(cfg.rho);
  CMatrix y(n_irs, cfg.s_bar.cols());
  for (int n = 0; n < n_irs; ++n) {
    const auto psi = IrsPhaseVector::single_on(n_irs, n, cfg.eps_on, cfg.eps_off);
    const CVector effective = chs.h_direct + irs_reflect_gain(psi, chs.cascaded);
    const CMatrix noise =
        complex_noise(1, cfg.s_bar.cols(), noise_var,
                      derive_seed(seed, Stream::kPilotNoise, {static_cast<std::uint64_t>(n + 1)}));
    y.row(n) = amp * (effective.adjoint() * cfg.s_bar) + noise.row(0);
  }
  return y;
}

CMatrix irs_label_matrix(const IrsChannelSet& chs) {
  CMatrix sigma(chs.h_direct.size(), chs.cascaded.cols() + 1);
  sigma.col(0) = chs.h_direct;
  sigma.rightCols(chs.cascaded.cols()) = chs.cascaded;
  return sigma;
}

TrainingSample make_sample_irs(const CRowVector& y_direct, const CMatrix& y_sweep,
                               const IrsChannelSet& chs,
                               std::optional<double> label_noise_db, std::uint64_t seed) {
  require_dims(y_sweep.cols() == y_direct.size(),
               "make_sample_irs: direct row has " + std::to_string(y_direct.size()) +
                   " entries, sweep is " + shape(y_sweep));
  require_dims(y_sweep.rows() == chs.cascaded.cols(),
               "make_sample_irs: sweep rows must equal N_IRS");
  CMatrix upsilon(y_sweep.rows() + 1, y_sweep.cols());
  upsilon.row(0) = y_direct;
  upsilon.bottomRows(y_sweep.rows()) = y_sweep;

  const CMatrix sigma = irs_label_matrix(chs);
  TrainingSample s;
  s.scenario = Scenario::kIrs;
  s.rows = static_cast<int>(upsilon.rows());
  s.cols = static_cast<int>(upsilon.cols());
  s.input = three_plane_tensor(upsilon);
  s.label = vectorize_label(label_noise_db ? add_label_noise(sigma, *label_noise_db, seed)
                                           : sigma);
  return s;
}

std::size_t local_dataset_size(Scenario scenario, int m_sub, int realizations, int augment,
                               std::size_t snr_levels) {
  const std::size_t per_realization =
      snr_levels * static_cast<std::size_t>(augment) *
      (scenario == Scenario::kMimo ? static_cast<std::size_t>(m_sub) : 1u);
  return per_realization * static_cast<std::size_t>(realizations);
}

void split_train_validation(LocalDataset& ds, std::uint64_t seed) {
  const std::size_t n = ds.samples.size();
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(derive_seed(seed, Stream::kSplit, {static_cast<std::uint64_t>(ds.user)}));
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);

  const std::size_t n_val = n / 5;  // floor(0.2 n)
  ds.val_idx.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
  ds.train_idx.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
  std::sort(ds.val_idx.begin(), ds.val_idx.end());
  std::sort(ds.train_idx.begin(), ds.train_idx.end());
}

LocalDataset collect_local_dataset(Scenario scenario, const SystemConfig& sys,
                                   const PilotConfig& pilots, int user_index,
                                   const CollectOptions& opts, std::uint64_t seed) {
  sys.validate();
  if (opts.realizations < 1 || opts.augment < 1) {
    throw std::invalid_argument("collect_local_dataset: N and G must be >= 1");
  }
  if (pilots.snr_levels_db.empty()) {
    throw std::invalid_argument("collect_local_dataset: no pilot SNR levels configured");
  }

  LocalDataset ds;
  ds.user = user_index;
  ds.scenario = scenario;
  ds.seed = seed;
  ds.samples.reserve(local_dataset_size(scenario, sys.m_sub, opts.realizations, opts.augment,
                                        pilots.snr_levels_db.size()));
  const auto user = static_cast<std::uint64_t>(user_index);

  for (int r = 0; r < opts.realizations; ++r) {
    const std::uint64_t realization_seed =
        derive_seed(seed, Stream::kRealization, {static_cast<std::uint64_t>(r)});
    if (scenario == Scenario::kMimo) {
      const MimoChannel h = ofdm_channel(gen_user_paths(sys, user_index, realization_seed), sys);
      const double power = mean_entry_power(h);
      for (std::size_t s = 0; s < pilots.snr_levels_db.size(); ++s) {
        const double nv = noise_variance_for_snr(power, pilots.snr_levels_db[s], pilots.rho);
        for (int g = 0; g < opts.augment; ++g) {
          const std::array<std::uint64_t, 4> tag{user, static_cast<std::uint64_t>(r), s,
                                                 static_cast<std::uint64_t>(g)};
          const auto y = receive_pilots_mimo(h, pilots, nv,
                                             derive_seed(seed, Stream::kPilotNoise, tag));
          const std::uint64_t label_seed = derive_seed(seed, Stream::kLabelNoise, tag);
          for (int m = 0; m < sys.m_sub; ++m) {
            TrainingSample sample =
                make_sample_mimo(preprocess_mimo(y[m], pilots), h.subcarriers[m],
                                 opts.label_noise_db,
                                 derive_seed(label_seed, {static_cast<std::uint64_t>(m)}));
            sample.user = user_index;
            sample.subcarrier = m;
            ds.samples.push_back(std::move(sample));
          }
        }
      }
    } else {
      const IrsChannelSet chs = gen_irs_channels(sys, user_index, realization_seed);
      const double power = mean_entry_power(chs);
      for (std::size_t s = 0; s < pilots.snr_levels_db.size(); ++s) {
        const double nv = noise_variance_for_snr(power, pilots.snr_levels_db[s], pilots.rho);
        for (int g = 0; g < opts.augment; ++g) {
          const std::array<std::uint64_t, 4> tag{user, static_cast<std::uint64_t>(r), s,
                                                 static_cast<std::uint64_t>(g)};
          const std::uint64_t noise_seed = derive_seed(seed, Stream::kPilotNoise, tag);
          const CRowVector y_direct = receive_direct_irs(chs, pilots, nv, noise_seed);
          const CMatrix y_sweep = receive_cascaded_sweep(chs, pilots, nv, noise_seed);
          TrainingSample sample = make_sample_irs(y_direct, y_sweep, chs, opts.label_noise_db,
                                                  derive_seed(seed, Stream::kLabelNoise, tag));
          sample.user = user_index;
          ds.samples.push_back(std::move(sample));
        }
      }
    }
  }
  split_train_validation(ds, seed);
  return ds;
}

}  // namespace fedchan
