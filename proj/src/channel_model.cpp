// SPDX-License-Identifier: Apache-2.0
#include "fedchan/channel_model.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "fedchan/rng.hpp"

namespace fedchan {

namespace {

constexpr double kPi = std::numbers::pi;

void require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(std::string("SystemConfig: ") + what);
}

std::vector<Path> draw_paths(Rng& rng, int count, std::pair<double, double> aod_range,
                             std::pair<double, double> aoa_range, double max_delay) {
  std::vector<Path> paths(count);
  for (Path& p : paths) {
    p.aod = rng.uniform(aod_range.first, aod_range.second);
    p.aoa = rng.uniform(aoa_range.first, aoa_range.second);
    p.gain = rng.complex_normal(1.0);
    p.delay = rng.uniform(0.0, max_delay);
  }
  return paths;
}

}  // namespace

void SystemConfig::validate() const {
  require(n_bs >= 1 && n_ms >= 1 && n_irs >= 1, "antenna counts must be >= 1");
  require(m_sub >= 1 && cp_len >= 1, "subcarrier and CP counts must be >= 1");
  require(cp_len <= m_sub, "cp_len must not exceed m_sub");
  require(n_paths >= 1 && n_paths_b >= 1 && n_paths_s >= 1 && n_paths_irs >= 1,
          "path counts must be >= 1");
  require(k_users >= 1, "k_users must be >= 1");
  require(sym_period > 0.0, "sym_period must be positive");
  require(antenna_spacing > 0.0, "antenna_spacing must be positive");
}

CVector steering_vector(double phi, int n, double spacing) {
  if (n < 1) throw std::invalid_argument("steering_vector: n must be >= 1");
  CVector a(n);
  const double step = 2.0 * kPi * spacing * std::sin(phi);
  for (int i = 0; i < n; ++i) a(i) = std::polar(1.0, step * i);
  return a;
}

std::pair<double, double> user_sector(int user_index, int k_users) {
  if (k_users < 1 || user_index < 0 || user_index >= k_users) {
    throw std::out_of_range("user_sector: user index " + std::to_string(user_index) +
                            " outside [0, " + std::to_string(k_users) + ")");
  }
  const double width = kPi / k_users;
  return {-kPi / 2 + width * user_index, -kPi / 2 + width * (user_index + 1)};
}

double sinc_pulse(double t_over_ts) {
  if (t_over_ts == 0.0) return 1.0;
  const double x = kPi * t_over_ts;
  return std::sin(x) / x;
}

PathSet gen_user_paths(const SystemConfig& cfg, int user_index, std::uint64_t seed) {
  cfg.validate();
  const auto sector = user_sector(user_index, cfg.k_users);
  Rng rng(derive_seed(seed, Stream::kChannel, {static_cast<std::uint64_t>(user_index)}));
  const double max_delay = (cfg.cp_len - 1) * cfg.sym_period;
  return PathSet{draw_paths(rng, cfg.n_paths, sector, sector, max_delay)};
}

CMatrix delay_tap(const PathSet& paths, int d, const SystemConfig& cfg) {
  if (d < 0 || d >= cfg.cp_len) {
    throw std::out_of_range("delay_tap: tap index " + std::to_string(d) +
                            " outside [0, " + std::to_string(cfg.cp_len) + ")");
  }
  if (paths.paths.empty()) throw std::invalid_argument("delay_tap: empty PathSet");
  const double scale =
      std::sqrt(static_cast<double>(cfg.n_bs) * cfg.n_ms / paths.paths.size());
  CMatrix tap = CMatrix::Zero(cfg.n_ms, cfg.n_bs);
  for (const Path& p : paths.paths) {
    const double pulse = sinc_pulse((d * cfg.sym_period - p.delay) / cfg.sym_period);
    if (pulse == 0.0) continue;
    const CVector a_ms = steering_vector(p.aoa, cfg.n_ms, cfg.antenna_spacing);
    const CVector a_bs = steering_vector(p.aod, cfg.n_bs, cfg.antenna_spacing);
    tap.noalias() += (p.gain * pulse) * (a_ms * a_bs.adjoint());
  }
  return scale * tap;
}

MimoChannel ofdm_channel(const PathSet& paths, const SystemConfig& cfg) {
  cfg.validate();
  std::vector<CMatrix> taps;
  taps.reserve(cfg.cp_len);
  for (int d = 0; d < cfg.cp_len; ++d) taps.push_back(delay_tap(paths, d, cfg));

  MimoChannel h;
  h.subcarriers.reserve(cfg.m_sub);
  for (int m = 0; m < cfg.m_sub; ++m) {
    CMatrix hm = CMatrix::Zero(cfg.n_ms, cfg.n_bs);
    for (int d = 0; d < cfg.cp_len; ++d) {
      const long long k = (static_cast<long long>(m) * d) % cfg.m_sub;
      hm += std::polar(1.0, -2.0 * kPi * static_cast<double>(k) / cfg.m_sub) * taps[d];
    }
    h.subcarriers.push_back(std::move(hm));
  }
  return h;
}

IrsChannelSet make_irs_channel_set(CVector h_direct, CVector h_irs_user,
                                   CMatrix h_bs_irs) {
  if (h_bs_irs.rows() != h_direct.size() || h_bs_irs.cols() != h_irs_user.size()) {
    throw std::invalid_argument("make_irs_channel_set: dimension mismatch");
  }
  IrsChannelSet set;
  set.cascaded = h_bs_irs * h_irs_user.asDiagonal();
  set.h_direct = std::move(h_direct);
  set.h_irs_user = std::move(h_irs_user);
  set.h_bs_irs = std::move(h_bs_irs);
  return set;
}

IrsChannelSet gen_irs_channels(const SystemConfig& cfg, int user_index,
                               std::uint64_t seed) {
  cfg.validate();
  const auto sector = user_sector(user_index, cfg.k_users);
  const std::pair<double, double> full{-kPi / 2, kPi / 2};
  const double sp = cfg.antenna_spacing;

  // BS-IRS link: shared by all users of this realization.
  Rng link_rng(derive_seed(seed, Stream::kBsIrsLink));
  CMatrix h_b = CMatrix::Zero(cfg.n_bs, cfg.n_irs);
  for (const Path& p : draw_paths(link_rng, cfg.n_paths_irs, full, full, 0.0)) {
    // aod: departure at the BS, aoa: arrival at the IRS.
    h_b.noalias() += p.gain * (steering_vector(p.aod, cfg.n_bs, sp) *
                               steering_vector(p.aoa, cfg.n_irs, sp).adjoint());
  }
  h_b *= std::sqrt(static_cast<double>(cfg.n_bs) * cfg.n_irs / cfg.n_paths_irs);

  Rng user_rng(derive_seed(seed, Stream::kChannel, {static_cast<std::uint64_t>(user_index)}));
  CVector h_direct = CVector::Zero(cfg.n_bs);
  for (const Path& p : draw_paths(user_rng, cfg.n_paths_b, sector, sector, 0.0)) {
    h_direct += p.gain * steering_vector(p.aod, cfg.n_bs, sp);
  }
  h_direct *= std::sqrt(static_cast<double>(cfg.n_bs) / cfg.n_paths_b);

  CVector h_s = CVector::Zero(cfg.n_irs);
  for (const Path& p : draw_paths(user_rng, cfg.n_paths_s, sector, sector, 0.0)) {
    h_s += p.gain * steering_vector(p.aod, cfg.n_irs, sp);
  }
  h_s *= std::sqrt(static_cast<double>(cfg.n_irs) / cfg.n_paths_s);

  return make_irs_channel_set(std::move(h_direct), std::move(h_s), std::move(h_b));
}

IrsPhaseVector IrsPhaseVector::all_off(int n, double eps_on, double eps_off) {
  if (n < 1) throw std::invalid_argument("IrsPhaseVector: n must be >= 1");
  IrsPhaseVector psi;
  psi.on.assign(n, false);
  psi.phase.assign(n, 0.0);
  psi.eps_on = eps_on;
  psi.eps_off = eps_off;
  return psi;
}

IrsPhaseVector IrsPhaseVector::single_on(int n, int index, double eps_on,
                                         double eps_off) {
  if (index < 0 || index >= n) throw std::out_of_range("IrsPhaseVector: element index");
  IrsPhaseVector psi = all_off(n, eps_on, eps_off);
  psi.on[index] = true;
  return psi;
}

CVector IrsPhaseVector::entries() const {
  if (phase.size() != on.size()) {
    throw std::invalid_argument("IrsPhaseVector: on/phase length mismatch");
  }
  if (eps_on < 0.0 || eps_off < 0.0 || eps_on > 1.0 || eps_off > 1.0) {
    throw std::invalid_argument("IrsPhaseVector: insertion loss outside [0, 1]");
  }
  CVector psi(size());
  for (int n = 0; n < size(); ++n) {
    const double a = on[n] ? 1.0 - eps_on : eps_off;
    psi(n) = std::polar(a, phase[n]);
  }
  return psi;
}

CVector irs_reflect_gain(const IrsPhaseVector& psi, const CMatrix& v) {
  if (v.cols() != psi.size()) {
    throw std::invalid_argument("irs_reflect_gain: V has " + std::to_string(v.cols()) +
                                " columns, psi has " + std::to_string(psi.size()));
  }
  return v * psi.entries();
}

}  // namespace fedchan
