// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include <gtest/gtest.h>

#include "fedchan/baselines_metrics.hpp"
#include "fedchan/rng.hpp"

using namespace fedchan;

namespace {

SystemConfig small_system() {
  SystemConfig sys;
  sys.n_bs = 8;
  sys.n_ms = 2;
  sys.n_irs = 3;
  sys.m_sub = 4;
  sys.cp_len = 2;
  sys.k_users = 4;
  return sys;
}

MimoChannel draw_mimo(const SystemConfig& sys, int user, std::uint64_t seed) {
  return ofdm_channel(gen_user_paths(sys, user, seed), sys);
}

CMatrix random_cmatrix(int r, int c, std::uint64_t seed) {
  Rng rng(seed);
  CMatrix m(r, c);
  for (int j = 0; j < c; ++j) {
    for (int i = 0; i < r; ++i) m(i, j) = {rng.normal(), rng.normal()};
  }
  return m;
}

}  // namespace

// ---------------------------------------------------------------- LS

TEST(LsMimo, NoiselessExact) {
  const SystemConfig sys = small_system();
  const PilotConfig pilots = PilotConfig::dft(sys.n_bs, sys.n_ms, sys.n_bs, sys.n_ms);
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const MimoChannel h = draw_mimo(sys, s % sys.k_users, s);
    const auto y = receive_pilots_mimo(h, pilots, 0.0, s);
    for (int m = 0; m < sys.m_sub; ++m) {
      const CMatrix est = ls_estimate_mimo(y[m], pilots);
      EXPECT_LT((est - h.subcarriers[m]).cwiseAbs().maxCoeff(), 1e-10);
    }
  }
}

TEST(LsMimo, ZeroObservation) {
  const SystemConfig sys = small_system();
  const PilotConfig pilots = PilotConfig::dft(sys.n_bs, sys.n_ms, sys.n_bs, sys.n_ms);
  const CMatrix est = ls_estimate_mimo(CMatrix::Zero(sys.n_ms, sys.n_bs), pilots);
  EXPECT_EQ(est.cwiseAbs().maxCoeff(), 0.0);
}

TEST(LsMimo, RankDeficientPilots) {
  PilotConfig pilots = PilotConfig::dft(8, 2, 8, 2);
  pilots.s_bar.col(1) = pilots.s_bar.col(0);
  EXPECT_THROW(ls_estimate_mimo(CMatrix::Zero(2, 8), pilots), std::exception);
}

TEST(LsMimo, NmseFallsWithSnr) {
  const SystemConfig sys = small_system();
  const PilotConfig pilots = PilotConfig::dft(sys.n_bs, sys.n_ms, sys.n_bs, sys.n_ms);
  NmseAccumulator lo, hi;
  double expect_lo = 0.0;
  for (std::uint64_t t = 0; t < 100; ++t) {
    const MimoChannel h = draw_mimo(sys, t % sys.k_users, 1000 + t);
    const double p = mean_entry_power(h);
    const double nv = noise_variance_for_snr(p, 20.0);
    const auto y20 = receive_pilots_mimo(h, pilots, nv, 5000 + t);
    const auto y30 = receive_pilots_mimo(h, pilots, noise_variance_for_snr(p, 30.0), 5000 + t);
    for (int m = 0; m < sys.m_sub; ++m) {
      lo.add(h.subcarriers[m], ls_estimate_mimo(y20[m], pilots));
      hi.add(h.subcarriers[m], ls_estimate_mimo(y30[m], pilots));
      // Unitary pilots pass the noise through unchanged: E||N||^2 = nv * N_MS * N_BS.
      expect_lo += nv * sys.n_ms * sys.n_bs / h.subcarriers[m].squaredNorm();
    }
  }
  expect_lo /= 100.0 * sys.m_sub;
  EXPECT_LT(hi.value(), lo.value());
  EXPECT_NEAR(lo.value() / expect_lo, 1.0, 0.05);
}

TEST(LsIrs, NoiselessExact) {
  const SystemConfig sys = small_system();
  const PilotConfig pilots = PilotConfig::irs_identity(sys.n_bs);
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const IrsChannelSet chs = gen_irs_channels(sys, s % sys.k_users, s);
    const CRowVector yd = receive_direct_irs(chs, pilots, 0.0, s);
    const CMatrix ys = receive_cascaded_sweep(chs, pilots, 0.0, s);
    const CMatrix est = ls_estimate_irs(yd, ys, pilots);
    EXPECT_LT((est - irs_label_matrix(chs)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

// ---------------------------------------------------------------- observation models

TEST(Operators, MimoOperatorReproducesObservation) {
  const SystemConfig sys = small_system();
  PilotConfig pilots = PilotConfig::dft(sys.n_bs, sys.n_ms, 6, sys.n_ms);
  pilots.rho = 2.0;
  const MimoChannel h = draw_mimo(sys, 1, 3);
  const auto y = receive_pilots_mimo(h, pilots, 0.0, 3);
  const CMatrix a = mimo_pilot_operator(pilots);
  for (int m = 0; m < sys.m_sub; ++m) {
    const CVector diff = a * vec(h.subcarriers[m]) - mimo_observation(y[m]);
    EXPECT_LT(diff.cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Operators, IrsOperatorReproducesObservation) {
  const SystemConfig sys = small_system();
  const PilotConfig pilots = PilotConfig::irs_identity(sys.n_bs);
  const IrsChannelSet chs = gen_irs_channels(sys, 2, 4);
  const CRowVector yd = receive_direct_irs(chs, pilots, 0.0, 4);
  const CMatrix ys = receive_cascaded_sweep(chs, pilots, 0.0, 4);
  const CVector diff =
      irs_pilot_operator(pilots, sys.n_irs) * vec(irs_label_matrix(chs)) - irs_observation(yd, ys);
  EXPECT_LT(diff.cwiseAbs().maxCoeff(), 1e-10);
}

// ---------------------------------------------------------------- LMMSE

TEST(Lmmse, VanishingNoiseApproachesLs) {
  const SystemConfig sys = small_system();
  const PilotConfig pilots = PilotConfig::dft(sys.n_bs, sys.n_ms, sys.n_bs, sys.n_ms);
  const int n = sys.n_bs * sys.n_ms;
  const CMatrix b = random_cmatrix(n, n, 7);
  const CMatrix r_h = b * b.adjoint() / n + CMatrix::Identity(n, n);
  const MimoChannel h = draw_mimo(sys, 0, 8);
  const auto y = receive_pilots_mimo(h, pilots, 1e-4, 8);
  const CMatrix ls = ls_estimate_mimo(y[0], pilots);
  const CMatrix mm = lmmse_estimate_mimo(y[0], pilots, r_h, 1e-12);
  EXPECT_LT((mm - ls).norm() / ls.norm(), 1e-6);
}

TEST(Lmmse, ZeroPriorGivesZero) {
  const SystemConfig sys = small_system();
  const PilotConfig pilots = PilotConfig::dft(sys.n_bs, sys.n_ms, sys.n_bs, sys.n_ms);
  const int n = sys.n_bs * sys.n_ms;
  const MimoChannel h = draw_mimo(sys, 0, 9);
  const auto y = receive_pilots_mimo(h, pilots, 0.01, 9);
  const CMatrix est = lmmse_estimate_mimo(y[1], pilots, CMatrix::Zero(n, n), 0.01);
  EXPECT_EQ(est.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Lmmse, GenericFormula) {
  // x = R A^H (A R A^H + N)^-1 y on a random instance, solved independently.
  const CMatrix a = random_cmatrix(5, 4, 1);
  const CMatrix b = random_cmatrix(4, 4, 2);
  const CMatrix r = b * b.adjoint() + CMatrix::Identity(4, 4);
  const CMatrix rn = 0.3 * CMatrix::Identity(5, 5);
  const CVector y = random_cmatrix(5, 1, 3).col(0);
  const double load = 1e-8 * r.trace().real() / 4;
  const CMatrix rl = r + load * CMatrix::Identity(4, 4);
  const CVector want = rl * a.adjoint() * (a * rl * a.adjoint() + rn).fullPivLu().solve(y);
  EXPECT_LT((lmmse_estimate(y, a, r, rn) - want).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Lmmse, BeatsLsOnAverage) {
  const SystemConfig sys = small_system();
  const PilotConfig pilots = PilotConfig::dft(sys.n_bs, sys.n_ms, sys.n_bs, sys.n_ms);
  const CMatrix r_h = channel_covariance_mimo(sys, 0, 500, 77);
  NmseAccumulator ls, mm;
  for (std::uint64_t t = 0; t < 40; ++t) {
    const MimoChannel h = draw_mimo(sys, 0, 9000 + t);
    const double nv = noise_variance_for_snr(mean_entry_power(h), 10.0);
    const auto y = receive_pilots_mimo(h, pilots, nv, t);
    for (int m = 0; m < sys.m_sub; ++m) {
      ls.add(h.subcarriers[m], ls_estimate_mimo(y[m], pilots));
      mm.add(h.subcarriers[m], lmmse_estimate_mimo(y[m], pilots, r_h, nv));
    }
  }
  EXPECT_LT(mm.value(), ls.value());
}

TEST(Covariance, HermitianAndDeterministic) {
  const SystemConfig sys = small_system();
  const CMatrix r = channel_covariance_mimo(sys, 1, 50, 3);
  EXPECT_EQ(r.rows(), sys.n_bs * sys.n_ms);
  EXPECT_LT((r - r.adjoint()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(r, channel_covariance_mimo(sys, 1, 50, 3));
  const CMatrix ri = channel_covariance_irs(sys, 1, 50, 3);
  EXPECT_EQ(ri.rows(), sys.n_bs * (sys.n_irs + 1));
  EXPECT_LT((ri - ri.adjoint()).cwiseAbs().maxCoeff(), 1e-12);
}

// ---------------------------------------------------------------- NMSE

TEST(Nmse, Examples) {
  std::vector<CMatrix> h{random_cmatrix(3, 4, 1), random_cmatrix(3, 4, 2)};
  EXPECT_EQ(nmse(h, h), 0.0);
  std::vector<CMatrix> twice{2.0 * h[0], 2.0 * h[1]};
  EXPECT_NEAR(nmse(h, twice), 1.0, 1e-14);
}

TEST(Nmse, BruteForce) {
  std::vector<CMatrix> h, e;
  for (int i = 0; i < 6; ++i) {
    h.push_back(random_cmatrix(2, 3, 10 + i));
    e.push_back(random_cmatrix(2, 3, 20 + i));
  }
  double sum = 0.0;
  for (std::size_t t = 0; t < h.size(); ++t) {
    double num = 0.0, den = 0.0;
    for (int r = 0; r < 2; ++r) {
      for (int c = 0; c < 3; ++c) {
        num += std::norm(h[t](r, c) - e[t](r, c));
        den += std::norm(h[t](r, c));
      }
    }
    sum += num / den;
  }
  EXPECT_NEAR(nmse(h, e), sum / 6.0, 1e-13);
}

TEST(Nmse, UnitaryInvariance) {
  const CMatrix q = random_cmatrix(4, 4, 5).householderQr().householderQ();
  std::vector<CMatrix> h{random_cmatrix(4, 3, 6)}, e{random_cmatrix(4, 3, 7)};
  std::vector<CMatrix> hq{q * h[0]}, eq{q * e[0]};
  EXPECT_NEAR(nmse(h, e), nmse(hq, eq), 1e-12);
  EXPECT_GE(nmse(h, e), 0.0);
}

TEST(Nmse, Errors) {
  std::vector<CMatrix> z{CMatrix::Zero(2, 2)}, e{random_cmatrix(2, 2, 1)};
  EXPECT_THROW(nmse(z, e), std::invalid_argument);
  std::vector<CMatrix> bad{random_cmatrix(2, 3, 1)};
  EXPECT_THROW(nmse(e, bad), std::invalid_argument);
}

// ---------------------------------------------------------------- validation RMSE

namespace {

struct TinySet {
  NetworkSpec spec = NetworkSpec::channelnet(3, 3, 4, 2, 6);
  ChannelNet net{spec};
  ParamVector params = net.init_params(4);
  NormState norm = NormState::identity(spec);
  std::vector<std::vector<double>> inputs, outputs;

  TinySet() {
    Rng rng(9);
    for (int i = 0; i < 5; ++i) {
      inputs.emplace_back(spec.input_size());
      for (double& x : inputs.back()) x = rng.normal();
      outputs.push_back(net.forward(params, norm, inputs.back(), nullptr, Mode::kEval));
    }
  }
};

}  // namespace

TEST(ValidationRmse, PerfectPredictor) {
  TinySet t;
  std::vector<SampleRef> s;
  for (int i = 0; i < 5; ++i) s.push_back({t.inputs[i], t.outputs[i]});
  EXPECT_LT(validation_rmse(t.net, t.params, t.norm, s), 1e-12);
}

TEST(ValidationRmse, ConstantErrorNorm) {
  TinySet t;
  const double c = 2.5;
  std::vector<std::vector<double>> labels = t.outputs;
  std::vector<SampleRef> s;
  for (int i = 0; i < 5; ++i) {
    labels[i][i % 4] += c;  // error vector of norm c
    s.push_back({t.inputs[i], labels[i]});
  }
  EXPECT_NEAR(validation_rmse(t.net, t.params, t.norm, s), c, 1e-12);
}

TEST(ValidationRmse, BruteForce) {
  TinySet t;
  Rng rng(11);
  std::vector<std::vector<double>> labels(5, std::vector<double>(4));
  std::vector<SampleRef> s;
  double sum = 0.0;
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 4; ++j) {
      labels[i][j] = rng.normal();
      sum += (t.outputs[i][j] - labels[i][j]) * (t.outputs[i][j] - labels[i][j]);
    }
    s.push_back({t.inputs[i], labels[i]});
  }
  EXPECT_NEAR(validation_rmse(t.net, t.params, t.norm, s), std::sqrt(sum / 5), 1e-12);
  EXPECT_THROW(validation_rmse(t.net, t.params, t.norm, {}), std::invalid_argument);
}

// ---------------------------------------------------------------- counts

TEST(ParamCountPaper, Examples) {
  EXPECT_EQ(param_count_paper(), 600192u);
  PaperParamConstants zero;
  zero.n_cl = 0;
  zero.kappa = 0.0;
  EXPECT_EQ(param_count_paper(zero), 0u);
  PaperParamConstants k{1, 1, 2, 1, 1, 1.0, 3};
  EXPECT_EQ(param_count_paper(k), 8u);
}

TEST(Overhead, Examples) {
  EXPECT_EQ(overhead_cl_mimo(32, 128, 768000), 15728640000ULL);
  EXPECT_EQ(overhead_cl_mimo(32, 128, 0), 0u);
  EXPECT_EQ(overhead_cl_irs(64, 64, 64, 1), 20800u);
  EXPECT_EQ(overhead_fl(600192, 100, 8), 960307200ULL);
  EXPECT_EQ(overhead_fl(0, 100, 8), 0u);
  EXPECT_EQ(overhead_fl(600192, 0, 8), 0u);
  EXPECT_EQ(overhead_fl(600192, 100, 0), 0u);
  const double ratio = 15728640000.0 / 960307200.0;
  EXPECT_GT(ratio, 16.0);
  EXPECT_LT(ratio, 17.0);
}

TEST(Overhead, FlLinearInEachArgument) {
  const std::uint64_t base = overhead_fl(1000, 10, 4);
  EXPECT_EQ(overhead_fl(3000, 10, 4), 3 * base);
  EXPECT_EQ(overhead_fl(1000, 70, 4), 7 * base);
  EXPECT_EQ(overhead_fl(1000, 10, 20), 5 * base);
}

TEST(Overhead, Report) {
  SystemConfig sys;
  const OverheadReport r = overhead_report(Scenario::kMimo, sys, sys.n_bs, 768000, 100);
  EXPECT_EQ(r.p_paper, 600192u);
  EXPECT_EQ(r.t_cl, 15728640000ULL);
  EXPECT_EQ(r.t_fl, 960307200ULL);
  EXPECT_DOUBLE_EQ(r.ratio, 15728640000.0 / 960307200.0);
}

TEST(Complexity, Examples) {
  EXPECT_DOUBLE_EQ(complexity_report(32, 128).c_total, 2080374784.0);
  EXPECT_DOUBLE_EQ(complexity_report(1, 1).c_cl, 442368.0);
  const ComplexityReport c = complexity_report(24, 30);  // N_MS*N_BS = 720
  EXPECT_NEAR(c.c_mmse / c.c_total, 1.0, 0.05);
  EXPECT_DOUBLE_EQ(c.c_ls, 720.0 * 720.0);
  EXPECT_THROW(complexity_report(0, 4), std::invalid_argument);
}
