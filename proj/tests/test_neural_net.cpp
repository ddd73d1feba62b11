// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "fedchan/neural_net.hpp"
#include "fedchan/rng.hpp"
#include "fedchan/selfcheck.hpp"

using namespace fedchan;

namespace {

NetworkSpec tiny(int filters = 2, int fc = 8, int out = 6, int rows = 4, int cols = 5) {
  return NetworkSpec::channelnet(rows, cols, out, filters, fc);
}

std::vector<double> random_vec(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

NormState random_norm(const NetworkSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  NormState n = NormState::identity(spec);
  for (auto& l : n.mean) {
    for (double& m : l) m = 0.2 * rng.normal();
  }
  for (auto& l : n.var) {
    for (double& v : l) v = rng.uniform(0.3, 3.0);
  }
  return n;
}

// Loop-by-loop forward pass written from the layer definitions.
std::vector<double> reference_forward(const NetworkSpec& s, const std::vector<double>& p,
                                      const NormState& norm, const std::vector<double>& input,
                                      const DropoutMask* mask) {
  const int h = s.rows, w = s.cols, k = s.kernel, pad = k / 2;
  std::vector<double> act = input;  // [c][y][x]
  int chans = s.in_planes;
  std::size_t off = 0;
  for (std::size_t l = 0; l < s.conv_filters.size(); ++l) {
    const int f_out = s.conv_filters[l];
    std::vector<double> next(static_cast<std::size_t>(f_out) * h * w);
    for (int f = 0; f < f_out; ++f) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          double z = 0.0;
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              const int iy = y + ky - pad, ix = x + kx - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              for (int c = 0; c < chans; ++c) {
                const double wt = p[off + ((static_cast<std::size_t>(f) * k + ky) * k + kx) * chans + c];
                z += wt * act[(static_cast<std::size_t>(c) * h + iy) * w + ix];
              }
            }
          }
          z = (z - norm.mean[l][f]) / std::sqrt(norm.var[l][f] + s.norm_eps);
          next[(static_cast<std::size_t>(f) * h + y) * w + x] = z > 0 ? z : 0.0;
        }
      }
    }
    off += static_cast<std::size_t>(f_out) * chans * k * k;
    act = std::move(next);
    chans = f_out;
  }
  // Flatten position-major: index = (y*w + x)*chans + c.
  std::vector<double> flat(act.size());
  for (int c = 0; c < chans; ++c) {
    for (int q = 0; q < h * w; ++q) flat[static_cast<std::size_t>(q) * chans + c] = act[static_cast<std::size_t>(c) * h * w + q];
  }
  std::vector<double> x = flat;
  if (s.fc_width > 0) {
    std::vector<double> d(s.fc_width);
    for (int u = 0; u < s.fc_width; ++u) {
      double z = 0.0;
      for (std::size_t j = 0; j < flat.size(); ++j) z += p[off + u * flat.size() + j] * flat[j];
      z = z > 0 ? z : 0.0;
      if (mask) z = mask->keep[u] ? z / mask->keep_prob : 0.0;
      d[u] = z;
    }
    off += s.fc_width * flat.size();
    x = d;
  }
  if (s.out_len > 0) {
    std::vector<double> o(s.out_len);
    for (int i = 0; i < s.out_len; ++i) {
      for (std::size_t j = 0; j < x.size(); ++j) o[i] += p[off + i * x.size() + j] * x[j];
    }
    x = o;
  }
  return x;
}

}  // namespace

TEST(ParamCount, SingleUnitConv) {
  NetworkSpec s;
  s.in_planes = 1;
  s.rows = 1;
  s.cols = 1;
  s.conv_filters = {1};
  s.kernel = 1;
  s.fc_width = 0;
  s.out_len = 0;
  EXPECT_EQ(param_count_actual(s), 1u);
}

TEST(ParamCount, DenseOnly) {
  NetworkSpec s;
  s.in_planes = 2;
  s.rows = 1;
  s.cols = 1;
  s.conv_filters = {};
  s.fc_width = 3;
  s.out_len = 0;
  EXPECT_EQ(param_count_actual(s), 6u);
}

TEST(ParamCount, DefaultMimoGolden) {
  const NetworkSpec s = NetworkSpec::channelnet(32, 128, 2 * 32 * 128);
  // Enumerate layer by layer.
  std::uint64_t total = 0;
  int chans = 3;
  for (int i = 0; i < 3; ++i) {
    total += 128ULL * chans * 3 * 3;
    chans = 128;
  }
  const std::uint64_t flat = 128ULL * 32 * 128;
  total += 1024ULL * flat;
  total += 8192ULL * 1024;
  EXPECT_EQ(param_count_actual(s), total);
  EXPECT_EQ(param_count_actual(s), 545557888u);
}

TEST(ParamCount, LayoutIsContiguous) {
  const ParamLayout l = ParamLayout::of(tiny(3, 5, 7));
  std::size_t off = 0;
  for (const LayerSlice& s : l.layers) {
    EXPECT_EQ(s.offset, off);
    off += s.size();
  }
  EXPECT_EQ(off, l.total);
  ASSERT_EQ(l.layers.size(), 5u);
  EXPECT_EQ(l.layers[3].kind, LayerKind::kDense);
  EXPECT_EQ(l.layers[4].kind, LayerKind::kOutput);
}

TEST(Forward, MatchesReference) {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const NetworkSpec s = tiny(2 + seed % 2, 6, 5, 3 + seed % 2, 4);
    const ChannelNet net(s);
    const ParamVector p = net.init_params(seed);
    const NormState n = random_norm(s, seed);
    const auto x = random_vec(s.input_size(), seed + 10);
    const DropoutMask m = DropoutMask::draw(seed, 3, s.fc_width, 0.5);
    const auto got_eval = net.forward(p, n, x, nullptr, Mode::kEval);
    const auto want_eval = reference_forward(s, p.values, n, x, nullptr);
    const auto got_train = net.forward(p, n, x, &m, Mode::kTrain);
    const auto want_train = reference_forward(s, p.values, n, x, &m);
    ASSERT_EQ(got_eval.size(), want_eval.size());
    for (std::size_t i = 0; i < got_eval.size(); ++i) {
      EXPECT_NEAR(got_eval[i], want_eval[i], 1e-12 * (1 + std::abs(want_eval[i])));
      EXPECT_NEAR(got_train[i], want_train[i], 1e-12 * (1 + std::abs(want_train[i])));
    }
  }
}

TEST(Forward, ZeroParamsZeroOutput) {
  const NetworkSpec s = tiny();
  const ChannelNet net(s);
  ParamVector p;
  p.values.assign(net.param_count(), 0.0);
  const auto y = net.forward(p, NormState::identity(s), random_vec(s.input_size(), 1), nullptr,
                             Mode::kEval);
  for (double v : y) EXPECT_EQ(v, 0.0);
}

TEST(Forward, Deterministic) {
  const NetworkSpec s = tiny();
  const ChannelNet net(s);
  const ParamVector p = net.init_params(4);
  const auto x = random_vec(s.input_size(), 2);
  const DropoutMask m = DropoutMask::draw(1, 1, s.fc_width, 0.5);
  EXPECT_EQ(net.forward(p, NormState::identity(s), x, &m, Mode::kTrain),
            net.forward(p, NormState::identity(s), x, &m, Mode::kTrain));
}

TEST(Forward, OutputWeightTouchesOneCoordinate) {
  const NetworkSpec s = tiny();
  const ChannelNet net(s);
  ParamVector p = net.init_params(5);
  const NormState n = NormState::identity(s);
  const auto x = random_vec(s.input_size(), 3);
  const auto base = net.forward(p, n, x, nullptr, Mode::kEval);
  const LayerSlice& out = net.layout().layers.back();
  // Find a hidden unit that is active, then double one weight feeding output 2.
  const auto flat_ref = reference_forward(s, p.values, n, x, nullptr);
  ASSERT_EQ(flat_ref.size(), base.size());
  for (int j = 0; j < out.in_dim; ++j) {
    ParamVector q = p;
    q.values[out.offset + 2 * out.in_dim + j] *= 2.0;
    const auto y = net.forward(q, n, x, nullptr, Mode::kEval);
    for (int i = 0; i < s.out_len; ++i) {
      if (i != 2) EXPECT_EQ(y[i], base[i]);
    }
  }
}

TEST(Forward, EvalIgnoresDropout) {
  NetworkSpec s = tiny();
  s.keep_prob = 1.0;
  const ChannelNet net(s);
  const ParamVector p = net.init_params(6);
  const auto x = random_vec(s.input_size(), 4);
  const DropoutMask all = DropoutMask::draw(1, 0, s.fc_width, 1.0);
  const NormState n = NormState::identity(s);
  const auto a = net.forward(p, n, x, &all, Mode::kTrain);
  const auto b = net.forward(p, n, x, &all, Mode::kEval);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_DOUBLE_EQ(a[i], b[i]);
}

TEST(Forward, BatchMatchesSingle) {
  const NetworkSpec s = tiny();
  const ChannelNet net(s);
  const ParamVector p = net.init_params(7);
  const NormState n = random_norm(s, 2);
  std::vector<std::vector<double>> xs;
  for (int i = 0; i < 5; ++i) xs.push_back(random_vec(s.input_size(), 20 + i));
  std::vector<std::span<const double>> spans(xs.begin(), xs.end());
  const Eigen::MatrixXd y = net.forward_batch(p, n, spans, nullptr, Mode::kEval);
  for (int i = 0; i < 5; ++i) {
    const auto single = net.forward(p, n, xs[i], nullptr, Mode::kEval);
    for (int r = 0; r < y.rows(); ++r) EXPECT_NEAR(y(r, i), single[r], 1e-13);
  }
}

TEST(Forward, ShapeMismatch) {
  const NetworkSpec s = tiny();
  const ChannelNet net(s);
  const ParamVector p = net.init_params(1);
  EXPECT_THROW(net.forward(p, NormState::identity(s), std::vector<double>(3), nullptr, Mode::kEval),
               std::invalid_argument);
  ParamVector short_p;
  short_p.values.assign(4, 0.0);
  EXPECT_THROW(net.forward(short_p, NormState::identity(s), random_vec(s.input_size(), 1), nullptr,
                           Mode::kEval),
               std::invalid_argument);
}

TEST(Loss, Examples) {
  const std::vector<double> a{1, 2, 3, 4}, b{0, 1, 2, 3};
  EXPECT_EQ(loss(a, a), 0.0);
  EXPECT_EQ(loss(a, b), 4.0);
  const auto p = random_vec(8, 1), q = random_vec(8, 2);
  double want = 0.0;
  for (int i = 0; i < 8; ++i) want += (p[i] - q[i]) * (p[i] - q[i]);
  EXPECT_NEAR(loss(p, q), want, 1e-14);
  EXPECT_GT(loss(p, q), 0.0);
  EXPECT_THROW(loss(a, std::vector<double>(3)), std::invalid_argument);
}

TEST(Backward, PerfectPredictionZeroGradient) {
  const NetworkSpec s = tiny();
  const ChannelNet net(s);
  const ParamVector p = net.init_params(3);
  const NormState n = NormState::identity(s);
  const DropoutMask m = DropoutMask::draw(2, 0, s.fc_width, 0.5);
  std::vector<std::vector<double>> xs, ys;
  for (int i = 0; i < 3; ++i) {
    xs.push_back(random_vec(s.input_size(), 40 + i));
    ys.push_back(net.forward(p, n, xs.back(), &m, Mode::kTrain));
  }
  std::vector<SampleRef> batch;
  for (int i = 0; i < 3; ++i) batch.push_back({xs[i], ys[i]});
  const auto r = net.backward(p, n, batch, &m);
  // Batched and single-sample products round differently.
  EXPECT_LT(r.loss, 1e-28);
  for (double g : r.grad.values) EXPECT_NEAR(g, 0.0, 1e-13);
}

TEST(Backward, FiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const GradCheck g = gradient_check(NetworkSpec::channelnet(4, 4, 8, 2, 8), seed, 1e-3);
    EXPECT_LT(g.rel_error, 1e-4) << "seed " << seed;
    EXPECT_GT(g.nonzero, 0u);
    EXPECT_EQ(g.coords, param_count_actual(NetworkSpec::channelnet(4, 4, 8, 2, 8)));
  }
  // Other shapes: non-square input, one conv block, no hidden layer.
  NetworkSpec s = NetworkSpec::channelnet(3, 5, 4, 3, 0);
  s.conv_filters = {3};
  EXPECT_LT(gradient_check(s, 9, 1e-3).rel_error, 1e-4);
  EXPECT_LT(gradient_check(NetworkSpec::channelnet(2, 6, 3, 2, 5), 10, 1e-3).rel_error, 1e-4);
}

TEST(Backward, DuplicatedBatchSameGradient) {
  const NetworkSpec s = tiny();
  const ChannelNet net(s);
  const ParamVector p = net.init_params(8);
  const NormState n = random_norm(s, 1);
  const DropoutMask m = DropoutMask::draw(5, 0, s.fc_width, 0.5);
  std::vector<std::vector<double>> xs, ys;
  for (int i = 0; i < 3; ++i) {
    xs.push_back(random_vec(s.input_size(), 60 + i));
    ys.push_back(random_vec(s.out_len, 70 + i));
  }
  std::vector<SampleRef> once, twice;
  for (int i = 0; i < 3; ++i) {
    once.push_back({xs[i], ys[i]});
    twice.push_back({xs[i], ys[i]});
    twice.push_back({xs[i], ys[i]});
  }
  const auto a = net.backward(p, n, once, &m);
  const auto b = net.backward(p, n, twice, &m);
  EXPECT_NEAR(a.loss, b.loss, 1e-12 * a.loss);
  for (std::size_t i = 0; i < a.grad.size(); ++i) {
    EXPECT_NEAR(a.grad.values[i], b.grad.values[i], 1e-12 * (1 + std::abs(a.grad.values[i])));
  }
}

TEST(Backward, MaskedUnitsGetNoGradient) {
  const NetworkSpec s = tiny(2, 10, 4);
  const ChannelNet net(s);
  const ParamVector p = net.init_params(9);
  const DropoutMask m = DropoutMask::draw(3, 0, s.fc_width, 0.5);
  ASSERT_GT(m.kept(), 0u);
  ASSERT_LT(m.kept(), 10u);
  const auto x = random_vec(s.input_size(), 1), y = random_vec(s.out_len, 2);
  const std::vector<SampleRef> batch{{x, y}};
  const auto r = net.backward(p, NormState::identity(s), batch, &m);
  const auto active = net.active_coordinates(&m);
  const LayerSlice& dense = net.layout().layers[3];
  const LayerSlice& out = net.layout().layers[4];
  for (int u = 0; u < s.fc_width; ++u) {
    if (m.keep[u]) continue;
    for (int j = 0; j < dense.in_dim; ++j) {
      EXPECT_EQ(r.grad.values[dense.offset + u * dense.in_dim + j], 0.0);
      EXPECT_EQ(active[dense.offset + u * dense.in_dim + j], 0);
    }
    for (int o = 0; o < out.out_dim; ++o) {
      EXPECT_EQ(r.grad.values[out.offset + o * out.in_dim + u], 0.0);
      EXPECT_EQ(active[out.offset + o * out.in_dim + u], 0);
    }
  }
  for (std::size_t i = 0; i < dense.offset; ++i) EXPECT_EQ(active[i], 1);
}

TEST(Backward, EmptyBatch) {
  const NetworkSpec s = tiny();
  const ChannelNet net(s);
  EXPECT_THROW(net.backward(net.init_params(1), NormState::identity(s), {}, nullptr),
               std::invalid_argument);
}

TEST(Backward, MomentsAreConvStatistics) {
  NetworkSpec s = tiny(2, 4, 3, 3, 3);
  s.conv_filters = {2};
  const ChannelNet net(s);
  const ParamVector p = net.init_params(2);
  std::vector<std::vector<double>> xs, ys;
  std::vector<SampleRef> batch;
  for (int i = 0; i < 2; ++i) {
    xs.push_back(random_vec(s.input_size(), 80 + i));
    ys.push_back(random_vec(s.out_len, 90 + i));
  }
  for (int i = 0; i < 2; ++i) batch.push_back({xs[i], ys[i]});
  const auto r = net.backward(p, NormState::identity(s), batch, nullptr);
  // Pre-normalization conv outputs by direct summation.
  const int h = 3, w = 3;
  for (int f = 0; f < 2; ++f) {
    double sum = 0.0, sum_sq = 0.0;
    for (const auto& x : xs) {
      for (int y = 0; y < h; ++y) {
        for (int xx = 0; xx < w; ++xx) {
          double z = 0.0;
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = y + ky - 1, ix = xx + kx - 1;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              for (int c = 0; c < 3; ++c) z += p.values[((f * 3 + ky) * 3 + kx) * 3 + c] * x[(c * h + iy) * w + ix];
            }
          }
          sum += z;
          sum_sq += z * z;
        }
      }
    }
    const double cnt = 2.0 * h * w;
    EXPECT_NEAR(r.moments.mean[0][f], sum / cnt, 1e-13);
    EXPECT_NEAR(r.moments.mean_sq[0][f], sum_sq / cnt, 1e-13);
  }
  EXPECT_EQ(r.moments.count, 2.0 * h * w);
}

TEST(Norm, PoolIsCountWeighted) {
  BatchMoments a{{{1.0}}, {{2.0}}, 1.0};
  BatchMoments b{{{4.0}}, {{20.0}}, 3.0};
  const std::vector<BatchMoments> parts{a, b};
  const BatchMoments m = BatchMoments::pool(parts);
  EXPECT_DOUBLE_EQ(m.mean[0][0], (1.0 + 12.0) / 4.0);
  EXPECT_DOUBLE_EQ(m.mean_sq[0][0], (2.0 + 60.0) / 4.0);
  EXPECT_EQ(m.count, 4.0);
}

TEST(Norm, RunningUpdate) {
  NetworkSpec s = tiny();
  s.conv_filters = {1};
  NormState st = NormState::identity(s);
  BatchMoments m{{{2.0}}, {{5.0}}, 10.0};
  update_norm_state(st, m, 0.9);
  EXPECT_DOUBLE_EQ(st.mean[0][0], 0.2);
  EXPECT_DOUBLE_EQ(st.var[0][0], 0.9 + 0.1 * (5.0 - 4.0));
}

TEST(Sgd, PlainStep) {
  ParamVector p{{1.0, -2.0, 3.0}};
  GradientVector g{{0.5, 1.0, -1.0}};
  MomentumState st;
  sgd_step(p, g, 0.1, st, 0.0);
  EXPECT_DOUBLE_EQ(p.values[0], 0.95);
  EXPECT_DOUBLE_EQ(p.values[1], -2.1);
  EXPECT_DOUBLE_EQ(p.values[2], 3.1);
}

TEST(Sgd, ZeroGradientNoMove) {
  ParamVector p{{1.0, 2.0}};
  MomentumState st;
  sgd_step(p, GradientVector{{0.0, 0.0}}, 0.5, st, 0.9);
  EXPECT_EQ(p.values, (std::vector<double>{1.0, 2.0}));
}

TEST(Sgd, MomentumUnrolled) {
  ParamVector p{{0.0, 0.0}};
  const GradientVector g{{1.0, -3.0}};
  MomentumState st;
  sgd_step(p, g, 1.0, st, 0.9);
  sgd_step(p, g, 1.0, st, 0.9);
  EXPECT_NEAR(p.values[0], -2.9, 1e-15);
  EXPECT_NEAR(p.values[1], 8.7, 1e-14);
}

TEST(Sgd, ActiveCoordinatesOnly) {
  ParamVector p{{1.0, 1.0, 1.0}};
  MomentumState st;
  const std::vector<std::uint8_t> active{1, 0, 1};
  sgd_step(p, GradientVector{{1.0, 1.0, 1.0}}, 0.5, st, 0.9, active);
  EXPECT_EQ(p.values, (std::vector<double>{0.5, 1.0, 0.5}));
}

TEST(Sgd, LayoutMismatch) {
  ParamVector p{{1.0, 1.0}};
  MomentumState st;
  EXPECT_THROW(sgd_step(p, GradientVector{{1.0}}, 0.1, st, 0.0), std::invalid_argument);
}

TEST(Dropout, KeepFrequency) {
  const int width = 12, draws = 10000;
  const double kappa = 0.5;
  std::vector<int> kept(width, 0);
  for (int r = 0; r < draws; ++r) {
    const DropoutMask m = DropoutMask::draw(11, r, width, kappa);
    for (int u = 0; u < width; ++u) {
      ASSERT_TRUE(m.keep[u] == 0 || m.keep[u] == 1);
      kept[u] += m.keep[u];
    }
  }
  const double se = std::sqrt(kappa * (1 - kappa) / draws);
  for (int u = 0; u < width; ++u) EXPECT_LT(std::abs(kept[u] / double(draws) - kappa), 3 * se) << u;
}

TEST(Dropout, SameSeedRoundSameMask) {
  const DropoutMask a = DropoutMask::draw(3, 17, 64, 0.5);
  const DropoutMask b = DropoutMask::draw(3, 17, 64, 0.5);
  EXPECT_EQ(a.keep, b.keep);
  EXPECT_NE(a.keep, DropoutMask::draw(3, 18, 64, 0.5).keep);
}

TEST(Init, GlorotBoundsAndSeeded) {
  const NetworkSpec s = tiny(4, 16, 6);
  const ChannelNet net(s);
  const ParamVector p = net.init_params(1);
  EXPECT_EQ(p.values, net.init_params(1).values);
  EXPECT_NE(p.values, net.init_params(2).values);
  for (const LayerSlice& l : net.layout().layers) {
    const double fan_out = l.kind == LayerKind::kConv ? l.out_dim * s.kernel * s.kernel : l.out_dim;
    const double bound = std::sqrt(6.0 / (l.in_dim + fan_out));
    for (std::size_t i = 0; i < l.size(); ++i) EXPECT_LE(std::abs(p.values[l.offset + i]), bound);
  }
}

TEST(ModelFile, RoundTrip) {
  const NetworkSpec s = tiny();
  const ChannelNet net(s);
  const ParamVector p = net.init_params(12);
  const NormState n = random_norm(s, 3);
  const auto path = std::filesystem::temp_directory_path() / "fedchan_model_rt.fcmd";
  write_model(path, s, p, n);
  ParamVector q;
  NormState m;
  read_model(path, s, q, m);
  EXPECT_EQ(p.values, q.values);
  EXPECT_EQ(n.mean, m.mean);
  EXPECT_EQ(n.var, m.var);
  EXPECT_THROW(read_model(path, tiny(3), q, m), std::runtime_error);
  std::filesystem::resize_file(path, 40);
  EXPECT_THROW(read_model(path, s, q, m), std::runtime_error);
  std::filesystem::remove(path);
}
