// SPDX-License-Identifier: Apache-2.0
#include "fedchan/selfcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "fedchan/baselines_metrics.hpp"
#include "fedchan/channel_model.hpp"
#include "fedchan/rng.hpp"

namespace fedchan {

namespace {

double batch_loss(const ChannelNet& net, const ParamVector& p, const NormState& norm,
                  std::span<const SampleRef> batch, const DropoutMask* mask) {
  double sum = 0.0;
  for (const SampleRef& s : batch) {
    sum += loss(net.forward(p, norm, s.input, mask, Mode::kTrain), s.label);
  }
  return sum / static_cast<double>(batch.size());
}

SystemConfig tiny_system() {
  SystemConfig sys;
  sys.n_bs = 4;
  sys.n_ms = 2;
  sys.m_sub = 2;
  sys.cp_len = 1;
  sys.k_users = 2;
  return sys;
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(3) << v;
  return os.str();
}

}  // namespace

GradCheck gradient_check(const NetworkSpec& spec, std::uint64_t seed, double step,
                         const GradientFn& grad) {
  const ChannelNet net(spec);
  Rng rng(seed);
  ParamVector params = net.init_params(seed);
  NormState norm = NormState::identity(spec);
  for (auto& layer : norm.mean) {
    for (double& m : layer) m = 0.1 * rng.normal();
  }
  for (auto& layer : norm.var) {
    for (double& v : layer) v = rng.uniform(0.5, 2.0);
  }

  std::vector<std::vector<double>> inputs(2), labels(2);
  std::vector<SampleRef> batch;
  for (int i = 0; i < 2; ++i) {
    inputs[i].resize(spec.input_size());
    labels[i].resize(spec.output_size());
    for (double& x : inputs[i]) x = rng.normal();
    for (double& y : labels[i]) y = rng.normal();
    batch.push_back({inputs[i], labels[i]});
  }
  // A mask that keeps nothing makes the whole FC path's gradient zero.
  DropoutMask mask;
  for (std::uint64_t round = 0;; ++round) {
    mask = DropoutMask::draw(seed, round, spec.fc_width, spec.keep_prob);
    if (spec.fc_width == 0 || mask.kept() > 0) break;
  }

  const ChannelNet::GradResult analytic =
      grad ? grad(net, params, norm, batch, &mask) : net.backward(params, norm, batch, &mask);

  auto central = [&](std::size_t i, double h) {
    const double keep = params.values[i];
    params.values[i] = keep + h;
    const double up = batch_loss(net, params, norm, batch, &mask);
    params.values[i] = keep - h;
    const double down = batch_loss(net, params, norm, batch, &mask);
    params.values[i] = keep;
    return (up - down) / (2.0 * h);
  };
  auto agree = [](double x, double y) {
    return std::abs(x - y) <= 1e-7 * std::max({std::abs(x), std::abs(y), 1e-3});
  };

  GradCheck out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    // The loss is piecewise quadratic in one coordinate, so the central
    // difference is exact unless [x-h, x+h] crosses a ReLU kink. A step whose
    // halving changes the estimate has crossed one; shrink it.
    double h = step;
    double fd = central(i, h);
    double half = central(i, h / 2);
    while (!agree(fd, half) && h > 1e-7) {
      h /= 10;
      fd = central(i, h);
      half = central(i, h / 2);
    }
    if (h != step) ++out.kink_coords;
    const double a = analytic.grad.values[i];
    const double err = std::abs(a - fd);
    out.max_abs_error = std::max(out.max_abs_error, err);
    out.rel_error = std::max(out.rel_error, err / std::max({std::abs(a), std::abs(fd), kGradFloor}));
    if (a != 0.0) ++out.nonzero;
    ++out.coords;
  }
  return out;
}

double preprocess_identity_error(int channels, std::uint64_t seed, const PreprocessFn& fn) {
  SystemConfig sys;
  sys.n_bs = 16;
  sys.n_ms = 4;
  sys.m_sub = 4;
  sys.cp_len = 2;
  sys.k_users = 4;
  const PilotConfig pilots = PilotConfig::dft(sys.n_bs, sys.n_ms, sys.n_bs, sys.n_ms);
  double worst = 0.0;
  for (int c = 0; c < channels; ++c) {
    const auto s = derive_seed(seed, Stream::kChannel, {static_cast<std::uint64_t>(c)});
    const MimoChannel h = ofdm_channel(gen_user_paths(sys, c % sys.k_users, s), sys);
    const auto y = receive_pilots_mimo(h, pilots, 0.0, s);
    for (int m = 0; m < sys.m_sub; ++m) {
      const CMatrix g = fn ? fn(y[m], pilots) : preprocess_mimo(y[m], pilots);
      const CMatrix& hm = h.subcarriers[m];
      const double err = (g - std::sqrt(pilots.rho) * hm).norm() / hm.norm();
      worst = std::max(worst, std::isfinite(err) ? err : INFINITY);
    }
  }
  return worst;
}

double fl_cl_trajectory_gap(const ChannelNet& net, std::span<const LocalDataset> data, int rounds,
                            std::uint64_t seed, const CorruptionConfig& fl_channel) {
  TrainConfig tc;
  tc.rounds = rounds;
  tc.batch_size = 0;
  tc.seed = seed;
  tc.track_validation = false;
  tc.mode = TrainMode::kCL;
  std::vector<std::vector<double>> cl_path;
  const TrainResult cl = train(net, data, tc, CorruptionConfig{},
                               [&](int, const ParamVector& p) { cl_path.push_back(p.values); });
  tc.mode = TrainMode::kFL;
  double gap = 0.0;
  std::size_t fl_rounds = 0;
  const TrainResult fl = train(net, data, tc, fl_channel, [&](int t, const ParamVector& p) {
    ++fl_rounds;
    if (static_cast<std::size_t>(t) > cl_path.size()) {
      gap = INFINITY;
      return;
    }
    const std::vector<double>& ref = cl_path[t - 1];
    for (std::size_t i = 0; i < ref.size(); ++i) {
      const double d = std::abs(ref[i] - p.values[i]);
      gap = std::max(gap, std::isfinite(d) ? d : INFINITY);
    }
  });
  if (cl.diverged || fl.diverged || fl_rounds != cl_path.size()) return INFINITY;
  return gap;
}

bool SelfcheckReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass; });
}

SelfcheckReport selfcheck(const SelfcheckHooks& hooks) {
  SelfcheckReport report;
  auto timed = [&](const std::string& name, const std::function<CheckResult()>& body) {
    const auto start = std::chrono::steady_clock::now();
    CheckResult r;
    try {
      r = body();
    } catch (const std::exception& e) {
      r.pass = false;
      r.detail = std::string("exception: ") + e.what();
    }
    r.name = name;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.checks.push_back(r);
  };

  const std::uint64_t p = hooks.param_count ? hooks.param_count() : param_count_paper();
  timed("param_count", [&] {
    return CheckResult{"", p == 600192, "P = " + std::to_string(p) + " (expect 600192)"};
  });
  timed("overhead_cl", [&] {
    const std::uint64_t v = overhead_cl_mimo(32, 128, 768000);
    return CheckResult{"", v == 15728640000ULL,
                       "T_CL = " + std::to_string(v) + " (expect 15728640000)"};
  });
  timed("overhead_fl", [&] {
    const std::uint64_t v = overhead_fl(p, 100, 8);
    return CheckResult{"", v == 960307200ULL, "T_FL = " + std::to_string(v) + " (expect 960307200)"};
  });
  timed("gradient_fd", [&] {
    const NetworkSpec spec = NetworkSpec::channelnet(4, 4, 8, 2, 8);
    double worst = 0.0;
    for (std::uint64_t s = 1; s <= 5; ++s) {
      const GradCheck g = gradient_check(spec, s, 1e-3, hooks.gradient);
      worst = std::max(worst, g.nonzero > 0 ? g.rel_error : INFINITY);
    }
    return CheckResult{"", worst < 1e-4, "max relative error " + sci(worst) + " (< 1e-4)"};
  });
  timed("preprocess_identity", [&] {
    const double err = preprocess_identity_error(20, 11, hooks.preprocess);
    return CheckResult{"", err < 1e-10, "max relative error " + sci(err) + " (< 1e-10)"};
  });
  timed("fl_equals_cl", [&] {
    const SystemConfig sys = tiny_system();
    const PilotConfig pilots = PilotConfig::dft(sys.n_bs, sys.n_ms, sys.n_bs, sys.n_ms);
    CollectOptions opts;
    opts.realizations = 2;
    opts.augment = 1;
    std::vector<LocalDataset> data;
    for (int k = 0; k < sys.k_users; ++k) {
      data.push_back(collect_local_dataset(Scenario::kMimo, sys, pilots, k, opts, 3));
    }
    const ChannelNet net(
        NetworkSpec::channelnet(sys.n_ms, sys.n_bs, 2 * sys.n_ms * sys.n_bs, 2, 8));
    const double gap = fl_cl_trajectory_gap(net, data, 10, 3, hooks.fl_channel);
    return CheckResult{"", gap < 1e-10, "max |theta_FL - theta_CL| " + sci(gap) + " (< 1e-10)"};
  });
  return report;
}

void print_report(std::ostream& os, const SelfcheckReport& report) {
  for (const CheckResult& c : report.checks) {
    os << (c.pass ? "PASS  " : "FAIL  ") << std::left << std::setw(20) << c.name << ' '
       << std::right << std::fixed << std::setprecision(2) << std::setw(7) << c.seconds << "s  "
       << c.detail << '\n';
  }
  os << (report.all_passed() ? "selfcheck: all checks passed" : "selfcheck: FAILED") << '\n';
}

}  // namespace fedchan
