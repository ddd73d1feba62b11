// SPDX-License-Identifier: Apache-2.0
#include "fedchan/fl_runtime.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fedchan/baselines_metrics.hpp"
#include "fedchan/rng.hpp"

namespace fedchan {

namespace {

constexpr std::uint64_t kPooledUser = ~std::uint64_t{0};

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

std::vector<double> gather(std::span<const double> v, std::span<const std::uint8_t> active) {
  if (active.empty()) return {v.begin(), v.end()};
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (active[i]) out.push_back(v[i]);
  }
  return out;
}

void scatter(std::span<const double> packed, std::span<const std::uint8_t> active,
             std::vector<double>& dst) {
  if (active.empty()) {
    std::copy(packed.begin(), packed.end(), dst.begin());
    return;
  }
  std::size_t k = 0;
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (active[i]) dst[i] = packed[k++];
  }
}

}  // namespace

// ---------------------------------------------------------------- corruption

void CorruptionConfig::validate() const {
  if (std::isnan(snr_theta_db)) throw std::invalid_argument("snr_theta_db must not be NaN");
  if (quant_bits && (*quant_bits < 1 || *quant_bits > 16)) {
    throw std::invalid_argument("quant_bits must be in [1, 16]");
  }
  if (!(erasure_frac >= 0.0 && erasure_frac <= 0.5)) {
    throw std::invalid_argument("erasure fraction must be in [0, 0.5]");
  }
}

bool CorruptionConfig::clean() const {
  return std::isinf(snr_theta_db) && snr_theta_db > 0 && !quant_bits && erasure_frac == 0.0;
}

double awgn_variance(std::span<const double> v, double snr_db, SnrConvention convention) {
  if (std::isinf(snr_db) && snr_db > 0) return 0.0;
  const double energy = norm2(v);
  if (convention == SnrConvention::kVerbatim) return energy / std::pow(10.0, snr_db / 20.0);
  if (v.empty()) return 0.0;
  return energy / static_cast<double>(v.size()) / std::pow(10.0, snr_db / 10.0);
}

std::vector<double> corrupt_awgn(std::span<const double> v, double snr_db, std::uint64_t seed,
                                 SnrConvention convention) {
  std::vector<double> out(v.begin(), v.end());
  const double var = awgn_variance(v, snr_db, convention);
  if (var == 0.0) return out;
  const double sd = std::sqrt(var);
  Rng rng(seed);
  for (double& x : out) x += sd * rng.normal();
  return out;
}

double quantizer_step(double amplitude, int bits) {
  if (bits < 1 || bits > 62) throw std::invalid_argument("quantizer bits must be in [1, 62]");
  return 2.0 * amplitude / std::ldexp(1.0, bits);
}

std::vector<double> quantize(std::span<const double> v, int bits) {
  double a = 0.0;
  for (double x : v) a = std::max(a, std::abs(x));
  const double step = quantizer_step(a, bits);
  std::vector<double> out(v.size(), 0.0);
  if (a == 0.0) return out;
  const double top = std::ldexp(1.0, bits) - 1.0;
  const double mid = std::ldexp(1.0, bits - 1);
  const double half = step / 2;
  for (std::size_t i = 0; i < v.size(); ++i) {
    double idx = std::clamp(std::floor(v[i] / step + mid), 0.0, top);
    double c = (idx + 0.5 - mid) * step;
    // floor can land one cell off right at a boundary
    if (v[i] - c > half && idx < top) c = (++idx + 0.5 - mid) * step;
    else if (c - v[i] > half && idx > 0) c = (--idx + 0.5 - mid) * step;
    // the rounded center can sit half an ulp past Delta/2 (e.g. at v = +-a)
    if (std::abs(v[i] - c) > half) c = std::nextafter(c, v[i]);
    out[i] = c;
  }
  return out;
}

std::size_t erasure_count(std::size_t length, double zeta, ErasureMode mode) {
  if (!(zeta >= 0.0 && zeta <= 0.5)) throw std::invalid_argument("erasure fraction must be in [0, 0.5]");
  const double raw = mode == ErasureMode::kFraction ? zeta * static_cast<double>(length)
                                                    : 100.0 * zeta;
  return std::min(length, static_cast<std::size_t>(std::floor(raw)));
}

std::vector<double> erase(std::span<const double> v, double zeta, std::uint64_t seed,
                          ErasureMode mode) {
  const std::size_t count = erasure_count(v.size(), zeta, mode);
  std::vector<double> out(v.begin(), v.end());
  if (count == 0) return out;
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    std::swap(idx[i], idx[i + rng.below(v.size() - i)]);
    out[idx[i]] = 0.0;
  }
  return out;
}

std::vector<double> corrupt(std::span<const double> v, const CorruptionConfig& cfg,
                            std::uint64_t seed) {
  std::vector<double> out(v.begin(), v.end());
  if (cfg.quant_bits) out = quantize(out, *cfg.quant_bits);
  if (cfg.erasure_frac > 0.0) out = erase(out, cfg.erasure_frac, derive_seed(seed, {1}), cfg.erasure_mode);
  if (!(std::isinf(cfg.snr_theta_db) && cfg.snr_theta_db > 0)) {
    out = corrupt_awgn(out, cfg.snr_theta_db, derive_seed(seed, {2}), cfg.snr_convention);
  }
  return out;
}

// ---------------------------------------------------------------- FL steps

std::vector<std::size_t> select_batch(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                      std::uint64_t user, std::uint64_t step) {
  std::vector<std::size_t> out;
  if (n == 0) return out;
  if (batch_size == 0 || batch_size >= n) {
    out.resize(n);
    std::iota(out.begin(), out.end(), std::size_t{0});
    return out;
  }
  const std::uint64_t first = step * batch_size;
  std::uint64_t epoch = ~std::uint64_t{0};
  std::vector<std::size_t> perm(n);
  out.reserve(batch_size);
  for (std::uint64_t pos = first; pos < first + batch_size; ++pos) {
    if (pos / n != epoch) {
      epoch = pos / n;
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      Rng rng(derive_seed(seed, Stream::kBatch, {user, epoch}));
      for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    }
    out.push_back(perm[pos % n]);
  }
  return out;
}

ChannelNet::GradResult local_gradient(const ChannelNet& net, const LocalDataset& user,
                                      const ParamVector& params, const NormState& norm,
                                      const DropoutMask* mask, std::size_t batch_size,
                                      std::uint64_t seed, std::uint64_t step) {
  if (user.train_idx.empty()) {
    throw std::invalid_argument("local_gradient: user " + std::to_string(user.user) +
                                " has an empty train split");
  }
  const auto sel = select_batch(user.train_idx.size(), batch_size, seed,
                                static_cast<std::uint64_t>(user.user), step);
  std::vector<SampleRef> batch;
  batch.reserve(sel.size());
  for (std::size_t i : sel) {
    const TrainingSample& s = user.samples[user.train_idx[i]];
    batch.push_back({s.input, s.label});
  }
  return net.backward(params, norm, batch, mask);
}

GradientVector mean_gradient(std::span<const GradientVector> grads) {
  if (grads.empty()) throw std::invalid_argument("mean_gradient: no gradients");
  GradientVector mean;
  mean.values.assign(grads.front().size(), 0.0);
  for (const GradientVector& g : grads) {
    if (g.size() != mean.size()) throw std::invalid_argument("mean_gradient: layout mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) mean.values[i] += g.values[i];
  }
  const double inv = 1.0 / static_cast<double>(grads.size());
  for (double& x : mean.values) x *= inv;
  return mean;
}

void aggregate_and_update(ParamVector& params, std::span<const GradientVector> grads, double lr,
                          MomentumState& state, double mu, std::span<const std::uint8_t> active) {
  sgd_step(params, mean_gradient(grads), lr, state, mu, active);
}

std::vector<ParamVector> broadcast(const ParamVector& params, const CorruptionConfig& cfg,
                                   std::span<const std::uint64_t> user_seeds,
                                   std::span<const std::uint8_t> active) {
  std::vector<ParamVector> out(user_seeds.size(), params);
  if (!cfg.downlink || cfg.clean()) return out;
  const std::vector<double> packed = gather(params.values, active);
  for (std::size_t k = 0; k < user_seeds.size(); ++k) {
    scatter(corrupt(packed, cfg, user_seeds[k]), active, out[k].values);
  }
  return out;
}

GradientVector transmit_uplink(const GradientVector& grad, const CorruptionConfig& cfg,
                               std::uint64_t seed, std::span<const std::uint8_t> active) {
  if (!cfg.uplink || cfg.clean()) return grad;
  GradientVector out = grad;
  scatter(corrupt(gather(grad.values, active), cfg, seed), active, out.values);
  return out;
}

// ---------------------------------------------------------------- training

const char* train_mode_name(TrainMode m) { return m == TrainMode::kCL ? "CL" : "FL"; }

TrainMode parse_train_mode(const std::string& text) {
  if (text == "CL" || text == "cl") return TrainMode::kCL;
  if (text == "FL" || text == "fl") return TrainMode::kFL;
  throw std::invalid_argument("unknown training mode '" + text + "' (expected CL or FL)");
}

void TrainConfig::validate() const {
  if (rounds < 0) throw std::invalid_argument("rounds must be >= 0");
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
  if (batch_size < 0) throw std::invalid_argument("batch size must be >= 0 (0 = full batch)");
  if (local_batches < 1) throw std::invalid_argument("local_batches must be >= 1");
}

std::vector<SampleRef> validation_refs(std::span<const LocalDataset> datasets) {
  std::vector<SampleRef> refs;
  for (const LocalDataset& ds : datasets) {
    for (std::size_t i : ds.val_idx) refs.push_back({ds.samples[i].input, ds.samples[i].label});
  }
  return refs;
}

TrainResult train(const ChannelNet& net, std::span<const LocalDataset> datasets,
                  const TrainConfig& cfg, const CorruptionConfig& corruption,
                  const RoundHook& on_round) {
  cfg.validate();
  corruption.validate();
  std::vector<const LocalDataset*> users;
  for (const LocalDataset& ds : datasets) {
    if (!ds.train_idx.empty()) users.push_back(&ds);
  }
  if (users.empty()) throw std::invalid_argument("train: every dataset has an empty train split");

  TrainResult res;
  res.params = net.init_params(cfg.seed);
  res.norm = NormState::identity(net.spec());
  MomentumState momentum;
  const std::vector<SampleRef> val = validation_refs(datasets);

  std::vector<SampleRef> pool;
  if (cfg.mode == TrainMode::kCL) {
    for (const LocalDataset* ds : users) {
      for (std::size_t i : ds->train_idx) pool.push_back({ds->samples[i].input, ds->samples[i].label});
    }
  }

  const NetworkSpec& spec = net.spec();
  const auto batch_size = static_cast<std::size_t>(cfg.batch_size);
  double initial_loss = 0.0;

  for (int t = 0; t < cfg.rounds; ++t) {
    const auto start = std::chrono::steady_clock::now();
    const auto round = static_cast<std::uint64_t>(t);
    std::optional<DropoutMask> mask;
    if (spec.fc_width > 0) mask = DropoutMask::draw(cfg.seed, round, spec.fc_width, spec.keep_prob);
    const DropoutMask* mp = mask ? &*mask : nullptr;
    const std::vector<std::uint8_t> active = net.active_coordinates(mp);

    RoundLog log;
    log.round = t + 1;
    GradientVector update;
    BatchMoments moments;

    if (cfg.mode == TrainMode::kFL) {
      std::vector<std::uint64_t> down_seeds;
      for (const LocalDataset* ds : users) {
        down_seeds.push_back(
            derive_seed(cfg.seed, Stream::kDownlink, {round, static_cast<std::uint64_t>(ds->user)}));
      }
      const bool noisy_down = corruption.downlink && !corruption.clean();
      std::vector<ParamVector> received;
      if (noisy_down) received = broadcast(res.params, corruption, down_seeds, active);

      std::vector<GradientVector> uplink;
      std::vector<BatchMoments> parts;
      double loss_sum = 0.0;
      for (std::size_t k = 0; k < users.size(); ++k) {
        const ParamVector& theta = noisy_down ? received[k] : res.params;
        GradientVector g;
        std::vector<BatchMoments> local_parts;
        double local_loss = 0.0;
        for (int b = 0; b < cfg.local_batches; ++b) {
          const auto step = round * static_cast<std::uint64_t>(cfg.local_batches) +
                            static_cast<std::uint64_t>(b);
          auto r = local_gradient(net, *users[k], theta, res.norm, mp, batch_size, cfg.seed, step);
          if (b == 0) {
            g = std::move(r.grad);
          } else {
            for (std::size_t i = 0; i < g.size(); ++i) g.values[i] += r.grad.values[i];
          }
          local_loss += r.loss;
          local_parts.push_back(std::move(r.moments));
        }
        if (cfg.local_batches > 1) {
          for (double& x : g.values) x /= cfg.local_batches;
        }
        loss_sum += local_loss / cfg.local_batches;
        log.user_grad_norms.push_back(std::sqrt(norm2(g.values)));
        parts.push_back(BatchMoments::pool(local_parts));
        const auto up_seed = derive_seed(cfg.seed, Stream::kUplink,
                                         {round, static_cast<std::uint64_t>(users[k]->user)});
        uplink.push_back(transmit_uplink(g, corruption, up_seed, active));
      }
      log.loss = loss_sum / static_cast<double>(users.size());
      moments = BatchMoments::pool(parts);
      update = mean_gradient(uplink);
    } else {
      const auto sel = select_batch(pool.size(), batch_size, cfg.seed, kPooledUser, round);
      std::vector<SampleRef> batch;
      batch.reserve(sel.size());
      for (std::size_t i : sel) batch.push_back(pool[i]);
      auto r = net.backward(res.params, res.norm, batch, mp);
      log.loss = r.loss;
      log.user_grad_norms.push_back(std::sqrt(norm2(r.grad.values)));
      update = std::move(r.grad);
      moments = std::move(r.moments);
    }
    log.grad_norm = std::sqrt(norm2(update.values));

    if (t == 0) initial_loss = log.loss;
    const bool bad = !std::isfinite(log.loss) || !std::isfinite(log.grad_norm) ||
                     log.loss > cfg.divergence_factor * initial_loss;
    if (bad) {
      log.diverged = true;
      log.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      res.logs.push_back(log);
      res.diverged = true;
      res.diagnostic = "diverged at round " + std::to_string(t + 1) + ": loss " +
                       std::to_string(log.loss) + ", initial loss " + std::to_string(initial_loss) +
                       ", aggregated gradient norm " + std::to_string(log.grad_norm);
      break;
    }

    sgd_step(res.params, update, cfg.lr, momentum, cfg.momentum, active);
    update_norm_state(res.norm, moments, spec.norm_decay);
    if (cfg.track_validation && !val.empty()) {
      log.val_rmse = validation_rmse(net, res.params, res.norm, val);
    }
    log.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    res.logs.push_back(std::move(log));
    if (on_round) on_round(t + 1, res.params);
  }
  return res;
}

}  // namespace fedchan
