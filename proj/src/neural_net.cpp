// SPDX-License-Identifier: Apache-2.0
#include "fedchan/neural_net.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "fedchan/rng.hpp"

namespace fedchan {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstWeights = Eigen::Map<const RowMatrix>;
using Weights = Eigen::Map<RowMatrix>;

// Cap on the doubles held by one im2col buffer; larger batches are chunked.
constexpr std::size_t kColsBudget = std::size_t{1} << 22;

void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

// Column j = s*HW + y*W + x of `cols` holds the k*k*C patch around (y, x) of
// sample s, ordered (ky, kx, c), zero padded.
void im2col(const Eigen::MatrixXd& act, int channels, int h, int w, int k, int batch,
            Eigen::MatrixXd& cols) {
  const int pad = k / 2;
  const int hw = h * w;
  const Eigen::Index depth = static_cast<Eigen::Index>(channels) * k * k;
  cols.setZero(depth, static_cast<Eigen::Index>(hw) * batch);
  const double* src = act.data();
  double* dst = cols.data();
  for (int s = 0; s < batch; ++s) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t j = static_cast<std::size_t>(s) * hw + y * w + x;
        double* col = dst + j * depth;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = y + ky - pad;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = x + kx - pad;
            if (ix < 0 || ix >= w) continue;
            const std::size_t in = static_cast<std::size_t>(s) * hw + iy * w + ix;
            std::memcpy(col + (ky * k + kx) * channels, src + in * channels,
                        sizeof(double) * channels);
          }
        }
      }
    }
  }
}

void col2im(const Eigen::MatrixXd& cols, int channels, int h, int w, int k, int batch,
            Eigen::MatrixXd& act) {
  const int pad = k / 2;
  const int hw = h * w;
  const Eigen::Index depth = cols.rows();
  act.setZero(channels, static_cast<Eigen::Index>(hw) * batch);
  const double* src = cols.data();
  double* dst = act.data();
  for (int s = 0; s < batch; ++s) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t j = static_cast<std::size_t>(s) * hw + y * w + x;
        const double* col = src + j * depth;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = y + ky - pad;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = x + kx - pad;
            if (ix < 0 || ix >= w) continue;
            const std::size_t in = static_cast<std::size_t>(s) * hw + iy * w + ix;
            const double* c = col + (ky * k + kx) * channels;
            double* a = dst + in * channels;
            for (int ch = 0; ch < channels; ++ch) a[ch] += c[ch];
          }
        }
      }
    }
  }
}

std::uint64_t fnv1a(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xff;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

// ---------------------------------------------------------------- NetworkSpec

NetworkSpec NetworkSpec::channelnet(int rows, int cols, int out_len, int filters,
                                    int fc_width) {
  NetworkSpec s;
  s.rows = rows;
  s.cols = cols;
  s.out_len = out_len;
  s.conv_filters.assign(3, filters);
  s.fc_width = fc_width;
  return s;
}

void NetworkSpec::validate() const {
  require(in_planes >= 1, "NetworkSpec: in_planes must be >= 1");
  require(rows >= 1 && cols >= 1, "NetworkSpec: input rows and cols must be >= 1");
  require(kernel >= 1 && kernel % 2 == 1, "NetworkSpec: kernel must be odd and >= 1");
  for (int f : conv_filters) require(f >= 1, "NetworkSpec: conv filter counts must be >= 1");
  require(fc_width >= 0, "NetworkSpec: fc_width must be >= 0");
  require(keep_prob > 0.0 && keep_prob <= 1.0, "NetworkSpec: keep_prob must be in (0, 1]");
  require(out_len >= 0, "NetworkSpec: out_len must be >= 0");
  require(norm_eps > 0.0, "NetworkSpec: norm_eps must be positive");
  require(norm_decay >= 0.0 && norm_decay < 1.0, "NetworkSpec: norm_decay must be in [0, 1)");
}

std::uint64_t NetworkSpec::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  h = fnv1a(h, static_cast<std::uint64_t>(in_planes));
  h = fnv1a(h, static_cast<std::uint64_t>(rows));
  h = fnv1a(h, static_cast<std::uint64_t>(cols));
  h = fnv1a(h, conv_filters.size());
  for (int f : conv_filters) h = fnv1a(h, static_cast<std::uint64_t>(f));
  h = fnv1a(h, static_cast<std::uint64_t>(kernel));
  h = fnv1a(h, static_cast<std::uint64_t>(fc_width));
  h = fnv1a(h, std::bit_cast<std::uint64_t>(keep_prob));
  h = fnv1a(h, static_cast<std::uint64_t>(out_len));
  h = fnv1a(h, std::bit_cast<std::uint64_t>(norm_eps));
  return h;
}

int NetworkSpec::flat_size() const {
  const int planes = conv_filters.empty() ? in_planes : conv_filters.back();
  return planes * rows * cols;
}

int NetworkSpec::output_size() const {
  if (out_len > 0) return out_len;
  if (fc_width > 0) return fc_width;
  return flat_size();
}

// ---------------------------------------------------------------- ParamLayout

ParamLayout ParamLayout::of(const NetworkSpec& spec) {
  spec.validate();
  ParamLayout l;
  int channels = spec.in_planes;
  auto add = [&l](LayerKind kind, int out, int in) {
    LayerSlice s{kind, l.total, out, in};
    l.total += s.size();
    l.layers.push_back(s);
  };
  for (int f : spec.conv_filters) {
    add(LayerKind::kConv, f, channels * spec.kernel * spec.kernel);
    channels = f;
  }
  int width = spec.flat_size();
  if (spec.fc_width > 0) {
    add(LayerKind::kDense, spec.fc_width, width);
    width = spec.fc_width;
  }
  if (spec.out_len > 0) add(LayerKind::kOutput, spec.out_len, width);
  return l;
}

std::size_t param_count_actual(const NetworkSpec& spec) { return ParamLayout::of(spec).total; }

// ---------------------------------------------------------------- NormState

NormState NormState::identity(const NetworkSpec& spec) {
  NormState n;
  for (int f : spec.conv_filters) {
    n.mean.emplace_back(f, 0.0);
    n.var.emplace_back(f, 1.0);
  }
  return n;
}

BatchMoments BatchMoments::pool(std::span<const BatchMoments> parts) {
  if (parts.empty()) throw std::invalid_argument("BatchMoments::pool: no parts");
  BatchMoments out;
  out.mean = parts[0].mean;
  out.mean_sq = parts[0].mean_sq;
  for (auto& v : out.mean) std::fill(v.begin(), v.end(), 0.0);
  for (auto& v : out.mean_sq) std::fill(v.begin(), v.end(), 0.0);
  for (const BatchMoments& p : parts) {
    if (p.mean.size() != out.mean.size()) {
      throw std::invalid_argument("BatchMoments::pool: layer count mismatch");
    }
    out.count += p.count;
  }
  if (out.count <= 0.0) throw std::invalid_argument("BatchMoments::pool: zero count");
  for (const BatchMoments& p : parts) {
    const double w = p.count / out.count;
    for (std::size_t l = 0; l < out.mean.size(); ++l) {
      if (p.mean[l].size() != out.mean[l].size()) {
        throw std::invalid_argument("BatchMoments::pool: channel count mismatch");
      }
      for (std::size_t f = 0; f < out.mean[l].size(); ++f) {
        out.mean[l][f] += w * p.mean[l][f];
        out.mean_sq[l][f] += w * p.mean_sq[l][f];
      }
    }
  }
  return out;
}

void update_norm_state(NormState& state, const BatchMoments& m, double decay) {
  if (m.mean.size() != state.mean.size()) {
    throw std::invalid_argument("update_norm_state: layer count mismatch");
  }
  for (std::size_t l = 0; l < state.mean.size(); ++l) {
    for (std::size_t f = 0; f < state.mean[l].size(); ++f) {
      const double mu = m.mean[l][f];
      const double var = std::max(0.0, m.mean_sq[l][f] - mu * mu);
      state.mean[l][f] = decay * state.mean[l][f] + (1.0 - decay) * mu;
      state.var[l][f] = decay * state.var[l][f] + (1.0 - decay) * var;
    }
  }
}

// ---------------------------------------------------------------- DropoutMask

DropoutMask DropoutMask::draw(std::uint64_t seed, std::uint64_t round, int width,
                              double keep_prob) {
  require(width >= 0, "DropoutMask: width must be >= 0");
  require(keep_prob > 0.0 && keep_prob <= 1.0, "DropoutMask: keep_prob must be in (0, 1]");
  DropoutMask m{seed, round, keep_prob, std::vector<std::uint8_t>(width, 1)};
  if (keep_prob < 1.0) {
    Rng rng(derive_seed(seed, Stream::kDropout, {round}));
    for (auto& k : m.keep) k = rng.bernoulli(keep_prob) ? 1 : 0;
  }
  return m;
}

std::size_t DropoutMask::kept() const {
  return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), std::uint8_t{1}));
}

double loss(std::span<const double> pred, std::span<const double> label) {
  if (pred.size() != label.size()) throw std::invalid_argument("loss: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - label[i];
    s += d * d;
  }
  return s;
}

// ---------------------------------------------------------------- ChannelNet

struct ChannelNet::Chunk {
  int batch = 0;
  std::vector<Eigen::MatrixXd> act;   // act[l]: channels x (HW*batch); act[L] post-ReLU
  std::vector<Eigen::MatrixXd> cols;  // im2col of act[l]
  Eigen::MatrixXd flat;               // flat_size x batch
  Eigen::MatrixXd dense;              // fc_width x batch, after ReLU and dropout
  Eigen::VectorXd dense_scale;        // per-unit dropout scale (0 or 1/kappa)
  Eigen::MatrixXd out;
  // Per-layer per-channel sums of pre-normalization values and their squares.
  std::vector<Eigen::VectorXd> sum;
  std::vector<Eigen::VectorXd> sum_sq;
};

ChannelNet::ChannelNet(NetworkSpec spec) : spec_(std::move(spec)), layout_(ParamLayout::of(spec_)) {}

ParamVector ChannelNet::init_params(std::uint64_t seed) const {
  ParamVector p;
  p.values.resize(layout_.total);
  Rng rng(derive_seed(seed, Stream::kInit));
  const int k2 = spec_.kernel * spec_.kernel;
  for (const LayerSlice& s : layout_.layers) {
    double fan_in = s.in_dim;
    double fan_out = s.out_dim;
    if (s.kind == LayerKind::kConv) fan_out = static_cast<double>(s.out_dim) * k2;
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    for (std::size_t i = 0; i < s.size(); ++i) p.values[s.offset + i] = rng.uniform(-a, a);
  }
  return p;
}

void ChannelNet::check(const ParamVector& params, const NormState& norm) const {
  if (params.size() != layout_.total) {
    throw std::invalid_argument("ChannelNet: expected " + std::to_string(layout_.total) +
                                " parameters, got " + std::to_string(params.size()));
  }
  if (norm.mean.size() != spec_.conv_filters.size() ||
      norm.var.size() != spec_.conv_filters.size()) {
    throw std::invalid_argument("ChannelNet: NormState layer count mismatch");
  }
  for (std::size_t l = 0; l < spec_.conv_filters.size(); ++l) {
    const auto f = static_cast<std::size_t>(spec_.conv_filters[l]);
    if (norm.mean[l].size() != f || norm.var[l].size() != f) {
      throw std::invalid_argument("ChannelNet: NormState channel count mismatch");
    }
  }
}

std::size_t ChannelNet::chunk_size(std::size_t batch) const {
  std::size_t widest = static_cast<std::size_t>(spec_.in_planes);
  for (int f : spec_.conv_filters) widest = std::max(widest, static_cast<std::size_t>(f));
  const std::size_t per_sample =
      widest * spec_.kernel * spec_.kernel * static_cast<std::size_t>(spec_.plane_size());
  return std::clamp<std::size_t>(kColsBudget / std::max<std::size_t>(per_sample, 1), 1,
                                 std::max<std::size_t>(batch, 1));
}

void ChannelNet::forward_chunk(const ParamVector& params, const NormState& norm,
                               std::span<const std::span<const double>> inputs,
                               const DropoutMask* mask, Mode mode, Chunk& c) const {
  const int b = static_cast<int>(inputs.size());
  const int h = spec_.rows;
  const int w = spec_.cols;
  const int hw = h * w;
  const int in_size = spec_.input_size();
  const std::size_t n_conv = spec_.conv_filters.size();
  const bool train = mode == Mode::kTrain;

  c.batch = b;
  c.act.resize(n_conv + 1);
  c.cols.resize(n_conv);
  c.sum.resize(n_conv);
  c.sum_sq.resize(n_conv);

  // Channel-interleaved activations: column s*HW + p holds all channels at p.
  Eigen::MatrixXd& a0 = c.act[0];
  a0.resize(spec_.in_planes, static_cast<Eigen::Index>(hw) * b);
  for (int s = 0; s < b; ++s) {
    if (static_cast<int>(inputs[s].size()) != in_size) {
      throw std::invalid_argument("ChannelNet: input has " + std::to_string(inputs[s].size()) +
                                  " values, expected " + std::to_string(in_size));
    }
    for (int ch = 0; ch < spec_.in_planes; ++ch) {
      for (int p = 0; p < hw; ++p) {
        a0(ch, static_cast<Eigen::Index>(s) * hw + p) = inputs[s][ch * hw + p];
      }
    }
  }

  std::size_t li = 0;
  int channels = spec_.in_planes;
  for (std::size_t l = 0; l < n_conv; ++l, ++li) {
    const LayerSlice& sl = layout_.layers[li];
    im2col(c.act[l], channels, h, w, spec_.kernel, b, c.cols[l]);
    Eigen::MatrixXd z = ConstWeights(params.values.data() + sl.offset, sl.out_dim, sl.in_dim) *
                        c.cols[l];
    if (train) {
      c.sum[l] = z.rowwise().sum();
      c.sum_sq[l] = z.array().square().rowwise().sum();
    }
    for (int f = 0; f < sl.out_dim; ++f) {
      const double inv = 1.0 / std::sqrt(norm.var[l][f] + spec_.norm_eps);
      z.row(f) = (z.row(f).array() - norm.mean[l][f]) * inv;
    }
    c.act[l + 1] = z.cwiseMax(0.0);
    channels = sl.out_dim;
  }

  // Flatten in memory order: feature index = p*channels + ch.
  const Eigen::MatrixXd& last = c.act[n_conv];
  c.flat = Eigen::Map<const Eigen::MatrixXd>(last.data(), static_cast<Eigen::Index>(hw) * channels, b);

  const Eigen::MatrixXd* x = &c.flat;
  if (spec_.fc_width > 0) {
    const LayerSlice& sl = layout_.layers[li++];
    c.dense = (ConstWeights(params.values.data() + sl.offset, sl.out_dim, sl.in_dim) * c.flat)
                  .cwiseMax(0.0);
    c.dense_scale = Eigen::VectorXd::Ones(sl.out_dim);
    if (train && mask != nullptr) {
      if (static_cast<int>(mask->keep.size()) != sl.out_dim) {
        throw std::invalid_argument("ChannelNet: dropout mask width mismatch");
      }
      for (int u = 0; u < sl.out_dim; ++u) {
        c.dense_scale(u) = mask->keep[u] ? 1.0 / mask->keep_prob : 0.0;
      }
      c.dense = c.dense_scale.asDiagonal() * c.dense;
    }
    x = &c.dense;
  }
  if (spec_.out_len > 0) {
    const LayerSlice& sl = layout_.layers[li];
    c.out = ConstWeights(params.values.data() + sl.offset, sl.out_dim, sl.in_dim) * (*x);
  } else {
    c.out = *x;
  }
}

Eigen::MatrixXd ChannelNet::forward_batch(const ParamVector& params, const NormState& norm,
                                          std::span<const std::span<const double>> inputs,
                                          const DropoutMask* mask, Mode mode) const {
  check(params, norm);
  Eigen::MatrixXd out(spec_.output_size(), static_cast<Eigen::Index>(inputs.size()));
  const std::size_t step = chunk_size(inputs.size());
  Chunk c;
  for (std::size_t start = 0; start < inputs.size(); start += step) {
    const std::size_t n = std::min(step, inputs.size() - start);
    forward_chunk(params, norm, inputs.subspan(start, n), mask, mode, c);
    out.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(n)) = c.out;
  }
  return out;
}

std::vector<double> ChannelNet::forward(const ParamVector& params, const NormState& norm,
                                        std::span<const double> input, const DropoutMask* mask,
                                        Mode mode) const {
  const std::span<const double> one[1] = {input};
  const Eigen::MatrixXd out = forward_batch(params, norm, one, mask, mode);
  return {out.data(), out.data() + out.size()};
}

ChannelNet::GradResult ChannelNet::backward(const ParamVector& params, const NormState& norm,
                                            std::span<const SampleRef> batch,
                                            const DropoutMask* mask) const {
  check(params, norm);
  if (batch.empty()) throw std::invalid_argument("ChannelNet::backward: empty batch");
  const int hw = spec_.plane_size();
  const std::size_t n_conv = spec_.conv_filters.size();
  const double total = static_cast<double>(batch.size());
  const int out_size = spec_.output_size();

  GradResult r;
  r.grad.values.assign(layout_.total, 0.0);
  std::vector<Eigen::VectorXd> sum(n_conv), sum_sq(n_conv);
  for (std::size_t l = 0; l < n_conv; ++l) {
    sum[l] = Eigen::VectorXd::Zero(spec_.conv_filters[l]);
    sum_sq[l] = Eigen::VectorXd::Zero(spec_.conv_filters[l]);
  }

  const std::size_t step = chunk_size(batch.size());
  std::vector<std::span<const double>> inputs;
  Chunk c;
  Eigen::MatrixXd d_out, d_x, d_act, d_cols;
  for (std::size_t start = 0; start < batch.size(); start += step) {
    const std::size_t n = std::min(step, batch.size() - start);
    const int b = static_cast<int>(n);
    inputs.clear();
    for (std::size_t i = 0; i < n; ++i) inputs.push_back(batch[start + i].input);
    forward_chunk(params, norm, inputs, mask, Mode::kTrain, c);
    for (std::size_t l = 0; l < n_conv; ++l) {
      sum[l] += c.sum[l];
      sum_sq[l] += c.sum_sq[l];
    }

    d_out = c.out;
    for (int s = 0; s < b; ++s) {
      const auto& label = batch[start + s].label;
      if (static_cast<int>(label.size()) != out_size) {
        throw std::invalid_argument("ChannelNet::backward: label has " +
                                    std::to_string(label.size()) + " values, expected " +
                                    std::to_string(out_size));
      }
      for (int i = 0; i < out_size; ++i) d_out(i, s) -= label[i];
    }
    r.loss += d_out.squaredNorm();
    d_out *= 2.0 / total;

    std::size_t li = layout_.layers.size();
    const Eigen::MatrixXd* x = spec_.fc_width > 0 ? &c.dense : &c.flat;
    // d_x: gradient with respect to *x.
    if (spec_.out_len > 0) {
      const LayerSlice& sl = layout_.layers[--li];
      Weights(r.grad.values.data() + sl.offset, sl.out_dim, sl.in_dim).noalias() +=
          d_out * x->transpose();
      d_x.noalias() =
          ConstWeights(params.values.data() + sl.offset, sl.out_dim, sl.in_dim).transpose() * d_out;
    } else {
      d_x = d_out;
    }
    if (spec_.fc_width > 0) {
      const LayerSlice& sl = layout_.layers[--li];
      // Kept units: dense = scale * relu(z) > 0 exactly when z > 0.
      Eigen::MatrixXd d_z = (c.dense.array() > 0.0).cast<double>() * d_x.array();
      d_z = c.dense_scale.asDiagonal() * d_z;
      Weights(r.grad.values.data() + sl.offset, sl.out_dim, sl.in_dim).noalias() +=
          d_z * c.flat.transpose();
      if (n_conv == 0) continue;
      d_x.noalias() =
          ConstWeights(params.values.data() + sl.offset, sl.out_dim, sl.in_dim).transpose() * d_z;
    }
    if (n_conv == 0) continue;

    d_act = Eigen::Map<const Eigen::MatrixXd>(d_x.data(), spec_.conv_filters.back(),
                                              static_cast<Eigen::Index>(hw) * b);
    int channels_in = 0;
    for (std::size_t l = n_conv; l-- > 0;) {
      const LayerSlice& sl = layout_.layers[l];
      channels_in = l == 0 ? spec_.in_planes : spec_.conv_filters[l - 1];
      Eigen::MatrixXd d_z = (c.act[l + 1].array() > 0.0).cast<double>() * d_act.array();
      for (int f = 0; f < sl.out_dim; ++f) {
        d_z.row(f) *= 1.0 / std::sqrt(norm.var[l][f] + spec_.norm_eps);
      }
      Weights(r.grad.values.data() + sl.offset, sl.out_dim, sl.in_dim).noalias() +=
          d_z * c.cols[l].transpose();
      if (l == 0) break;
      d_cols.noalias() =
          ConstWeights(params.values.data() + sl.offset, sl.out_dim, sl.in_dim).transpose() * d_z;
      col2im(d_cols, channels_in, spec_.rows, spec_.cols, spec_.kernel, b, d_act);
    }
  }

  r.loss /= total;
  const double count = total * hw;
  r.moments.count = count;
  for (std::size_t l = 0; l < n_conv; ++l) {
    r.moments.mean.emplace_back(sum[l].data(), sum[l].data() + sum[l].size());
    r.moments.mean_sq.emplace_back(sum_sq[l].data(), sum_sq[l].data() + sum_sq[l].size());
    for (auto& v : r.moments.mean.back()) v /= count;
    for (auto& v : r.moments.mean_sq.back()) v /= count;
  }
  return r;
}

std::vector<std::uint8_t> ChannelNet::active_coordinates(const DropoutMask* mask) const {
  std::vector<std::uint8_t> active(layout_.total, 1);
  if (mask == nullptr || spec_.fc_width == 0) return active;
  if (static_cast<int>(mask->keep.size()) != spec_.fc_width) {
    throw std::invalid_argument("active_coordinates: dropout mask width mismatch");
  }
  for (const LayerSlice& sl : layout_.layers) {
    if (sl.kind == LayerKind::kDense) {
      for (int u = 0; u < sl.out_dim; ++u) {
        if (mask->keep[u]) continue;
        std::fill_n(active.begin() + static_cast<std::ptrdiff_t>(sl.offset) +
                        static_cast<std::ptrdiff_t>(u) * sl.in_dim,
                    sl.in_dim, std::uint8_t{0});
      }
    } else if (sl.kind == LayerKind::kOutput) {
      for (int o = 0; o < sl.out_dim; ++o) {
        for (int u = 0; u < sl.in_dim; ++u) {
          if (!mask->keep[u]) active[sl.offset + static_cast<std::size_t>(o) * sl.in_dim + u] = 0;
        }
      }
    }
  }
  return active;
}

// ---------------------------------------------------------------- optimizer

void sgd_step(ParamVector& params, const GradientVector& grad, double lr, MomentumState& state,
              double mu, std::span<const std::uint8_t> active) {
  const std::size_t n = params.size();
  if (grad.size() != n) throw std::invalid_argument("sgd_step: gradient length mismatch");
  if (!active.empty() && active.size() != n) {
    throw std::invalid_argument("sgd_step: active mask length mismatch");
  }
  if (state.velocity.empty()) state.velocity.assign(n, 0.0);
  if (state.velocity.size() != n) throw std::invalid_argument("sgd_step: momentum length mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    if (!active.empty() && active[i] == 0) continue;
    state.velocity[i] = mu * state.velocity[i] + grad.values[i];
    params.values[i] -= lr * state.velocity[i];
  }
}

// ---------------------------------------------------------------- model file

namespace {

constexpr char kModelMagic[4] = {'F', 'C', 'M', 'D'};
constexpr std::uint32_t kModelVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw std::runtime_error("model file truncated: " + path.string());
  }
  return v;
}

}  // namespace

void write_model(const std::filesystem::path& path, const NetworkSpec& spec,
                 const ParamVector& params, const NormState& norm) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open model file for writing: " + path.string());
  os.write(kModelMagic, 4);
  put(os, kModelVersion);
  put(os, spec.hash());
  put(os, static_cast<std::uint64_t>(params.size()));
  os.write(reinterpret_cast<const char*>(params.values.data()),
           static_cast<std::streamsize>(sizeof(double) * params.size()));
  std::vector<double> stats;
  for (const auto& m : norm.mean) stats.insert(stats.end(), m.begin(), m.end());
  for (const auto& v : norm.var) stats.insert(stats.end(), v.begin(), v.end());
  put(os, static_cast<std::uint64_t>(stats.size()));
  os.write(reinterpret_cast<const char*>(stats.data()),
           static_cast<std::streamsize>(sizeof(double) * stats.size()));
  if (!os) throw std::runtime_error("failed writing model file: " + path.string());
}

void read_model(const std::filesystem::path& path, const NetworkSpec& spec, ParamVector& params,
                NormState& norm) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open model file: " + path.string());
  char magic[4];
  if (!is.read(magic, 4)) throw std::runtime_error("model file truncated: " + path.string());
  if (std::memcmp(magic, kModelMagic, 4) != 0) {
    throw std::runtime_error("not a model file (bad magic): " + path.string());
  }
  if (get<std::uint32_t>(is, path) != kModelVersion) {
    throw std::runtime_error("unsupported model file version: " + path.string());
  }
  if (get<std::uint64_t>(is, path) != spec.hash()) {
    throw std::runtime_error("model file was written for a different network: " + path.string());
  }
  const ParamLayout layout = ParamLayout::of(spec);
  const auto n = get<std::uint64_t>(is, path);
  if (n != layout.total) throw std::runtime_error("model file parameter count mismatch");
  params.values.resize(n);
  if (!is.read(reinterpret_cast<char*>(params.values.data()),
               static_cast<std::streamsize>(sizeof(double) * n))) {
    throw std::runtime_error("model file truncated: " + path.string());
  }
  norm = NormState::identity(spec);
  std::size_t expect = 0;
  for (const auto& m : norm.mean) expect += 2 * m.size();
  const auto m = get<std::uint64_t>(is, path);
  if (m != expect) throw std::runtime_error("model file normalization state mismatch");
  std::vector<double> stats(m);
  if (!is.read(reinterpret_cast<char*>(stats.data()),
               static_cast<std::streamsize>(sizeof(double) * m))) {
    throw std::runtime_error("model file truncated: " + path.string());
  }
  std::size_t k = 0;
  for (auto& v : norm.mean) for (double& x : v) x = stats[k++];
  for (auto& v : norm.var) for (double& x : v) x = stats[k++];
}

}  // namespace fedchan
