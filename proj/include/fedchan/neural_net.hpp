// SPDX-License-Identifier: Apache-2.0
//
// ChannelNet: conv blocks (3x3 conv -> normalization -> ReLU), a fully
// connected layer with ReLU and dropout, and a linear regression output.
// Forward and backward passes are hand-derived; there is no autodiff graph.
//
// Normalization layers are parameter-free. They standardize each feature map
// with running statistics held in NormState, in both train and eval mode; the
// moments observed during a training forward pass are returned so that the
// training driver can fold them into NormState after the step. This keeps the
// loss a per-sample sum, so gradients of disjoint batches average exactly.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace fedchan {

struct NetworkSpec {
  int in_planes = 3;
  int rows = 0;
  int cols = 0;
  std::vector<int> conv_filters{128, 128, 128};
  int kernel = 3;
  int fc_width = 1024;     // 0 disables the hidden fully connected layer
  double keep_prob = 0.5;  // kappa, fraction of FC units kept per round
  int out_len = 0;         // 0 disables the output regression layer
  double norm_eps = 1e-5;
  double norm_decay = 0.9;

  static NetworkSpec channelnet(int rows, int cols, int out_len, int filters = 128,
                                int fc_width = 1024);

  void validate() const;
  std::uint64_t hash() const;
  int plane_size() const { return rows * cols; }
  int input_size() const { return in_planes * rows * cols; }
  int flat_size() const;
  int output_size() const;
};

enum class LayerKind { kConv, kDense, kOutput };

struct LayerSlice {
  LayerKind kind;
  std::size_t offset = 0;
  int out_dim = 0;  // rows of the weight matrix
  int in_dim = 0;   // cols of the weight matrix
  std::size_t size() const { return static_cast<std::size_t>(out_dim) * in_dim; }
};

/// Offsets of every weight matrix inside the flat parameter vector. Conv
/// weights are indexed [filter][ky][kx][in_plane]; dense and output weights
/// are row-major [out][in].
struct ParamLayout {
  std::vector<LayerSlice> layers;
  std::size_t total = 0;

  static ParamLayout of(const NetworkSpec& spec);
};

std::size_t param_count_actual(const NetworkSpec& spec);

struct ParamVector {
  std::vector<double> values;
  std::size_t size() const { return values.size(); }
};

struct GradientVector {
  std::vector<double> values;
  std::size_t size() const { return values.size(); }
};

/// Running per-feature-map statistics of each normalization layer.
struct NormState {
  std::vector<std::vector<double>> mean;
  std::vector<std::vector<double>> var;

  static NormState identity(const NetworkSpec& spec);
};

/// Per-feature-map first and second moments seen by a forward pass.
struct BatchMoments {
  std::vector<std::vector<double>> mean;
  std::vector<std::vector<double>> mean_sq;
  double count = 0.0;

  /// Count-weighted pooling, accumulated in the order given.
  static BatchMoments pool(std::span<const BatchMoments> parts);
};

void update_norm_state(NormState& state, const BatchMoments& moments, double decay);

/// Shared-seed dropout mask over the FC units; identical on every node that
/// knows (seed, round).
struct DropoutMask {
  std::uint64_t seed = 0;
  std::uint64_t round = 0;
  double keep_prob = 1.0;
  std::vector<std::uint8_t> keep;

  static DropoutMask draw(std::uint64_t seed, std::uint64_t round, int width,
                          double keep_prob);
  std::size_t kept() const;
};

enum class Mode { kTrain, kEval };

struct SampleRef {
  std::span<const double> input;
  std::span<const double> label;
};

/// Sum of squared errors.
double loss(std::span<const double> pred, std::span<const double> label);

class ChannelNet {
 public:
  explicit ChannelNet(NetworkSpec spec);

  const NetworkSpec& spec() const { return spec_; }
  const ParamLayout& layout() const { return layout_; }
  std::size_t param_count() const { return layout_.total; }

  /// Uniform(+-sqrt(6/(fan_in+fan_out))) per layer.
  ParamVector init_params(std::uint64_t seed) const;

  std::vector<double> forward(const ParamVector& params, const NormState& norm,
                              std::span<const double> input, const DropoutMask* mask,
                              Mode mode) const;

  /// Outputs as columns, one per input.
  Eigen::MatrixXd forward_batch(const ParamVector& params, const NormState& norm,
                                std::span<const std::span<const double>> inputs,
                                const DropoutMask* mask, Mode mode) const;

  struct GradResult {
    GradientVector grad;
    double loss = 0.0;  // batch-mean sum-of-squares
    BatchMoments moments;
  };

  /// Gradient of the batch-mean loss in train mode.
  GradResult backward(const ParamVector& params, const NormState& norm,
                      std::span<const SampleRef> batch, const DropoutMask* mask) const;

  /// 1 for every coordinate a round with this mask can touch: all conv
  /// weights, dense rows of kept units, output columns of kept units.
  std::vector<std::uint8_t> active_coordinates(const DropoutMask* mask) const;

 private:
  struct Chunk;
  void check(const ParamVector& params, const NormState& norm) const;
  void forward_chunk(const ParamVector& params, const NormState& norm,
                     std::span<const std::span<const double>> inputs, const DropoutMask* mask,
                     Mode mode, Chunk& c) const;
  std::size_t chunk_size(std::size_t batch) const;

  NetworkSpec spec_;
  ParamLayout layout_;
};

struct MomentumState {
  std::vector<double> velocity;
};

/// velocity <- mu*velocity + grad; params <- params - lr*velocity. When
/// `active` is non-empty only coordinates with active[i] != 0 are touched.
void sgd_step(ParamVector& params, const GradientVector& grad, double lr,
              MomentumState& state, double mu, std::span<const std::uint8_t> active = {});

/// Model file: "FCMD", u32 version, u64 spec hash, u64 n, f64[n] parameters,
/// u64 m, f64[m] normalization statistics (means then variances, per layer).
void write_model(const std::filesystem::path& path, const NetworkSpec& spec,
                 const ParamVector& params, const NormState& norm);
void read_model(const std::filesystem::path& path, const NetworkSpec& spec,
                ParamVector& params, NormState& norm);

}  // namespace fedchan
