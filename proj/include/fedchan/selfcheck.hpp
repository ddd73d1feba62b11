// SPDX-License-Identifier: Apache-2.0
//
// Fast built-in checks: closed-form counts, a finite-difference gradient
// check, the noise-free preprocessing identity and FL/CL agreement on a tiny
// problem. Hooks let tests swap in broken pieces and watch the report fail.

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fedchan/fl_runtime.hpp"
#include "fedchan/neural_net.hpp"
#include "fedchan/pilot_frontend.hpp"

namespace fedchan {

using GradientFn = std::function<ChannelNet::GradResult(
    const ChannelNet&, const ParamVector&, const NormState&, std::span<const SampleRef>,
    const DropoutMask*)>;
using PreprocessFn = std::function<CMatrix(const CMatrix&, const PilotConfig&)>;

/// Gradients below this magnitude are compared in absolute terms.
inline constexpr double kGradFloor = 1e-6;

struct GradCheck {
  double rel_error = 0.0;  // max_i |a_i - fd_i| / max(|a_i|, |fd_i|, kGradFloor)
  double max_abs_error = 0.0;
  std::size_t coords = 0;
  std::size_t nonzero = 0;      // coordinates with a nonzero analytic gradient
  std::size_t kink_coords = 0;  // coordinates that needed a smaller step
};

/// Central differences with step `step` on every parameter of a small network
/// (two samples, random running statistics, a dropout mask keeping at least
/// one unit).
GradCheck gradient_check(const NetworkSpec& spec, std::uint64_t seed, double step,
                         const GradientFn& grad = {});

/// Largest ||G - sqrt(rho) H|| / ||H|| over `channels` noise-free desk-sized
/// channels with square DFT pilots.
double preprocess_identity_error(int channels, std::uint64_t seed, const PreprocessFn& fn = {});

/// Largest |theta_FL - theta_CL| over every round of full-batch training
/// from the same initialization. `fl_channel` corrupts only the FL run.
double fl_cl_trajectory_gap(const ChannelNet& net, std::span<const LocalDataset> data, int rounds,
                            std::uint64_t seed, const CorruptionConfig& fl_channel = {});

struct SelfcheckHooks {
  std::function<std::uint64_t()> param_count;
  GradientFn gradient;
  PreprocessFn preprocess;
  CorruptionConfig fl_channel;
};

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

struct SelfcheckReport {
  std::vector<CheckResult> checks;
  bool all_passed() const;
};

SelfcheckReport selfcheck(const SelfcheckHooks& hooks = {});
void print_report(std::ostream& os, const SelfcheckReport& report);

}  // namespace fedchan
