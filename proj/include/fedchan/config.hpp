// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: key = value lines grouped under [section]
// headers. Defaults depend on the scenario and on the named profile
// ("paper" or "desk"), so those two keys are resolved before anything else.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedchan/channel_model.hpp"
#include "fedchan/fl_runtime.hpp"
#include "fedchan/neural_net.hpp"
#include "fedchan/pilot_frontend.hpp"

namespace fedchan {

enum class Profile { kPaper, kDesk };
enum class SweepAxis { kNone, kKUsers, kSnrTheta, kZeta, kBits, kPilotSnr };

const char* profile_name(Profile p);
Profile parse_profile(const std::string& text);
const char* sweep_axis_name(SweepAxis a);
SweepAxis parse_sweep_axis(const std::string& text);

struct ExperimentConfig {
  Scenario scenario = Scenario::kMimo;
  Profile profile = Profile::kPaper;
  SweepAxis sweep = SweepAxis::kNone;
  std::vector<double> values;
  std::vector<std::uint64_t> seeds{1};
  std::vector<TrainMode> modes{TrainMode::kCL, TrainMode::kFL};
  std::string out_dir = "results";
  int trials = 100;           // J_T
  double test_snr_db = 20.0;  // pilot SNR of the NMSE test trials
  int lmmse_draws = 10000;
  bool baselines = true;      // LS / LMMSE rows in pilot_snr sweeps

  SystemConfig sys;
  int m_bs = 0;  // 0: equal to N_BS
  int m_ms = 0;  // 0: equal to N_MS
  std::vector<double> snr_levels_db{20.0, 25.0, 30.0};
  double rho = 1.0;
  double eps_on = 0.0;
  double eps_off = 0.0;
  int realizations = 100;  // N
  int augment = 20;        // G
  std::optional<double> label_snr_db;

  int filters = 128;
  int conv_blocks = 3;
  int fc_width = 1024;
  double keep_prob = 0.5;
  double norm_eps = 1e-5;
  double norm_decay = 0.9;

  TrainConfig train;
  CorruptionConfig corruption;

  void validate() const;
  int effective_m_bs() const { return m_bs > 0 ? m_bs : sys.n_bs; }
  int effective_m_ms() const { return m_ms > 0 ? m_ms : sys.n_ms; }
};

/// Paper or desk defaults for a scenario.
ExperimentConfig default_config(Scenario scenario, Profile profile);

/// Parses config text. `profile_override` (from the command line) replaces
/// any profile given in the text.
ExperimentConfig parse_config(const std::string& text,
                              std::optional<Profile> profile_override = std::nullopt);
ExperimentConfig load_config(const std::string& path,
                             std::optional<Profile> profile_override = std::nullopt);

}  // namespace fedchan
