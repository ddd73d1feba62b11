// SPDX-License-Identifier: Apache-2.0
#include "fedchan/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace fedchan {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw std::invalid_argument("empty list element");
    out.push_back(item);
  }
  if (out.empty()) throw std::invalid_argument("empty list");
  return out;
}

long long to_int(const std::string& s) {
  long long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw std::invalid_argument("expected an integer, got '" + s + "'");
  }
  return v;
}

int to_int32(const std::string& s) {
  const long long v = to_int(s);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw std::invalid_argument("integer out of range: " + s);
  }
  return static_cast<int>(v);
}

double to_double(const std::string& s) {
  if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || std::isnan(v)) {
    throw std::invalid_argument("expected a number, got '" + s + "'");
  }
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw std::invalid_argument("expected true or false, got '" + s + "'");
}

std::uint64_t to_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw std::invalid_argument("expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

template <typename T, typename F>
std::vector<T> to_list(const std::string& s, F conv) {
  std::vector<T> out;
  for (const auto& item : split_list(s)) out.push_back(conv(item));
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

struct KeySpec {
  const char* section;
  Setter set;
};

const std::map<std::string, KeySpec>& key_table() {
  using C = ExperimentConfig;
  using S = const std::string&;
  static const std::map<std::string, KeySpec> table = {
      // scenario and profile are consumed before defaults are built.
      {"scenario", {"experiment", [](C&, S) {}}},
      {"profile", {"experiment", [](C&, S) {}}},
      {"sweep", {"experiment", [](C& c, S v) { c.sweep = parse_sweep_axis(v); }}},
      {"values", {"experiment", [](C& c, S v) { c.values = to_list<double>(v, to_double); }}},
      {"seeds", {"experiment", [](C& c, S v) { c.seeds = to_list<std::uint64_t>(v, to_u64); }}},
      {"modes", {"experiment", [](C& c, S v) { c.modes = to_list<TrainMode>(v, parse_train_mode); }}},
      {"out_dir", {"experiment", [](C& c, S v) { c.out_dir = v; }}},
      {"trials", {"experiment", [](C& c, S v) { c.trials = to_int32(v); }}},
      {"test_snr_db", {"experiment", [](C& c, S v) { c.test_snr_db = to_double(v); }}},
      {"lmmse_draws", {"experiment", [](C& c, S v) { c.lmmse_draws = to_int32(v); }}},
      {"baselines", {"experiment", [](C& c, S v) { c.baselines = to_bool(v); }}},

      {"n_bs", {"system", [](C& c, S v) { c.sys.n_bs = to_int32(v); }}},
      {"n_ms", {"system", [](C& c, S v) { c.sys.n_ms = to_int32(v); }}},
      {"n_irs", {"system", [](C& c, S v) { c.sys.n_irs = to_int32(v); }}},
      {"m_sub", {"system", [](C& c, S v) { c.sys.m_sub = to_int32(v); }}},
      {"cp_len", {"system", [](C& c, S v) { c.sys.cp_len = to_int32(v); }}},
      {"paths", {"system", [](C& c, S v) { c.sys.n_paths = to_int32(v); }}},
      {"paths_b", {"system", [](C& c, S v) { c.sys.n_paths_b = to_int32(v); }}},
      {"paths_s", {"system", [](C& c, S v) { c.sys.n_paths_s = to_int32(v); }}},
      {"paths_irs", {"system", [](C& c, S v) { c.sys.n_paths_irs = to_int32(v); }}},
      {"sym_period", {"system", [](C& c, S v) { c.sys.sym_period = to_double(v); }}},
      {"k_users", {"system", [](C& c, S v) { c.sys.k_users = to_int32(v); }}},
      {"antenna_spacing", {"system", [](C& c, S v) { c.sys.antenna_spacing = to_double(v); }}},

      {"m_bs", {"pilot", [](C& c, S v) { c.m_bs = to_int32(v); }}},
      {"m_ms", {"pilot", [](C& c, S v) { c.m_ms = to_int32(v); }}},
      {"snr_levels_db", {"pilot", [](C& c, S v) { c.snr_levels_db = to_list<double>(v, to_double); }}},
      {"rho", {"pilot", [](C& c, S v) { c.rho = to_double(v); }}},
      {"eps_on", {"pilot", [](C& c, S v) { c.eps_on = to_double(v); }}},
      {"eps_off", {"pilot", [](C& c, S v) { c.eps_off = to_double(v); }}},
      {"realizations", {"pilot", [](C& c, S v) { c.realizations = to_int32(v); }}},
      {"augment", {"pilot", [](C& c, S v) { c.augment = to_int32(v); }}},
      {"label_snr_db",
       {"pilot", [](C& c, S v) {
          if (v == "none") {
            c.label_snr_db.reset();
          } else {
            c.label_snr_db = to_double(v);
          }
        }}},

      {"filters", {"network", [](C& c, S v) { c.filters = to_int32(v); }}},
      {"conv_blocks", {"network", [](C& c, S v) { c.conv_blocks = to_int32(v); }}},
      {"fc_width", {"network", [](C& c, S v) { c.fc_width = to_int32(v); }}},
      {"keep_prob", {"network", [](C& c, S v) { c.keep_prob = to_double(v); }}},
      {"norm_eps", {"network", [](C& c, S v) { c.norm_eps = to_double(v); }}},
      {"norm_decay", {"network", [](C& c, S v) { c.norm_decay = to_double(v); }}},

      {"rounds", {"train", [](C& c, S v) { c.train.rounds = to_int32(v); }}},
      {"lr", {"train", [](C& c, S v) { c.train.lr = to_double(v); }}},
      {"momentum", {"train", [](C& c, S v) { c.train.momentum = to_double(v); }}},
      {"batch_size", {"train", [](C& c, S v) { c.train.batch_size = to_int32(v); }}},
      {"local_batches", {"train", [](C& c, S v) { c.train.local_batches = to_int32(v); }}},
      {"track_validation", {"train", [](C& c, S v) { c.train.track_validation = to_bool(v); }}},
      {"divergence_factor", {"train", [](C& c, S v) { c.train.divergence_factor = to_double(v); }}},

      {"snr_theta_db", {"corruption", [](C& c, S v) { c.corruption.snr_theta_db = to_double(v); }}},
      {"quant_bits",
       {"corruption", [](C& c, S v) {
          if (v == "none") {
            c.corruption.quant_bits.reset();
          } else {
            c.corruption.quant_bits = to_int32(v);
          }
        }}},
      {"erasure_frac", {"corruption", [](C& c, S v) { c.corruption.erasure_frac = to_double(v); }}},
      {"uplink", {"corruption", [](C& c, S v) { c.corruption.uplink = to_bool(v); }}},
      {"downlink", {"corruption", [](C& c, S v) { c.corruption.downlink = to_bool(v); }}},
      {"snr_convention",
       {"corruption", [](C& c, S v) {
          if (v == "verbatim") {
            c.corruption.snr_convention = SnrConvention::kVerbatim;
          } else if (v == "per_coordinate") {
            c.corruption.snr_convention = SnrConvention::kPerCoordinate;
          } else {
            throw std::invalid_argument("expected verbatim or per_coordinate, got '" + v + "'");
          }
        }}},
      {"erasure_mode",
       {"corruption", [](C& c, S v) {
          if (v == "fraction") {
            c.corruption.erasure_mode = ErasureMode::kFraction;
          } else if (v == "literal_count") {
            c.corruption.erasure_mode = ErasureMode::kLiteralCount;
          } else {
            throw std::invalid_argument("expected fraction or literal_count, got '" + v + "'");
          }
        }}},
  };
  return table;
}

struct Entry {
  int line;
  std::string key;
  std::string value;
};

std::string where(int line) { return "config line " + std::to_string(line) + ": "; }

}  // namespace

const char* profile_name(Profile p) { return p == Profile::kPaper ? "paper" : "desk"; }

Profile parse_profile(const std::string& text) {
  if (text == "paper") return Profile::kPaper;
  if (text == "desk") return Profile::kDesk;
  throw std::invalid_argument("unknown profile '" + text + "' (expected paper or desk)");
}

const char* sweep_axis_name(SweepAxis a) {
  switch (a) {
    case SweepAxis::kNone: return "none";
    case SweepAxis::kKUsers: return "k_users";
    case SweepAxis::kSnrTheta: return "snr_theta";
    case SweepAxis::kZeta: return "zeta";
    case SweepAxis::kBits: return "bits";
    case SweepAxis::kPilotSnr: return "pilot_snr";
  }
  return "none";
}

SweepAxis parse_sweep_axis(const std::string& text) {
  for (SweepAxis a : {SweepAxis::kNone, SweepAxis::kKUsers, SweepAxis::kSnrTheta,
                      SweepAxis::kZeta, SweepAxis::kBits, SweepAxis::kPilotSnr}) {
    if (text == sweep_axis_name(a)) return a;
  }
  throw std::invalid_argument("unknown sweep axis '" + text +
                              "' (expected k_users, snr_theta, zeta, bits or pilot_snr)");
}

ExperimentConfig default_config(Scenario scenario, Profile profile) {
  ExperimentConfig c;
  c.scenario = scenario;
  c.profile = profile;
  SystemConfig& s = c.sys;
  if (profile == Profile::kPaper) {
    s.n_bs = scenario == Scenario::kMimo ? 128 : 64;
    s.n_ms = 32;
    s.n_irs = 64;
    s.m_sub = 16;
    s.cp_len = 4;
    s.k_users = 8;
    c.realizations = 100;
    c.augment = scenario == Scenario::kMimo ? 20 : 320;
  } else {
    s.n_bs = 16;
    s.n_ms = 4;
    s.n_irs = 4;
    s.m_sub = 4;
    s.cp_len = 2;
    s.k_users = 4;
    c.realizations = 50;
    c.augment = scenario == Scenario::kMimo ? 2 : 8;
    c.filters = 16;
    c.fc_width = 256;
  }
  return c;
}

void ExperimentConfig::validate() const {
  sys.validate();
  train.validate();
  corruption.validate();
  if (seeds.empty()) throw std::invalid_argument("at least one seed is required");
  if (modes.empty()) throw std::invalid_argument("at least one training mode is required");
  if (trials < 1) throw std::invalid_argument("trials must be >= 1");
  if (lmmse_draws < 1) throw std::invalid_argument("lmmse_draws must be >= 1");
  if (realizations < 1 || augment < 1) throw std::invalid_argument("realizations and augment must be >= 1");
  if (snr_levels_db.empty()) throw std::invalid_argument("snr_levels_db must not be empty");
  if (m_bs < 0 || m_bs > sys.n_bs) throw std::invalid_argument("m_bs must be in [0, n_bs]");
  if (m_ms < 0 || m_ms > sys.n_ms) throw std::invalid_argument("m_ms must be in [0, n_ms]");
  if (scenario == Scenario::kIrs && effective_m_bs() != sys.n_bs) {
    throw std::invalid_argument("the IRS scenario uses S_IRS = I, so m_bs must equal n_bs");
  }
  if (filters < 1 || conv_blocks < 0 || fc_width < 0) {
    throw std::invalid_argument("network sizes must be positive (conv_blocks, fc_width >= 0)");
  }
  if (sweep == SweepAxis::kNone && !values.empty()) {
    throw std::invalid_argument("values given without a sweep axis");
  }
  if (sweep != SweepAxis::kNone && values.empty()) {
    throw std::invalid_argument(std::string("sweep ") + sweep_axis_name(sweep) + " needs values");
  }
  for (double v : values) {
    if (sweep == SweepAxis::kKUsers || sweep == SweepAxis::kBits) {
      if (v != std::floor(v) || v < 1) {
        throw std::invalid_argument("k_users and bits sweep values must be positive integers");
      }
    }
    if (sweep == SweepAxis::kZeta && !(v >= 0.0 && v <= 0.5)) {
      throw std::invalid_argument("zeta sweep values must be in [0, 0.5]");
    }
  }
}

ExperimentConfig parse_config(const std::string& text, std::optional<Profile> profile_override) {
  const auto& table = key_table();
  std::vector<Entry> entries;
  std::map<std::string, int> seen;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string s = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw std::invalid_argument(where(line) + "malformed section header");
      section = trim(s.substr(1, s.size() - 2));
      static const char* known[] = {"experiment", "system", "pilot", "network", "train", "corruption"};
      if (std::find(std::begin(known), std::end(known), section) == std::end(known)) {
        throw std::invalid_argument(where(line) + "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw std::invalid_argument(where(line) + "expected key = value");
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    const auto it = table.find(key);
    if (it == table.end()) throw std::invalid_argument(where(line) + "unknown key '" + key + "'");
    if (!section.empty() && section != it->second.section) {
      throw std::invalid_argument(where(line) + "key '" + key + "' belongs in [" +
                                  it->second.section + "], not [" + section + "]");
    }
    if (value.empty()) throw std::invalid_argument(where(line) + "missing value for '" + key + "'");
    if (auto prev = seen.find(key); prev != seen.end()) {
      if (key == "sweep") {
        throw std::invalid_argument(where(line) + "conflicting sweep axes (only one sweep per run; first given on line " +
                                    std::to_string(prev->second) + ")");
      }
      throw std::invalid_argument(where(line) + "duplicate key '" + key + "' (first on line " +
                                  std::to_string(prev->second) + ")");
    }
    seen[key] = line;
    entries.push_back({line, key, value});
  }

  Scenario scenario = Scenario::kMimo;
  Profile profile = Profile::kPaper;
  for (const Entry& e : entries) {
    try {
      if (e.key == "scenario") scenario = parse_scenario(e.value);
      if (e.key == "profile") profile = parse_profile(e.value);
    } catch (const std::exception& ex) {
      throw std::invalid_argument(where(e.line) + ex.what());
    }
  }
  if (profile_override) profile = *profile_override;

  ExperimentConfig cfg = default_config(scenario, profile);
  for (const Entry& e : entries) {
    try {
      table.at(e.key).set(cfg, e.value);
    } catch (const std::exception& ex) {
      throw std::invalid_argument(where(e.line) + e.key + ": " + ex.what());
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path, std::optional<Profile> profile_override) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read config file: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), profile_override);
}

}  // namespace fedchan
