// SPDX-License-Identifier: Apache-2.0
//
// fedchan: dataset generation, training, evaluation, sweeps and reports.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedchan/baselines_metrics.hpp"
#include "fedchan/config.hpp"
#include "fedchan/csv.hpp"
#include "fedchan/dataset_io.hpp"
#include "fedchan/experiment.hpp"
#include "fedchan/selfcheck.hpp"

namespace fs = std::filesystem;
using namespace fedchan;

namespace {

struct GlobalOpts {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string profile;
  std::string scenario = "mmimo";
};

ExperimentConfig resolve(const GlobalOpts& g) {
  std::optional<Profile> profile;
  if (!g.profile.empty()) profile = parse_profile(g.profile);
  ExperimentConfig cfg = g.config.empty()
                             ? default_config(parse_scenario(g.scenario), profile.value_or(Profile::kDesk))
                             : load_config(g.config, profile);
  if (g.seed) cfg.seeds = {*g.seed};
  if (!g.out.empty()) cfg.out_dir = g.out;
  cfg.validate();
  return cfg;
}

std::vector<TrainMode> resolve_modes(const ExperimentConfig& cfg, const std::string& mode) {
  if (mode.empty() || mode == "both") return cfg.modes;
  return {parse_train_mode(mode)};
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

fs::path dataset_path(const fs::path& dir, std::uint64_t seed, int user) {
  return dir / ("seed" + std::to_string(seed) + "_user" + std::to_string(user) + ".fcds");
}

std::vector<LocalDataset> load_or_generate(const ExperimentConfig& cfg, std::uint64_t seed,
                                           const std::string& data_dir) {
  if (data_dir.empty()) return generate_datasets(cfg, seed);
  std::vector<LocalDataset> out;
  for (int k = 0; k < cfg.sys.k_users; ++k) out.push_back(read_dataset(dataset_path(data_dir, seed, k)));
  return out;
}

int cmd_generate(const ExperimentConfig& cfg) {
  const fs::path dir = fs::path(cfg.out_dir) / "datasets";
  fs::create_directories(dir);
  for (std::uint64_t seed : cfg.seeds) {
    const auto data = generate_datasets(cfg, seed);
    std::size_t total = 0;
    for (const LocalDataset& ds : data) {
      write_dataset(dataset_path(dir, seed, ds.user), ds);
      total += ds.samples.size();
    }
    std::cout << "seed " << seed << ": " << data.size() << " users, " << total
              << " samples -> " << dir.string() << '\n';
  }
  return 0;
}

int cmd_train(const ExperimentConfig& cfg, const std::string& mode, const std::string& data_dir) {
  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir);
  const std::uint64_t seed = cfg.seeds.front();
  const auto data = load_or_generate(cfg, seed, data_dir);
  const ChannelNet net(make_network_spec(cfg));
  std::cout << "network: " << net.param_count() << " parameters\n";
  for (TrainMode m : resolve_modes(cfg, mode)) {
    TrainConfig tc = cfg.train;
    tc.mode = m;
    tc.seed = seed;
    const TrainResult r = train(net, data, tc, cfg.corruption, [&](int t, const ParamVector&) {
      if (t % 10 == 0) std::cerr << train_mode_name(m) << " round " << t << '\n';
    });
    const std::string name = train_mode_name(m);
    write_model(dir / ("model_" + name + ".fcmd"), net.spec(), r.params, r.norm);
    auto os = open_out(dir / ("rounds_" + name + ".csv"));
    os << kRoundsHeader << '\n';
    write_round_rows(os, r.logs, m, cfg.corruption, seed);
    std::cout << name << ": " << r.logs.size() << " rounds";
    if (!r.logs.empty()) std::cout << ", final val_rmse " << format_double(r.logs.back().val_rmse);
    if (r.diverged) std::cout << " (" << r.diagnostic << ")";
    std::cout << '\n';
  }
  return 0;
}

int cmd_evaluate(const ExperimentConfig& cfg, const std::string& mode, const std::string& model_dir) {
  const fs::path out(cfg.out_dir);
  const fs::path models = model_dir.empty() ? out : fs::path(model_dir);
  fs::create_directories(out);
  const std::uint64_t seed = cfg.seeds.front();
  const std::vector<double> snrs =
      cfg.sweep == SweepAxis::kPilotSnr ? cfg.values : std::vector<double>{cfg.test_snr_db};
  const ChannelNet net(make_network_spec(cfg));

  auto os = open_out(out / "evaluate.csv");
  os << kResultsHeader << '\n';
  auto row_for = [&](const std::string& name, double snr, double nmse) {
    ResultRow r;
    r.scenario = scenario_name(cfg.scenario);
    r.mode = name;
    r.sweep_axis = sweep_axis_name(SweepAxis::kPilotSnr);
    r.sweep_value = snr;
    r.seed = seed;
    r.round = name == "LS" || name == "LMMSE" ? 0 : cfg.train.rounds;
    r.loss = NAN;
    r.val_rmse = NAN;
    r.nmse = nmse;
    r.snr_theta_db = cfg.corruption.snr_theta_db;
    r.bits = cfg.corruption.quant_bits;
    r.zeta = cfg.corruption.erasure_frac;
    r.k_users = cfg.sys.k_users;
    write_result_row(os, r);
    std::cout << name << " @ " << format_double(snr) << " dB: NMSE " << format_double(nmse) << '\n';
  };

  for (TrainMode m : resolve_modes(cfg, mode)) {
    const fs::path path = models / ("model_" + std::string(train_mode_name(m)) + ".fcmd");
    if (!fs::exists(path)) {
      std::cerr << "skipping " << train_mode_name(m) << ": no model at " << path.string() << '\n';
      continue;
    }
    ParamVector params;
    NormState norm;
    read_model(path, net.spec(), params, norm);
    for (double snr : snrs) {
      const NmseResult r = evaluate_nmse(cfg, snr, seed, TrainedModel{&net, &params, &norm}, false, nullptr);
      row_for(train_mode_name(m), snr, r.network);
    }
  }
  if (cfg.baselines) {
    const auto covs = user_covariances(cfg, seed);
    for (double snr : snrs) {
      const NmseResult r = evaluate_nmse(cfg, snr, seed, std::nullopt, true, &covs);
      row_for("LS", snr, r.ls);
      row_for("LMMSE", snr, r.lmmse);
    }
  }
  return 0;
}

int cmd_sweep(const ExperimentConfig& cfg) {
  const auto rows = run_experiment(cfg, std::cerr);
  std::cout << rows.size() << " rows -> " << (fs::path(cfg.out_dir) / "results.csv").string() << '\n';
  return 0;
}

int cmd_report(const ExperimentConfig& cfg) {
  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir);
  const OverheadReport o = overhead_report(cfg.scenario, cfg.sys, cfg.effective_m_bs(),
                                           total_dataset_size(cfg), cfg.train.rounds);
  {
    auto os = open_out(dir / "overhead.csv");
    os << "scenario,p_paper,dataset,rounds,k_users,t_cl,t_fl,ratio\n";
    os << scenario_name(o.scenario) << ',' << o.p_paper << ',' << total_dataset_size(cfg) << ','
       << cfg.train.rounds << ',' << cfg.sys.k_users << ',' << o.t_cl << ',' << o.t_fl << ','
       << format_double(o.ratio) << '\n';
  }
  const ComplexityReport c = complexity_report(cfg.sys.n_ms, cfg.sys.n_bs);
  {
    auto os = open_out(dir / "complexity.csv");
    os << "n_ms,n_bs,c_cl,c_fcl,c_total,c_ls,c_mmse\n";
    os << cfg.sys.n_ms << ',' << cfg.sys.n_bs << ',' << format_double(c.c_cl) << ','
       << format_double(c.c_fcl) << ',' << format_double(c.c_total) << ','
       << format_double(c.c_ls) << ',' << format_double(c.c_mmse) << '\n';
  }
  std::cout << "T_CL " << o.t_cl << ", T_FL " << o.t_fl << ", ratio " << format_double(o.ratio)
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated channel estimation simulator"};
  app.require_subcommand(1);
  GlobalOpts g;
  app.add_option("--config", g.config, "Config file (key = value with [section] headers)");
  app.add_option("--seed", g.seed, "Run a single seed instead of the configured list");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--profile", g.profile, "Preset: desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--scenario", g.scenario, "mmimo or irs, when no config file is given")
      ->check(CLI::IsMember({"mmimo", "irs"}));

  std::string mode, data_dir, model_dir;
  auto* gen = app.add_subcommand("generate", "Write per-user datasets");
  auto* trn = app.add_subcommand("train", "Train CL and/or FL models on one seed");
  trn->add_option("--mode", mode, "CL, FL or both")->check(CLI::IsMember({"CL", "FL", "both"}));
  trn->add_option("--data", data_dir, "Read datasets written by generate instead of regenerating");
  auto* ev = app.add_subcommand("evaluate", "NMSE of saved models and LS/LMMSE baselines");
  ev->add_option("--mode", mode, "CL, FL or both")->check(CLI::IsMember({"CL", "FL", "both"}));
  ev->add_option("--models", model_dir, "Directory holding model_<mode>.fcmd (default: --out)");
  auto* sw = app.add_subcommand("sweep", "Run the configured sweep and write results.csv");
  auto* sc = app.add_subcommand("selfcheck", "Run the built-in golden checks");
  auto* rep = app.add_subcommand("report", "Write overhead.csv and complexity.csv");
  for (CLI::App* sub : {gen, trn, ev, sw, sc, rep}) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    if (sc->parsed()) {
      const SelfcheckReport r = selfcheck();
      print_report(std::cout, r);
      return r.all_passed() ? 0 : 1;
    }
    const ExperimentConfig cfg = resolve(g);
    if (gen->parsed()) return cmd_generate(cfg);
    if (trn->parsed()) return cmd_train(cfg, mode, data_dir);
    if (ev->parsed()) return cmd_evaluate(cfg, mode, model_dir);
    if (sw->parsed()) return cmd_sweep(cfg);
    if (rep->parsed()) return cmd_report(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
