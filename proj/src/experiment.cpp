// SPDX-License-Identifier: Apache-2.0
#include "fedchan/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "fedchan/baselines_metrics.hpp"
#include "fedchan/rng.hpp"

namespace fedchan {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

int mode_rank(const std::string& mode) {
  static const char* order[] = {"CL", "FL", "LS", "LMMSE"};
  for (int i = 0; i < 4; ++i) {
    if (mode == order[i]) return i;
  }
  return 4;
}

std::string value_tag(double v) {
  std::string s = format_double(v);
  std::replace(s.begin(), s.end(), '.', 'p');
  std::replace(s.begin(), s.end(), '-', 'm');
  return s;
}

ResultRow base_row(const ExperimentConfig& cfg, double value, std::uint64_t seed) {
  ResultRow r;
  r.scenario = scenario_name(cfg.scenario);
  r.sweep_axis = sweep_axis_name(cfg.sweep);
  r.sweep_value = value;
  r.seed = seed;
  r.snr_theta_db = cfg.corruption.snr_theta_db;
  r.bits = cfg.corruption.quant_bits;
  r.zeta = cfg.corruption.erasure_frac;
  r.k_users = cfg.sys.k_users;
  return r;
}

struct Job {
  std::size_t point = 0;
  std::uint64_t seed = 0;
  std::optional<TrainMode> mode;  // empty: LS/LMMSE baselines
};

struct JobOutput {
  std::vector<ResultRow> rows;
  std::string rounds_file;
  std::string rounds_text;
};

}  // namespace

ExperimentConfig apply_sweep_value(const ExperimentConfig& base, double value) {
  ExperimentConfig c = base;
  switch (base.sweep) {
    case SweepAxis::kNone:
      break;
    case SweepAxis::kKUsers: {
      const auto k = static_cast<int>(value);
      const long long total = static_cast<long long>(base.augment) * base.sys.k_users;
      if (total % k != 0) {
        throw std::invalid_argument("k_users sweep: G*K = " + std::to_string(total) +
                                    " is not divisible by K = " + std::to_string(k));
      }
      c.sys.k_users = k;
      c.augment = static_cast<int>(total / k);
      break;
    }
    case SweepAxis::kSnrTheta:
      c.corruption.snr_theta_db = value;
      break;
    case SweepAxis::kZeta:
      c.corruption.erasure_frac = value;
      break;
    case SweepAxis::kBits:
      c.corruption.quant_bits = static_cast<int>(value);
      break;
    case SweepAxis::kPilotSnr:
      c.test_snr_db = value;
      break;
  }
  c.validate();
  return c;
}

PilotConfig make_pilots(const ExperimentConfig& cfg) {
  PilotConfig p = cfg.scenario == Scenario::kMimo
                      ? PilotConfig::dft(cfg.sys.n_bs, cfg.sys.n_ms, cfg.effective_m_bs(),
                                         cfg.effective_m_ms())
                      : PilotConfig::irs_identity(cfg.sys.n_bs);
  p.snr_levels_db = cfg.snr_levels_db;
  p.rho = cfg.rho;
  p.eps_on = cfg.eps_on;
  p.eps_off = cfg.eps_off;
  return p;
}

NetworkSpec make_network_spec(const ExperimentConfig& cfg) {
  NetworkSpec s;
  if (cfg.scenario == Scenario::kMimo) {
    s.rows = cfg.sys.n_ms;
    s.cols = cfg.sys.n_bs;
    s.out_len = 2 * cfg.sys.n_ms * cfg.sys.n_bs;
  } else {
    s.rows = cfg.sys.n_irs + 1;
    s.cols = cfg.effective_m_bs();
    s.out_len = 2 * cfg.sys.n_bs * (cfg.sys.n_irs + 1);
  }
  s.conv_filters.assign(cfg.conv_blocks, cfg.filters);
  s.fc_width = cfg.fc_width;
  s.keep_prob = cfg.keep_prob;
  s.norm_eps = cfg.norm_eps;
  s.norm_decay = cfg.norm_decay;
  s.validate();
  return s;
}

CollectOptions make_collect_options(const ExperimentConfig& cfg) {
  CollectOptions o;
  o.realizations = cfg.realizations;
  o.augment = cfg.augment;
  o.label_noise_db = cfg.label_snr_db;
  return o;
}

std::size_t total_dataset_size(const ExperimentConfig& cfg) {
  return static_cast<std::size_t>(cfg.sys.k_users) *
         local_dataset_size(cfg.scenario, cfg.sys.m_sub, cfg.realizations, cfg.augment,
                            cfg.snr_levels_db.size());
}

std::vector<LocalDataset> generate_datasets(const ExperimentConfig& cfg, std::uint64_t seed) {
  const PilotConfig pilots = make_pilots(cfg);
  const CollectOptions opts = make_collect_options(cfg);
  std::vector<LocalDataset> out;
  out.reserve(cfg.sys.k_users);
  for (int k = 0; k < cfg.sys.k_users; ++k) {
    out.push_back(collect_local_dataset(cfg.scenario, cfg.sys, pilots, k, opts, seed));
  }
  return out;
}

std::vector<CMatrix> user_covariances(const ExperimentConfig& cfg, std::uint64_t seed) {
  std::vector<CMatrix> covs;
  for (int k = 0; k < cfg.sys.k_users; ++k) {
    covs.push_back(cfg.scenario == Scenario::kMimo
                       ? channel_covariance_mimo(cfg.sys, k, cfg.lmmse_draws, seed)
                       : channel_covariance_irs(cfg.sys, k, cfg.lmmse_draws, seed));
  }
  return covs;
}

NmseResult evaluate_nmse(const ExperimentConfig& cfg, double snr_db, std::uint64_t seed,
                         std::optional<TrainedModel> model, bool with_ls,
                         const std::vector<CMatrix>* lmmse_cov) {
  const SystemConfig& sys = cfg.sys;
  const PilotConfig pilots = make_pilots(cfg);
  const int k_users = sys.k_users;
  if (lmmse_cov && static_cast<int>(lmmse_cov->size()) != k_users) {
    throw std::invalid_argument("evaluate_nmse: need one covariance per user");
  }
  const std::uint64_t test_seed = derive_seed(seed, Stream::kTestTrial);
  NmseAccumulator net_acc, ls_acc, lmmse_acc;
  std::vector<NmseAccumulator> per_user(k_users);

  std::vector<std::vector<double>> inputs;
  std::vector<CMatrix> truths;
  std::vector<int> owners;
  for (int i = 0; i < cfg.trials; ++i) {
    const auto rs = derive_seed(test_seed, Stream::kRealization, {static_cast<std::uint64_t>(i)});
    inputs.clear();
    truths.clear();
    owners.clear();
    for (int k = 0; k < k_users; ++k) {
      const auto noise_seed = derive_seed(
          test_seed, Stream::kPilotNoise,
          {static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(k)});
      if (cfg.scenario == Scenario::kMimo) {
        const MimoChannel h = ofdm_channel(gen_user_paths(sys, k, rs), sys);
        const double nv = noise_variance_for_snr(mean_entry_power(h), snr_db, pilots.rho);
        const auto y = receive_pilots_mimo(h, pilots, nv, noise_seed);
        for (int m = 0; m < sys.m_sub; ++m) {
          const CMatrix& truth = h.subcarriers[m];
          if (model) {
            inputs.push_back(three_plane_tensor(preprocess_mimo(y[m], pilots)));
            truths.push_back(truth);
            owners.push_back(k);
          }
          if (with_ls) ls_acc.add(truth, ls_estimate_mimo(y[m], pilots));
          if (lmmse_cov) lmmse_acc.add(truth, lmmse_estimate_mimo(y[m], pilots, (*lmmse_cov)[k], nv));
        }
      } else {
        const IrsChannelSet chs = gen_irs_channels(sys, k, rs);
        const double nv = noise_variance_for_snr(mean_entry_power(chs), snr_db, pilots.rho);
        const CRowVector yd = receive_direct_irs(chs, pilots, nv, noise_seed);
        const CMatrix ys = receive_cascaded_sweep(chs, pilots, nv, noise_seed);
        const CMatrix truth = irs_label_matrix(chs);
        if (model) {
          inputs.push_back(make_sample_irs(yd, ys, chs).input);
          truths.push_back(truth);
          owners.push_back(k);
        }
        if (with_ls) ls_acc.add(truth, ls_estimate_irs(yd, ys, pilots));
        if (lmmse_cov) lmmse_acc.add(truth, lmmse_estimate_irs(yd, ys, pilots, (*lmmse_cov)[k], nv));
      }
    }
    if (model && !inputs.empty()) {
      std::vector<std::span<const double>> spans(inputs.begin(), inputs.end());
      const Eigen::MatrixXd out =
          model->net->forward_batch(*model->params, *model->norm, spans, nullptr, Mode::kEval);
      for (std::size_t j = 0; j < truths.size(); ++j) {
        const auto col = static_cast<Eigen::Index>(j);
        const std::vector<double> pred(out.col(col).data(), out.col(col).data() + out.rows());
        const CMatrix est = unvectorize_label(pred, static_cast<int>(truths[j].rows()),
                                              static_cast<int>(truths[j].cols()));
        net_acc.add(truths[j], est);
        per_user[owners[j]].add(truths[j], est);
      }
    }
  }

  NmseResult r;
  r.network = model ? net_acc.value() : kNaN;
  r.ls = with_ls ? ls_acc.value() : kNaN;
  r.lmmse = lmmse_cov ? lmmse_acc.value() : kNaN;
  if (model) {
    for (const auto& acc : per_user) r.network_per_user.push_back(acc.value());
  }
  return r;
}

unsigned worker_count() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("FEDCHAN_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(v));
  }
  return n;
}

std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  const bool pilot_sweep = cfg.sweep == SweepAxis::kPilotSnr;

  // Training points: one per sweep value, or a single point when the sweep
  // only changes the test pilot SNR.
  std::vector<double> point_values;
  if (cfg.sweep == SweepAxis::kNone || pilot_sweep) {
    point_values.push_back(kNaN);
  } else {
    point_values = cfg.values;
  }
  std::vector<ExperimentConfig> points;
  for (double v : point_values) {
    points.push_back(std::isnan(v) ? cfg : apply_sweep_value(cfg, v));
  }

  std::vector<Job> jobs;
  for (std::size_t p = 0; p < points.size(); ++p) {
    for (std::uint64_t seed : cfg.seeds) {
      for (TrainMode m : cfg.modes) jobs.push_back({p, seed, m});
      if (pilot_sweep && cfg.baselines) jobs.push_back({p, seed, std::nullopt});
    }
  }

  std::vector<JobOutput> outputs(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;

  auto run_job = [&](std::size_t j) {
    const Job& job = jobs[j];
    const ExperimentConfig& pc = points[job.point];
    const double value = point_values[job.point];
    JobOutput& out = outputs[j];
    const std::vector<double> eval_snrs = pilot_sweep ? cfg.values : std::vector<double>{pc.test_snr_db};

    if (!job.mode) {
      const auto covs = user_covariances(pc, job.seed);
      for (double snr : eval_snrs) {
        const NmseResult r = evaluate_nmse(pc, snr, job.seed, std::nullopt, true, &covs);
        for (const char* name : {"LS", "LMMSE"}) {
          ResultRow row = base_row(pc, snr, job.seed);
          row.mode = name;
          row.loss = kNaN;
          row.val_rmse = kNaN;
          row.nmse = std::string(name) == "LS" ? r.ls : r.lmmse;
          out.rows.push_back(row);
        }
      }
      std::lock_guard lock(log_mu);
      log << "baselines seed " << job.seed << " done\n";
      return;
    }

    const ChannelNet net(make_network_spec(pc));
    const auto datasets = generate_datasets(pc, job.seed);
    TrainConfig tc = pc.train;
    tc.mode = *job.mode;
    tc.seed = job.seed;
    const TrainResult tr = train(net, datasets, tc, pc.corruption);
    const TrainedModel model{&net, &tr.params, &tr.norm};
    const RoundLog* last = tr.logs.empty() ? nullptr : &tr.logs.back();
    const RoundLog* last_ok = nullptr;
    for (const RoundLog& l : tr.logs) {
      if (!l.diverged) last_ok = &l;
    }
    for (double snr : eval_snrs) {
      ResultRow row = base_row(pc, pilot_sweep ? snr : value, job.seed);
      row.mode = train_mode_name(*job.mode);
      row.round = last ? last->round : 0;
      row.loss = last ? last->loss : kNaN;
      row.val_rmse = last_ok ? last_ok->val_rmse
                             : validation_rmse(net, tr.params, tr.norm, validation_refs(datasets));
      row.nmse = evaluate_nmse(pc, snr, job.seed, model, false, nullptr).network;
      out.rows.push_back(row);
    }
    std::ostringstream rounds;
    write_round_rows(rounds, tr.logs, *job.mode, pc.corruption, job.seed);
    out.rounds_text = rounds.str();
    out.rounds_file = std::isnan(value) ? "rounds.csv"
                                        : "rounds_" + std::string(sweep_axis_name(cfg.sweep)) +
                                              "_" + value_tag(value) + ".csv";
    std::lock_guard lock(log_mu);
    log << train_mode_name(*job.mode) << " seed " << job.seed;
    if (!std::isnan(value)) log << " " << sweep_axis_name(cfg.sweep) << "=" << format_double(value);
    log << ": " << tr.logs.size() << " rounds";
    if (tr.diverged) log << " (" << tr.diagnostic << ")";
    log << "\n";
  };

  const unsigned n_workers = std::min<unsigned>(worker_count(), static_cast<unsigned>(jobs.size()));
  std::vector<std::thread> workers;
  for (unsigned w = 0; w < n_workers; ++w) {
    workers.emplace_back([&] {
      for (std::size_t j = next++; j < jobs.size(); j = next++) {
        try {
          run_job(j);
        } catch (...) {
          errors[j] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<ResultRow> rows;
  for (const JobOutput& o : outputs) rows.insert(rows.end(), o.rows.begin(), o.rows.end());
  auto value_key = [](double v) { return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v; };
  std::stable_sort(rows.begin(), rows.end(), [&](const ResultRow& a, const ResultRow& b) {
    const double va = value_key(a.sweep_value);
    const double vb = value_key(b.sweep_value);
    if (va != vb) return va < vb;
    if (a.seed != b.seed) return a.seed < b.seed;
    return mode_rank(a.mode) < mode_rank(b.mode);
  });

  const std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "results.csv", std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + (dir / "results.csv").string());
    os << kResultsHeader << '\n';
    for (const ResultRow& r : rows) write_result_row(os, r);
    if (!os) throw std::runtime_error("failed writing " + (dir / "results.csv").string());
  }

  std::map<std::string, std::vector<std::size_t>> by_file;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    if (!outputs[j].rounds_file.empty()) by_file[outputs[j].rounds_file].push_back(j);
  }
  for (auto& [file, idx] : by_file) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      if (jobs[a].seed != jobs[b].seed) return jobs[a].seed < jobs[b].seed;
      return *jobs[a].mode < *jobs[b].mode;
    });
    std::ofstream os(dir / file, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + (dir / file).string());
    os << kRoundsHeader << '\n';
    for (std::size_t j : idx) os << outputs[j].rounds_text;
  }
  return rows;
}

}  // namespace fedchan
