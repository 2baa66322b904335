#include "proxlab/cli.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "proxlab/config.hpp"
#include "proxlab/diagnostics.hpp"
#include "proxlab/error.hpp"
#include "proxlab/experiment.hpp"
#include "proxlab/metrics_io.hpp"

namespace proxlab {

namespace {

using nlohmann::json;

void print_config_error(std::ostream& err, const ConfigError& e) {
  err << "invalid configuration:\n";
  for (const auto& issue : e.issues()) err << "  - " << issue << '\n';
}

// Runs fn and maps exceptions to exit codes.
template <class Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    print_config_error(err, e);
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

void print_summary(std::ostream& out, const RunResult& r) {
  const RunSummary& s = r.summary;
  out << "run_dir " << r.run_dir.string() << '\n'
      << "strategy " << s.strategy << "  steps " << s.steps << "  final_reward "
      << format_double(s.final_reward) << "  sim_time_s " << format_double(s.total_sim_time_s)
      << "  prox_forward_passes " << s.forward_pass_total << '\n';
}

struct TrainArgs {
  std::string config;
  std::string strategy;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  std::string out;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    std::vector<std::string> overrides = a.overrides;
    if (!a.strategy.empty()) overrides.push_back("train.prox_strategy=\"" + a.strategy + "\"");
    if (a.seed) overrides.push_back("seed=" + std::to_string(*a.seed));
    ExperimentConfig config = load_config(a.config, overrides);
    if (!a.out.empty()) config.output_dir = a.out;
    print_summary(out, run_experiment(config));
    return kExitOk;
  });
}

struct SweepArgs {
  std::string config;
  std::vector<std::string> strategies;
  std::vector<std::int64_t> lags;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> overrides;
  std::string out;
  std::size_t jobs = 1;
};

struct SweepRun {
  std::string strategy;
  std::optional<std::int64_t> lag;
  std::uint64_t seed = 0;
  ExperimentConfig config;
  RunSummary summary;
};

int cmd_sweep(const SweepArgs& a, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const std::filesystem::path base_dir = std::filesystem::path(a.config).parent_path();
    json base = read_config_json(a.config);
    for (const auto& o : a.overrides) apply_override(base, o);
    const ExperimentConfig base_config = config_from_json(base, base_dir);

    std::vector<std::string> strategies = a.strategies;
    if (strategies.empty()) strategies.emplace_back(to_string(base_config.train.prox_strategy));
    std::vector<std::optional<std::int64_t>> lags;
    for (auto l : a.lags) lags.emplace_back(l);
    if (lags.empty()) lags.emplace_back(std::nullopt);
    std::vector<std::uint64_t> seeds = a.seeds;
    if (seeds.empty()) seeds.push_back(base_config.seed);

    const std::string prefix =
        base_config.run_name.empty() ? base_config.task.name : base_config.run_name;
    std::vector<SweepRun> runs;
    std::vector<std::string> issues;
    for (const auto& strategy : strategies) {
      for (const auto& lag : lags) {
        for (std::uint64_t seed : seeds) {
          json j = base;
          // Every cell of the grid uses the listed seed unchanged, so runs that
          // differ only in strategy or lag share initialization and prompts.
          std::string name = prefix + "-" + strategy;
          apply_override(j, "train.prox_strategy=\"" + strategy + "\"");
          apply_override(j, "seed=" + std::to_string(seed));
          if (lag) {
            name += "-lag" + std::to_string(*lag);
            apply_override(j, "staleness.lag_schedule={\"kind\":\"fixed\",\"lag\":" +
                                  std::to_string(*lag) + "}");
            if (*lag > base_config.staleness.s_max) {
              apply_override(j, "staleness.s_max=" + std::to_string(*lag));
            }
          }
          name += "-seed" + std::to_string(seed);
          apply_override(j, "run_name=\"" + name + "\"");
          try {
            SweepRun run{strategy, lag, seed, config_from_json(j, base_dir), {}};
            if (!a.out.empty()) run.config.output_dir = a.out;
            runs.push_back(std::move(run));
          } catch (const ConfigError& e) {
            for (const auto& i : e.issues()) issues.push_back(name + ": " + i);
          }
        }
      }
    }
    if (!issues.empty()) throw ConfigError(std::move(issues));

    std::atomic<std::size_t> next{0};
    std::mutex mutex;
    std::exception_ptr failure;
    auto worker = [&] {
      for (std::size_t i = next++; i < runs.size(); i = next++) {
        try {
          runs[i].summary = run_experiment(runs[i].config).summary;
        } catch (...) {
          std::lock_guard lock(mutex);
          if (!failure) failure = std::current_exception();
          next = runs.size();
        }
      }
    };
    {
      std::vector<std::jthread> pool;
      const std::size_t n = std::clamp<std::size_t>(a.jobs, 1, runs.size());
      for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);

    const std::filesystem::path root = output_root(runs.front().config);
    std::filesystem::create_directories(root);
    std::ostringstream csv;
    csv << "run_id,strategy,lag,seed,steps,final_reward,total_sim_time_s,task_reward_mean,"
           "entropy_mean,iw_max_mean,iw_min_mean,clipped_tokens_mean,prox_time_total_s,"
           "forward_pass_total\n";
    for (const auto& r : runs) {
      const RunSummary& s = r.summary;
      csv << r.config.run_name << ',' << r.strategy << ','
          << (r.lag ? std::to_string(*r.lag) : std::string()) << ',' << r.seed << ',' << s.steps
          << ',' << format_double(s.final_reward) << ',' << format_double(s.total_sim_time_s)
          << ',' << format_double(s.task_reward_mean) << ',' << format_double(s.entropy_mean)
          << ',' << format_double(s.iw_max_mean) << ',' << format_double(s.iw_min_mean) << ','
          << format_double(s.clipped_tokens_mean) << ',' << format_double(s.prox_time_total_s)
          << ',' << s.forward_pass_total << '\n';
    }
    const auto csv_path = root / "sweep_summary.csv";
    std::ofstream f(csv_path, std::ios::binary);
    if (!f) throw Error("cannot write " + csv_path.string());
    f << csv.str();
    out << runs.size() << " runs, summary " << csv_path.string() << '\n';
    return kExitOk;
  });
}

int cmd_gradcheck(std::size_t trials, double tolerance, std::uint64_t seed, std::ostream& out,
                  std::ostream& err) {
  if (trials == 0) {
    err << "gradcheck: --trials must be >= 1\n";
    return kExitUsage;
  }
  return guarded(err, [&] {
    const GradcheckReport r = run_gradcheck(trials, tolerance, seed);
    for (const auto& s : r.strategies) {
      out << std::left << std::setw(10) << to_string(s.strategy) << " trials " << s.trials
          << "  scored " << s.scored << "  boundary " << s.boundary << "  failures "
          << s.failures << "  worst_rel_error " << std::scientific << std::setprecision(3)
          << s.worst_rel_error << std::defaultfloat << " (trial " << s.worst_trial << ", "
          << s.worst_layer << ")\n";
    }
    out << (r.passed() ? "PASS" : "FAIL") << " tolerance " << tolerance << '\n';
    return r.passed() ? kExitOk : kExitCheckFailed;
  });
}

int cmd_bench(std::size_t hidden, std::size_t tokens, std::size_t repeats, bool as_json,
              std::ostream& out, std::ostream& err) {
  if (repeats < 3) {
    err << "bench-prox: --repeats must be >= 3\n";
    return kExitUsage;
  }
  return guarded(err, [&] {
    const BenchReport r = bench_prox(hidden, tokens, repeats);
    if (as_json) {
      out << json{{"hidden", r.hidden},
                  {"tokens", r.tokens},
                  {"repeats", r.repeats},
                  {"recompute_median_s", r.recompute_median_s},
                  {"loglinear_median_s", r.loglinear_median_s},
                  {"ratio", r.ratio()},
                  {"recompute_forward_pass_count", r.recompute_forward_passes},
                  {"loglinear_forward_pass_count", r.loglinear_forward_passes}}
                 .dump(2)
          << '\n';
      return kExitOk;
    }
    out << "hidden " << r.hidden << "  tokens " << r.tokens << "  repeats " << r.repeats << '\n'
        << "recompute  median " << std::scientific << std::setprecision(3)
        << r.recompute_median_s << " s  forward_pass_count " << r.recompute_forward_passes
        << '\n'
        << "loglinear  median " << r.loglinear_median_s << " s  forward_pass_count "
        << r.loglinear_forward_passes << '\n'
        << std::defaultfloat << std::setprecision(6) << "ratio " << r.ratio() << '\n';
    return kExitOk;
  });
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"proxlab: decoupled PPO with staleness-aware proximal policies on toy tasks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "proxlab 0.1.0");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Run one experiment");
  c_train->add_option("--config", train.config, "Config file")->required();
  c_train->add_option("--strategy", train.strategy, "coupled | recompute | loglinear");
  c_train->add_option("--seed", train.seed, "Base seed override");
  c_train->add_option("--set", train.overrides, "Dotted override, e.g. train.eps_clip=0.3");
  c_train->add_option("--out", train.out, "Output root (default $PROXLAB_OUTPUT_ROOT or ./runs)");

  SweepArgs sweep;
  auto* c_sweep = app.add_subcommand("sweep", "Run the strategy x lag x seed grid");
  c_sweep->add_option("--config", sweep.config, "Config file")->required();
  c_sweep->add_option("--strategies", sweep.strategies)->delimiter(',');
  c_sweep->add_option("--lags", sweep.lags, "Fixed lags; s_max is raised to fit")->delimiter(',');
  c_sweep->add_option("--seeds", sweep.seeds)->delimiter(',');
  c_sweep->add_option("--set", sweep.overrides, "Dotted override applied to every run");
  c_sweep->add_option("--out", sweep.out, "Output root");
  c_sweep->add_option("--jobs", sweep.jobs, "Runs executed concurrently")->check(CLI::PositiveNumber);

  std::size_t trials = 100;
  double tolerance = 1e-5;
  std::uint64_t gc_seed = 0;
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference check of the objectives");
  c_grad->add_option("--trials", trials, "Instances per strategy");
  c_grad->add_option("--tolerance", tolerance, "Max relative error");
  c_grad->add_option("--seed", gc_seed);

  std::size_t hidden = 256, tokens = 1024, repeats = 5;
  bool bench_json = false;
  auto* c_bench = app.add_subcommand("bench-prox", "Time proximal log-prob computation");
  c_bench->add_option("--hidden,--policy-size", hidden, "Hidden width");
  c_bench->add_option("--tokens,--batch", tokens, "Tokens per batch");
  c_bench->add_option("--repeats", repeats, "Repeats (>= 3)");
  c_bench->add_flag("--json", bench_json, "Print the report as JSON");

  std::vector<std::string> run_dirs;
  auto* c_sum = app.add_subcommand("summarize", "Recompute and print summaries of run dirs");
  c_sum->add_option("runs", run_dirs)->required();

  std::vector<std::string> export_dirs;
  std::string quantity = "eval_reward", x_axis = "step", export_out;
  auto* c_export = app.add_subcommand("export", "Export a per-step quantity as CSV");
  c_export->add_option("runs", export_dirs)->required();
  c_export->add_option("--quantity", quantity);
  c_export->add_option("--x", x_axis)->check(CLI::IsMember({"step", "sim_time"}));
  c_export->add_option("--out", export_out, "CSV path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (*c_train) {
    if (!std::filesystem::exists(train.config)) {
      err << "config file not found: " << train.config << '\n';
      return kExitUsage;
    }
    return cmd_train(train, out, err);
  }
  if (*c_sweep) {
    if (!std::filesystem::exists(sweep.config)) {
      err << "config file not found: " << sweep.config << '\n';
      return kExitUsage;
    }
    return cmd_sweep(sweep, out, err);
  }
  if (*c_grad) return cmd_gradcheck(trials, tolerance, gc_seed, out, err);
  if (*c_bench) return cmd_bench(hidden, tokens, repeats, bench_json, out, err);
  if (*c_sum) {
    return guarded(err, [&] {
      for (const auto& d : run_dirs) {
        json j = summary_to_json(summarize(d));
        j["run_dir"] = d;
        out << j.dump() << '\n';
      }
      return kExitOk;
    });
  }
  if (*c_export) {
    return guarded(err, [&] {
      std::vector<std::filesystem::path> dirs(export_dirs.begin(), export_dirs.end());
      std::string csv;
      try {
        csv = export_curves(dirs, quantity, x_axis == "step" ? XAxis::kStep : XAxis::kSimTime);
      } catch (const DomainError& e) {
        err << "export: " << e.what() << '\n';
        return kExitUsage;
      }
      if (export_out.empty()) {
        out << csv;
      } else {
        std::ofstream f(export_out, std::ios::binary);
        if (!f) throw Error("cannot write " + export_out);
        f << csv;
      }
      return kExitOk;
    });
  }
  return kExitUsage;
}

}  // namespace proxlab
