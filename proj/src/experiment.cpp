#include "proxlab/experiment.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <thread>

#include "proxlab/bounded_queue.hpp"
#include "proxlab/error.hpp"

namespace proxlab {

using nlohmann::json;

namespace {

constexpr std::size_t kMaxConsecutiveRejections = 1000;

json trajectory_to_json(const Trajectory& t, std::int64_t rollout_index) {
  return {{"rollout_index", rollout_index}, {"group_id", t.group_id},
          {"prompt", t.prompt},             {"response", t.response},
          {"behav_logp", t.behav_logp},     {"versions", t.versions},
          {"reward", t.reward}};
}

}  // namespace

json step_record_to_json(const StepRecord& r, const ExperimentConfig& config) {
  const StepMetrics& m = r.metrics;
  json hist = json::object();
  for (const auto& [s, n] : m.staleness_hist) hist[std::to_string(s)] = n;
  return {
      {"schema_version", kMetricsSchemaVersion},
      {"step", m.step + 1},
      {"version", m.version},
      {"rollout_index", r.rollout_index},
      {"sim_time_s", r.sim_time_s},
      {"strategy", std::string(to_string(config.train.prox_strategy))},
      {"snapshot_timing", std::string(to_string(config.train.resolved_timing()))},
      {"objective", m.objective},
      {"objective_mb1", m.minibatch_objectives.empty() ? 0.0 : m.minibatch_objectives.front()},
      {"task_reward_mean", m.task_reward_mean},
      {"entropy_mean", m.entropy_mean},
      {"iw_max", m.iw_max},
      {"iw_min", m.iw_min},
      {"clipped_tokens", m.clipped_tokens},
      {"token_count", m.token_count},
      {"staleness_hist", hist},
      {"forward_pass_count", m.forward_pass_count},
      {"grad_norm", m.grad_norm},
      {"prox_time_s", m.prox_time_s},
      {"rejected_trajectories", r.rejected_trajectories},
      {"eval_reward", r.eval_reward ? json(*r.eval_reward) : json(nullptr)},
  };
}

double evaluate_policy(const Task& task, const PolicyParams& params, const SamplingParams& sampling,
                       std::size_t n_prompts, std::uint64_t seed) {
  const TrajectoryBatch b = group_rollout(task, params, n_prompts, 1, sampling, seed);
  double s = 0.0;
  for (const auto& t : b.trajectories) s += t.reward;
  return s / static_cast<double>(b.trajectories.size());
}

ExperimentRunner::ExperimentRunner(ExperimentConfig config)
    : config_(std::move(config)),
      task_(make_task(config_.task)),
      schedule_(config_.staleness.lag_schedule.kind(), config_.lag_seed()),
      spec_{config_.train.prompt_batch, config_.train.group_size, config_.sampling},
      trainer_(config_.train, config_.cost_model,
               init_policy(config_.init_seed(), task_.vocab_size, config_.policy.context_width,
                           config_.policy.hidden)),
      store_(static_cast<std::size_t>(config_.staleness.s_max) + 1) {
  if (auto issues = validate(config_); !issues.empty()) throw ConfigError(std::move(issues));
  store_.publish(trainer_.params());
}

StepRecord ExperimentRunner::train_on(TrajectoryBatch batch, std::int64_t rollout_index) {
  StepRecord rec;
  rec.rollout_index = rollout_index;
  sim_time_ = advance_clock(sim_time_, config_.cost_model, RolloutSample{batch.trajectories.size()});
  AdmissionResult adm = admit(std::move(batch), trainer_.params().version, config_.staleness);
  rec.rejected_trajectories = adm.rejected;
  if (adm.accepted.trajectories.empty()) {
    if (++consecutive_rejections_ > kMaxConsecutiveRejections) {
      throw VersionError("every trajectory of " + std::to_string(kMaxConsecutiveRejections) +
                         " consecutive batches was rejected by staleness admission");
    }
    rec.metrics.step = -1;
    return rec;
  }
  consecutive_rejections_ = 0;
  rec.metrics = trainer_.train_step(adm.accepted);
  sim_time_ += rec.metrics.prox_time_s;
  sim_time_ += rec.metrics.train_time_s;
  rec.sim_time_s = sim_time_;
  const auto done = static_cast<std::size_t>(trainer_.steps_done());
  if (done % config_.train.eval_every == 0 || done == config_.train.max_steps) {
    rec.eval_reward = evaluate_policy(task_, trainer_.params(), config_.sampling,
                                      config_.train.eval_prompts, config_.eval_seed());
  }
  store_.publish(trainer_.params());
  last_batch_ = std::move(adm.accepted);
  return rec;
}

std::optional<StepRecord> ExperimentRunner::step() {
  const std::int64_t index = next_rollout_++;
  TrajectoryBatch batch =
      rollout_worker_step(store_, task_, schedule_, spec_, index, config_.rollout_seed());
  StepRecord rec = train_on(std::move(batch), index);
  if (rec.metrics.step < 0) return std::nullopt;
  return rec;
}

void ExperimentRunner::run(
    const std::function<void(const StepRecord&, const TrajectoryBatch&)>& on_step) {
  if (config_.mode == RunMode::kParallel) {
    run_parallel(on_step);
    return;
  }
  while (!finished()) {
    auto rec = step();
    if (rec && on_step) on_step(*rec, last_batch_);
  }
}

void ExperimentRunner::run_parallel(
    const std::function<void(const StepRecord&, const TrajectoryBatch&)>& on_step) {
  // Workers claim rollout indices in order. Index i samples from version
  // lagged_version(i, lag_i), which is what the deterministic loop uses when
  // every batch is admitted (guaranteed by lag <= s_max). The trainer consumes
  // batches in index order, so both modes train on identical streams.
  BoundedQueue<TrajectoryBatch> queue(config_.queue_capacity);
  std::atomic<std::int64_t> next_index{next_rollout_};
  std::atomic<bool> stop{false};
  std::mutex error_mutex;
  std::exception_ptr worker_error;

  auto worker = [&] {
    try {
      while (!stop.load()) {
        const std::int64_t i = next_index.fetch_add(1);
        const std::int64_t version = lagged_version(i, schedule_.lag_for(i));
        PolicySnapshot snap = store_.wait_for(version);
        if (!snap) return;
        if (!queue.push(rollout_batch(*snap, task_, spec_, i, config_.rollout_seed()))) return;
      }
    } catch (...) {
      std::lock_guard lock(error_mutex);
      if (!worker_error) worker_error = std::current_exception();
      queue.close();
    }
  };

  std::vector<std::jthread> workers;
  for (std::size_t w = 0; w < config_.rollout_workers; ++w) workers.emplace_back(worker);

  auto shutdown = [&] {
    stop = true;
    queue.close();
    store_.close();
    workers.clear();
  };

  try {
    std::map<std::int64_t, TrajectoryBatch> pending;
    while (!finished()) {
      while (!pending.count(next_rollout_)) {
        auto item = queue.pop();
        if (!item) break;
        const std::int64_t idx = item->rollout_index;
        pending.emplace(idx, std::move(*item));
      }
      auto it = pending.find(next_rollout_);
      if (it == pending.end()) break;
      TrajectoryBatch batch = std::move(it->second);
      pending.erase(it);
      const std::int64_t index = next_rollout_++;
      StepRecord rec = train_on(std::move(batch), index);
      if (rec.metrics.step < 0) {
        throw VersionError("parallel mode: batch " + std::to_string(index) +
                           " was fully rejected; the lag schedule must respect s_max");
      }
      if (on_step) on_step(rec, last_batch_);
    }
  } catch (...) {
    shutdown();
    throw;
  }
  shutdown();
  if (worker_error) std::rethrow_exception(worker_error);
  if (!finished()) throw Error("parallel mode: rollout stream ended before max_steps");
}

std::filesystem::path output_root(const ExperimentConfig& config) {
  if (!config.output_dir.empty()) return config.output_dir;
  if (const char* env = std::getenv("PROXLAB_OUTPUT_ROOT"); env && *env) return env;
  return "runs";
}

RunResult run_experiment(const ExperimentConfig& config) {
  if (auto issues = validate(config); !issues.empty()) throw ConfigError(std::move(issues));
  RunResult result;
  result.run_dir = output_root(config) / config.resolved_run_name();
  std::filesystem::create_directories(result.run_dir / "checkpoints");
  {
    std::ofstream cfg(result.run_dir / "config.json", std::ios::binary);
    cfg << config_to_json(config).dump(2) << '\n';
  }

  std::ofstream metrics(result.run_dir / "metrics.jsonl", std::ios::binary | std::ios::trunc);
  if (!metrics) throw Error("cannot write " + (result.run_dir / "metrics.jsonl").string());
  std::ofstream trajectories;
  if (config.record_trajectories) {
    trajectories.open(result.run_dir / "trajectories.jsonl", std::ios::binary | std::ios::trunc);
  }

  ExperimentRunner runner(config);
  runner.run([&](const StepRecord& rec, const TrajectoryBatch& batch) {
    metrics << step_record_to_json(rec, config).dump() << '\n';
    if (config.record_trajectories) {
      for (const auto& t : batch.trajectories) {
        trajectories << trajectory_to_json(t, batch.rollout_index).dump() << '\n';
      }
    }
    if (rec.eval_reward) {
      std::ostringstream name;
      name << "step_" << std::setw(6) << std::setfill('0') << rec.metrics.step + 1 << ".json";
      save_checkpoint(runner.params(), result.run_dir / "checkpoints" / name.str());
    }
  });
  metrics.close();
  if (trajectories.is_open()) trajectories.close();

  result.summary = summarize(result.run_dir);
  write_summary(result.summary, result.run_dir / "summary.json");
  return result;
}

}  // namespace proxlab
