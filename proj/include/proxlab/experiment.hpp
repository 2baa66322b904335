#pragma once

// The rollout -> admission -> train loop, in deterministic (single thread,
// simulated clock) or parallel (rollout worker threads + bounded queue) mode,
// and the run-directory writer around it.
//
// Run directory layout:
//   config.json          resolved configuration after overrides
//   metrics.jsonl        one record per training step
//   summary.json         RunSummary of metrics.jsonl
//   checkpoints/         policy checkpoints every eval_every steps
//   trajectories.jsonl   only with record_trajectories

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include <json.hpp>

#include "proxlab/async_engine.hpp"
#include "proxlab/config.hpp"
#include "proxlab/metrics_io.hpp"
#include "proxlab/trainer.hpp"

namespace proxlab {

struct StepRecord {
  StepMetrics metrics;
  double sim_time_s = 0.0;  // cumulative, after this step
  std::int64_t rollout_index = 0;
  std::size_t rejected_trajectories = 0;
  std::optional<double> eval_reward;
};

nlohmann::json step_record_to_json(const StepRecord& r, const ExperimentConfig& config);

// Mean reward of the policy on eval_prompts fresh prompts, one sample each,
// with a fixed seed so successive evaluations see the same prompts.
double evaluate_policy(const Task& task, const PolicyParams& params, const SamplingParams& sampling,
                       std::size_t n_prompts, std::uint64_t seed);

class ExperimentRunner {
 public:
  explicit ExperimentRunner(ExperimentConfig config);

  // One deterministic-mode step: sample the next rollout batch from the lagged
  // snapshot, charge its cost, admit it, train, publish. Returns nullopt when a
  // batch was fully rejected (no training happened).
  std::optional<StepRecord> step();
  bool finished() const { return trainer_.steps_done() >= static_cast<std::int64_t>(config_.train.max_steps); }

  // Runs to max_steps in the configured mode; the callback sees every record.
  void run(const std::function<void(const StepRecord&, const TrajectoryBatch&)>& on_step = {});

  const PolicyParams& params() const { return trainer_.params(); }
  const SnapshotStore& store() const { return store_; }
  const ExperimentConfig& config() const { return config_; }
  const Task& task() const { return task_; }
  double sim_time() const { return sim_time_; }

 private:
  StepRecord train_on(TrajectoryBatch batch, std::int64_t rollout_index);
  void run_parallel(const std::function<void(const StepRecord&, const TrajectoryBatch&)>& on_step);

  ExperimentConfig config_;
  Task task_;
  LagSchedule schedule_;
  BatchSpec spec_;
  Trainer trainer_;
  SnapshotStore store_;
  double sim_time_ = 0.0;
  std::int64_t next_rollout_ = 0;
  std::size_t consecutive_rejections_ = 0;
  TrajectoryBatch last_batch_;
};

struct RunResult {
  std::filesystem::path run_dir;
  RunSummary summary;
};

std::filesystem::path output_root(const ExperimentConfig& config);

// Runs the experiment and writes its run directory under output_root().
RunResult run_experiment(const ExperimentConfig& config);

}  // namespace proxlab
