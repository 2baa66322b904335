#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "proxlab/async_engine.hpp"
#include "proxlab/policy.hpp"
#include "proxlab/trainer.hpp"

namespace proxlab {

inline constexpr int kConfigSchemaVersion = 1;

struct TaskConfig {
  std::string name = "digit_sum";  // digit_sum | bandit
  std::size_t n_digits = 2;
  std::vector<double> arm_means = {0.1, 0.9};
};

struct PolicyConfig {
  std::size_t context_width = 4;
  std::size_t hidden = 128;
};

enum class RunMode { kDeterministic, kParallel };

struct ExperimentConfig {
  std::string run_name;  // empty: derived from task, strategy and seed
  TaskConfig task;
  PolicyConfig policy;
  TrainConfig train;
  StalenessPolicy staleness{4, LagSchedule(UniformLag{4})};
  // Recorded for provenance when the lag trace came from a file.
  std::string lag_trace_file;
  CostModel cost_model;
  SamplingParams sampling;
  RunMode mode = RunMode::kDeterministic;
  std::size_t rollout_workers = 2;
  std::size_t queue_capacity = 4;
  // Base seed; init, rollout, lag and eval streams are derived from it.
  std::uint64_t seed = 1;
  // Empty: $PROXLAB_OUTPUT_ROOT, else ./runs.
  std::string output_dir;
  bool record_trajectories = false;

  std::string resolved_run_name() const;
  std::uint64_t init_seed() const;
  std::uint64_t rollout_seed() const;
  std::uint64_t lag_seed() const;
  std::uint64_t eval_seed() const;
};

// Every problem with the configuration, empty when valid.
std::vector<std::string> validate(const ExperimentConfig& config);

nlohmann::json config_to_json(const ExperimentConfig& config);
// Strict: unknown keys, wrong types and validation failures are all collected
// and thrown together as one ConfigError. Relative lag trace paths resolve
// against base_dir.
ExperimentConfig config_from_json(const nlohmann::json& j,
                                  const std::filesystem::path& base_dir = {});

// Applies "a.b.c=value". The value is parsed as JSON when possible, otherwise
// taken as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

// Reads a JSON config file (// and /* */ comments allowed), applies overrides,
// then parses. Throws ConfigError.
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides = {});
nlohmann::json read_config_json(const std::filesystem::path& path);

Task make_task(const TaskConfig& config);

}  // namespace proxlab
