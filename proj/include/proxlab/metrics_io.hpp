#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace proxlab {

inline constexpr int kMetricsSchemaVersion = 1;

// Per-step numeric fields that can be exported as curves.
const std::vector<std::string>& curve_quantities();

struct RunSummary {
  std::string strategy;
  std::size_t steps = 0;
  double total_sim_time_s = 0.0;
  double final_reward = 0.0;  // mean of the last `final_window` eval rewards
  double task_reward_mean = 0.0;
  double entropy_mean = 0.0;
  double iw_max_mean = 0.0;
  double iw_min_mean = 0.0;
  double clipped_tokens_mean = 0.0;
  double prox_time_total_s = 0.0;
  std::size_t forward_pass_total = 0;

  friend bool operator==(const RunSummary&, const RunSummary&) = default;
};

// Parses metrics.jsonl. Throws SchemaError on a malformed or truncated line,
// an unexpected schema_version, or a missing required field.
std::vector<nlohmann::json> read_metrics(const std::filesystem::path& metrics_file);

// Throws SchemaError for an empty run.
RunSummary summarize_records(const std::vector<nlohmann::json>& records, std::size_t final_window);
// Reads run_dir/metrics.jsonl; the eval window comes from run_dir/config.json
// (train.final_window), default 5 when absent.
RunSummary summarize(const std::filesystem::path& run_dir);

nlohmann::json summary_to_json(const RunSummary& s);
RunSummary summary_from_json(const nlohmann::json& j);
void write_summary(const RunSummary& s, const std::filesystem::path& path);
RunSummary read_summary(const std::filesystem::path& path);

enum class XAxis { kStep, kSimTime };

// Long-format CSV with header "run_id,x,y", one row per step per run (for
// eval_reward, one row per eval step). run_id is the run directory name.
// Throws DomainError for an unknown quantity, naming the valid ones.
std::string export_curves(const std::vector<std::filesystem::path>& run_dirs,
                          const std::string& quantity, XAxis x_axis);

// Shortest round-trip decimal form, as used in every CSV this project writes.
std::string format_double(double v);

}  // namespace proxlab
