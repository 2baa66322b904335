#pragma once

// Simulated asynchronous actor / learner machinery: a versioned snapshot
// store, lag schedules that decide which snapshot a rollout uses, staleness
// admission, and a cost-model clock.

#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <variant>
#include <vector>

#include "proxlab/envs.hpp"
#include "proxlab/policy.hpp"

namespace proxlab {

using PolicySnapshot = std::shared_ptr<const PolicyParams>;

// Holds the most recent `capacity` published policy versions. Safe for
// concurrent readers and one writer.
class SnapshotStore {
 public:
  explicit SnapshotStore(std::size_t capacity);

  // Copies params. The version must be latest + 1 (or anything when empty).
  std::int64_t publish(const PolicyParams& params);
  // Throws VersionError for versions never published or already evicted.
  PolicySnapshot get(std::int64_t version) const;
  PolicySnapshot latest() const;
  std::optional<std::int64_t> latest_version() const;
  std::vector<std::int64_t> versions() const;
  std::size_t capacity() const { return capacity_; }

  // Blocks until `version` has been published or close() is called.
  // Returns nullptr after close.
  PolicySnapshot wait_for(std::int64_t version) const;
  void close();

 private:
  const std::size_t capacity_;
  mutable std::mutex mutex_;
  mutable std::condition_variable published_;
  std::map<std::int64_t, PolicySnapshot> history_;
  bool closed_ = false;
};

struct FixedLag {
  std::int64_t lag = 0;
};
struct UniformLag {
  std::int64_t max_lag = 0;  // lag drawn uniformly from {0, ..., max_lag}
};
struct TraceDriven {
  std::vector<std::int64_t> lags;  // lag for rollout index i is lags[i % size]
};

class LagSchedule {
 public:
  using Kind = std::variant<FixedLag, UniformLag, TraceDriven>;

  LagSchedule() = default;
  LagSchedule(Kind kind, std::uint64_t seed = 0);

  // Requested lag for the i-th rollout batch. Deterministic in (seed, i).
  std::int64_t lag_for(std::int64_t rollout_index) const;
  std::int64_t max_lag() const;
  const Kind& kind() const { return kind_; }
  std::uint64_t seed() const { return seed_; }

 private:
  Kind kind_ = FixedLag{0};
  std::uint64_t seed_ = 0;
};

// One integer lag per line; blank lines and '#' comments ignored.
TraceDriven load_lag_trace(const std::filesystem::path& path);

struct StalenessPolicy {
  std::int64_t s_max = 0;
  LagSchedule lag_schedule;
};

struct BatchSpec {
  std::size_t n_prompts = 1;
  std::size_t group_size = 1;
  SamplingParams sampling;
};

// The snapshot version a rollout with this lag uses. Before enough versions
// exist the lag saturates at the oldest one (version 0).
std::int64_t lagged_version(std::int64_t latest_version, std::int64_t lag);

// Samples the batch for one rollout index from a given snapshot. The seed of
// every prompt and response derives from (seed, rollout_index) only.
TrajectoryBatch rollout_batch(const PolicyParams& snapshot, const Task& task, const BatchSpec& spec,
                              std::int64_t rollout_index, std::uint64_t seed);

// Samples one batch from snapshot (latest - lag). Every token is stamped with
// the snapshot's version. Throws VersionError if that version was evicted.
TrajectoryBatch rollout_worker_step(const SnapshotStore& store, const Task& task,
                                    const LagSchedule& schedule, const BatchSpec& spec,
                                    std::int64_t rollout_index, std::uint64_t seed);

struct AdmissionResult {
  TrajectoryBatch accepted;
  std::size_t rejected = 0;
};

// Per-trajectory, all-or-nothing: a trajectory is dropped if any of its tokens
// is more than s_max versions behind current_version.
AdmissionResult admit(TrajectoryBatch batch, std::int64_t current_version,
                      const StalenessPolicy& policy);

// Simulated seconds charged per event.
struct CostModel {
  double t_prox_recompute = 10.0;   // one proximal forward pass per training step
  double t_prox_loglinear = 0.0012; // proximal interpolation per training step
  double t_train_minibatch = 2.5;
  double t_rollout_per_sample = 0.02;
};

struct RolloutSample {
  std::size_t n = 0;
};
struct Minibatch {};
struct ProxRecompute {};
struct ProxLogLinear {};
using ClockEvent = std::variant<RolloutSample, Minibatch, ProxRecompute, ProxLogLinear>;

double event_cost(const CostModel& cost, const ClockEvent& event);
double advance_clock(double clock, const CostModel& cost, const ClockEvent& event);

}  // namespace proxlab
