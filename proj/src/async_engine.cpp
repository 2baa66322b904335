#include "proxlab/async_engine.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "proxlab/error.hpp"
#include "proxlab/random.hpp"
#include "proxlab/rl_core.hpp"

namespace proxlab {

SnapshotStore::SnapshotStore(std::size_t capacity) : capacity_(capacity == 0 ? 1 : capacity) {}

std::int64_t SnapshotStore::publish(const PolicyParams& params) {
  {
    std::lock_guard lock(mutex_);
    if (!history_.empty()) {
      const std::int64_t latest = history_.rbegin()->first;
      if (params.version != latest + 1) {
        throw VersionError("publish_snapshot: version " + std::to_string(params.version) +
                           " does not follow latest " + std::to_string(latest));
      }
    }
    history_.emplace(params.version, std::make_shared<const PolicyParams>(params));
    while (history_.size() > capacity_) history_.erase(history_.begin());
  }
  published_.notify_all();
  return params.version;
}

PolicySnapshot SnapshotStore::get(std::int64_t version) const {
  std::lock_guard lock(mutex_);
  auto it = history_.find(version);
  if (it == history_.end()) {
    std::string why = history_.empty() || version > history_.rbegin()->first
                          ? "has not been published"
                          : "was evicted (store keeps " + std::to_string(capacity_) +
                                " versions; check s_max against the lag schedule)";
    throw VersionError("snapshot version " + std::to_string(version) + " " + why);
  }
  return it->second;
}

PolicySnapshot SnapshotStore::latest() const {
  std::lock_guard lock(mutex_);
  if (history_.empty()) throw VersionError("snapshot store is empty");
  return history_.rbegin()->second;
}

std::optional<std::int64_t> SnapshotStore::latest_version() const {
  std::lock_guard lock(mutex_);
  if (history_.empty()) return std::nullopt;
  return history_.rbegin()->first;
}

std::vector<std::int64_t> SnapshotStore::versions() const {
  std::lock_guard lock(mutex_);
  std::vector<std::int64_t> out;
  for (const auto& [v, _] : history_) out.push_back(v);
  return out;
}

PolicySnapshot SnapshotStore::wait_for(std::int64_t version) const {
  std::unique_lock lock(mutex_);
  published_.wait(lock, [&] {
    return closed_ || (!history_.empty() && history_.rbegin()->first >= version);
  });
  if (closed_) return nullptr;
  auto it = history_.find(version);
  if (it == history_.end()) {
    throw VersionError("snapshot version " + std::to_string(version) + " was evicted");
  }
  return it->second;
}

void SnapshotStore::close() {
  {
    std::lock_guard lock(mutex_);
    closed_ = true;
  }
  published_.notify_all();
}

LagSchedule::LagSchedule(Kind kind, std::uint64_t seed) : kind_(std::move(kind)), seed_(seed) {
  if (const auto* f = std::get_if<FixedLag>(&kind_); f && f->lag < 0) {
    throw DomainError("FixedLag: lag must be >= 0");
  }
  if (const auto* u = std::get_if<UniformLag>(&kind_); u && u->max_lag < 0) {
    throw DomainError("UniformLag: max_lag must be >= 0");
  }
  if (const auto* t = std::get_if<TraceDriven>(&kind_)) {
    if (t->lags.empty()) throw DomainError("TraceDriven: trace is empty");
    for (auto l : t->lags) {
      if (l < 0) throw DomainError("TraceDriven: lags must be >= 0");
    }
  }
}

std::int64_t LagSchedule::lag_for(std::int64_t rollout_index) const {
  return std::visit(
      [&](const auto& k) -> std::int64_t {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, FixedLag>) {
          return k.lag;
        } else if constexpr (std::is_same_v<K, UniformLag>) {
          Rng rng(derive_seed(seed_, {static_cast<std::uint64_t>(rollout_index)}));
          return static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(k.max_lag) + 1));
        } else {
          const auto n = static_cast<std::int64_t>(k.lags.size());
          return k.lags[static_cast<std::size_t>(rollout_index % n)];
        }
      },
      kind_);
}

std::int64_t LagSchedule::max_lag() const {
  return std::visit(
      [](const auto& k) -> std::int64_t {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, FixedLag>) {
          return k.lag;
        } else if constexpr (std::is_same_v<K, UniformLag>) {
          return k.max_lag;
        } else {
          return *std::max_element(k.lags.begin(), k.lags.end());
        }
      },
      kind_);
}

TraceDriven load_lag_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read lag trace " + path.string());
  TraceDriven trace;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream is(line);
    std::int64_t lag = 0;
    if (!(is >> lag)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      throw Error("lag trace " + path.string() + ":" + std::to_string(lineno) +
                  ": expected an integer");
    }
    std::string rest;
    if (is >> rest) {
      throw Error("lag trace " + path.string() + ":" + std::to_string(lineno) +
                  ": expected one integer per line");
    }
    if (lag < 0) {
      throw Error("lag trace " + path.string() + ":" + std::to_string(lineno) +
                  ": lag must be >= 0");
    }
    trace.lags.push_back(lag);
  }
  if (trace.lags.empty()) throw Error("lag trace " + path.string() + " is empty");
  return trace;
}

std::int64_t lagged_version(std::int64_t latest_version, std::int64_t lag) {
  return std::max<std::int64_t>(0, latest_version - lag);
}

TrajectoryBatch rollout_worker_step(const SnapshotStore& store, const Task& task,
                                    const LagSchedule& schedule, const BatchSpec& spec,
                                    std::int64_t rollout_index, std::uint64_t seed) {
  const auto latest = store.latest_version();
  if (!latest) throw VersionError("rollout_worker_step: snapshot store is empty");
  const std::int64_t version = lagged_version(*latest, schedule.lag_for(rollout_index));
  PolicySnapshot snapshot = store.get(version);
  return rollout_batch(*snapshot, task, spec, rollout_index, seed);
}

TrajectoryBatch rollout_batch(const PolicyParams& snapshot, const Task& task, const BatchSpec& spec,
                              std::int64_t rollout_index, std::uint64_t seed) {
  TrajectoryBatch batch =
      group_rollout(task, snapshot, spec.n_prompts, spec.group_size, spec.sampling,
                    derive_seed(seed, {static_cast<std::uint64_t>(rollout_index)}));
  batch.rollout_index = rollout_index;
  return batch;
}

AdmissionResult admit(TrajectoryBatch batch, std::int64_t current_version,
                      const StalenessPolicy& policy) {
  AdmissionResult out;
  out.accepted.rollout_index = batch.rollout_index;
  for (auto& tr : batch.trajectories) {
    const std::vector<std::int64_t> s = staleness(tr.versions, current_version);
    const bool fresh =
        std::all_of(s.begin(), s.end(), [&](std::int64_t v) { return v <= policy.s_max; });
    if (fresh) {
      out.accepted.trajectories.push_back(std::move(tr));
    } else {
      ++out.rejected;
    }
  }
  return out;
}

double event_cost(const CostModel& cost, const ClockEvent& event) {
  return std::visit(
      [&](const auto& e) -> double {
        using E = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<E, RolloutSample>) {
          return cost.t_rollout_per_sample * static_cast<double>(e.n);
        } else if constexpr (std::is_same_v<E, Minibatch>) {
          return cost.t_train_minibatch;
        } else if constexpr (std::is_same_v<E, ProxRecompute>) {
          return cost.t_prox_recompute;
        } else {
          return cost.t_prox_loglinear;
        }
      },
      event);
}

double advance_clock(double clock, const CostModel& cost, const ClockEvent& event) {
  return clock + event_cost(cost, event);
}

}  // namespace proxlab
