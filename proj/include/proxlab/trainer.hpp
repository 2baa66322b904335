#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "proxlab/async_engine.hpp"
#include "proxlab/envs.hpp"
#include "proxlab/policy.hpp"
#include "proxlab/rl_core.hpp"

namespace proxlab {

struct AdamConfig {
  double learning_rate = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  std::size_t prompt_batch = 64;
  std::size_t group_size = 4;
  std::size_t n_minibatches = 4;
  double eps_clip = 0.2;
  AdamConfig adam;
  std::size_t max_steps = 300;
  ProxStrategy prox_strategy = ProxStrategy::kLogLinear;
  // Unset: per_training_step for recompute, per_minibatch for loglinear.
  std::optional<SnapshotTiming> snapshot_timing;
  std::size_t eval_every = 10;
  std::size_t eval_prompts = 128;
  // Number of trailing eval records averaged into the final reward.
  std::size_t final_window = 5;

  SnapshotTiming resolved_timing() const;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t t = 0;
};

AdamState make_adam_state(const PolicyParams& params);

// Bias-corrected Adam step on every tensor. Throws NonFiniteError (listing the
// flat parameter indices) if any gradient is not finite; params are untouched then.
void adam_update(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state,
                 const AdamConfig& config);

// Token-level view of a set of trajectories: one entry per response token.
// Holds spans into the trajectories, which must outlive it.
struct TokenBatch {
  std::vector<SequenceView> seqs;
  std::vector<double> behav_logp;
  std::vector<std::int64_t> versions;
  std::vector<double> advantages;

  // Trajectories [begin, end) with per-trajectory advantages broadcast to tokens.
  static TokenBatch from(const TrajectoryBatch& batch, std::span<const double> traj_advantages,
                         std::size_t begin, std::size_t end);
  std::size_t size() const { return behav_logp.size(); }
};

struct ProxResult {
  std::vector<double> logp;
  std::size_t forward_passes = 0;
};

// Proximal log-probs for the tokens, gradient-free.
//   kCoupled:   the behavior log-probs, copied.
//   kRecompute: one forward pass of `live` over the tokens.
//   kLogLinear: interpolation of behavior and `target_logp` by staleness;
//               target_logp must hold the target policy's log-probs at the
//               configured snapshot timing.
ProxResult compute_prox(ProxStrategy strategy, const TokenBatch& tokens, const PolicyParams& live,
                        std::int64_t current_version, std::span<const double> target_logp = {});

struct StepMetrics {
  std::int64_t step = 0;
  std::int64_t version = 0;  // trainer version the step started from
  double objective = 0.0;    // mean over minibatches
  std::vector<double> minibatch_objectives;
  double task_reward_mean = 0.0;
  double entropy_mean = 0.0;
  double iw_max = 0.0;
  double iw_min = 0.0;
  std::size_t clipped_tokens = 0;
  std::size_t token_count = 0;
  std::map<std::int64_t, std::size_t> staleness_hist;
  // Forward passes whose only purpose was the proximal policy.
  std::size_t forward_pass_count = 0;
  double grad_norm = 0.0;  // mean L2 norm of the minibatch gradients
  std::size_t minibatches = 0;
  double prox_time_s = 0.0;   // simulated
  double train_time_s = 0.0;  // simulated, excludes prox
};

class Trainer {
 public:
  Trainer(TrainConfig config, CostModel cost, PolicyParams initial);

  // One training step: GRPO advantages, proximal log-probs, m minibatch Adam
  // updates, version + 1. On a non-finite loss or gradient the parameters and
  // optimizer state are restored and NonFiniteError propagates.
  StepMetrics train_step(const TrajectoryBatch& batch);

  const PolicyParams& params() const { return params_; }
  const AdamState& adam() const { return adam_; }
  const TrainConfig& config() const { return config_; }
  std::int64_t steps_done() const { return steps_; }

 private:
  StepMetrics run_step(const TrajectoryBatch& batch);
  // Target log-probs at the start of the step for LogLinear with
  // per_training_step timing.
  ProxResult step_start_target_logp(const TokenBatch& tokens) const;

  TrainConfig config_;
  CostModel cost_;
  PolicyParams params_;
  AdamState adam_;
  std::int64_t steps_ = 0;
};

}  // namespace proxlab
