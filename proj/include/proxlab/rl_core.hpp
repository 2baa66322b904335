#pragma once

// Surrogate objectives for coupled PPO and the decoupled (behavior / proximal)
// loss, the staleness-aware log-linear proximal approximation, and GRPO
// group-normalized advantages.
//
// All objectives are returned in the "maximize" orientation as written in the
// usual PPO literature; callers negate them for gradient descent.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "proxlab/autodiff.hpp"

namespace proxlab {

enum class ProxStrategy { kCoupled, kRecompute, kLogLinear };
enum class SnapshotTiming { kPerTrainingStep, kPerMinibatch };

std::string_view to_string(ProxStrategy s);
std::string_view to_string(SnapshotTiming t);
ProxStrategy parse_strategy(std::string_view name);
SnapshotTiming parse_snapshot_timing(std::string_view name);

struct LossReport {
  double objective = 0.0;
  std::size_t clipped_tokens = 0;
  // Extrema of the end-to-end ratio pi_theta / pi_behav.
  double iw_max = 0.0;
  double iw_min = 0.0;
  std::size_t token_count = 0;
};

struct Surrogate {
  ad::Value objective;  // scalar, differentiable w.r.t. logp_theta only
  LossReport report;
};

// current_version - versions, elementwise. Throws VersionError on any negative
// entry (data stamped with a version the trainer has not reached).
std::vector<std::int64_t> staleness(std::span<const std::int64_t> versions,
                                    std::int64_t current_version);

// 0 for s = 0, 1/s for s >= 1.
double alpha(std::int64_t s);
std::vector<double> alpha(std::span<const std::int64_t> s);

// alpha * old_logp + (1 - alpha) * cur_logp with alpha from the per-token
// staleness. The result is plain data: it carries no gradient path.
std::vector<double> approx_prox_logp(std::span<const double> old_logp,
                                     std::span<const double> cur_logp,
                                     std::span<const std::int64_t> versions,
                                     std::int64_t current_version);

// mean_t min(r_t A_t, clip(r_t, 1-eps, 1+eps) A_t),  r_t = exp(logp_theta - logp_old).
// logp_old and adv are detached internally.
Surrogate coupled_ppo_loss(const ad::Value& logp_theta, const ad::Value& logp_old,
                           const ad::Value& adv, double eps);

// mean_t w_t min(rho_t A_t, clip(rho_t, 1-eps, 1+eps) A_t)
//   w_t = exp(logp_prox - logp_behav), rho_t = exp(logp_theta - logp_prox).
// logp_prox, logp_behav and adv are detached internally.
Surrogate decoupled_loss(const ad::Value& logp_theta, const ad::Value& logp_prox,
                         const ad::Value& logp_behav, const ad::Value& adv, double eps);

// (r_i - mean_g) / (std_g + eps_std) with population std over each group.
std::vector<double> grpo_advantages(std::span<const double> rewards,
                                    std::span<const std::int64_t> group_ids,
                                    double eps_std = 1e-6);

}  // namespace proxlab
