#include "proxlab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "proxlab/error.hpp"

namespace proxlab {

SnapshotTiming TrainConfig::resolved_timing() const {
  if (snapshot_timing) return *snapshot_timing;
  return prox_strategy == ProxStrategy::kLogLinear ? SnapshotTiming::kPerMinibatch
                                                   : SnapshotTiming::kPerTrainingStep;
}

AdamState make_adam_state(const PolicyParams& params) {
  AdamState s;
  for (const auto& t : params.layers) {
    s.m.emplace_back(t.numel(), 0.0);
    s.v.emplace_back(t.numel(), 0.0);
  }
  return s;
}

void adam_update(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state,
                 const AdamConfig& config) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ShapeError("adam_update: parameter, gradient and state counts differ");
  }
  std::vector<std::size_t> bad;
  std::size_t offset = 0;
  for (std::size_t l = 0; l < params.size(); ++l) {
    if (!(params[l].shape == grads[l].shape) || state.m[l].size() != params[l].numel()) {
      throw ShapeError("adam_update: shape mismatch " + params[l].shape.to_string() + " vs " +
                       grads[l].shape.to_string());
    }
    for (std::size_t i = 0; i < grads[l].numel(); ++i) {
      if (!std::isfinite(grads[l][i])) bad.push_back(offset + i);
    }
    offset += params[l].numel();
  }
  if (!bad.empty()) {
    const std::string msg = "adam_update: non-finite gradient at parameter " + std::to_string(bad[0]);
    throw NonFiniteError(msg, std::move(bad));
  }

  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t l = 0; l < params.size(); ++l) {
    auto& w = params[l].values;
    auto& m = state.m[l];
    auto& v = state.v[l];
    const auto& g = grads[l].values;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
}

TokenBatch TokenBatch::from(const TrajectoryBatch& batch, std::span<const double> traj_advantages,
                            std::size_t begin, std::size_t end) {
  if (traj_advantages.size() != batch.trajectories.size()) {
    throw ShapeError("TokenBatch: one advantage per trajectory required");
  }
  TokenBatch tb;
  for (std::size_t i = begin; i < end; ++i) {
    const Trajectory& tr = batch.trajectories[i];
    if (tr.behav_logp.size() != tr.response.size() || tr.versions.size() != tr.response.size()) {
      throw ShapeError("TokenBatch: trajectory " + std::to_string(i) +
                       " has mismatched per-token arrays");
    }
    tb.seqs.push_back({tr.prompt, tr.response});
    tb.behav_logp.insert(tb.behav_logp.end(), tr.behav_logp.begin(), tr.behav_logp.end());
    tb.versions.insert(tb.versions.end(), tr.versions.begin(), tr.versions.end());
    tb.advantages.insert(tb.advantages.end(), tr.response.size(), traj_advantages[i]);
  }
  return tb;
}

ProxResult compute_prox(ProxStrategy strategy, const TokenBatch& tokens, const PolicyParams& live,
                        std::int64_t current_version, std::span<const double> target_logp) {
  ProxResult out;
  switch (strategy) {
    case ProxStrategy::kCoupled:
      out.logp = tokens.behav_logp;
      break;
    case ProxStrategy::kRecompute: {
      TokenForward f = forward_tokens(PolicyGraph::bind(live, false), tokens.seqs);
      out.logp = f.logp.data().values;
      out.forward_passes = 1;
      break;
    }
    case ProxStrategy::kLogLinear:
      if (target_logp.size() != tokens.size()) {
        throw ShapeError("compute_prox: loglinear needs " + std::to_string(tokens.size()) +
                         " target log-probs, got " + std::to_string(target_logp.size()));
      }
      out.logp = approx_prox_logp(tokens.behav_logp, target_logp, tokens.versions, current_version);
      break;
  }
  return out;
}

Trainer::Trainer(TrainConfig config, CostModel cost, PolicyParams initial)
    : config_(std::move(config)),
      cost_(cost),
      params_(std::move(initial)),
      adam_(make_adam_state(params_)) {
  if (!(config_.eps_clip > 0.0)) throw DomainError("trainer: eps_clip must be positive");
  if (config_.n_minibatches < 1) throw DomainError("trainer: n_minibatches must be >= 1");
}

ProxResult Trainer::step_start_target_logp(const TokenBatch& tokens) const {
  // Tokens at staleness 0 were sampled by this very version, so their stored
  // log-probs are the step-start target values; at staleness 1 alpha = 1 and
  // the target term has zero weight. Anything staler needs a forward pass.
  const std::vector<std::int64_t> s = staleness(tokens.versions, params_.version);
  const bool needs_forward =
      std::any_of(s.begin(), s.end(), [](std::int64_t v) { return v >= 2; });
  ProxResult out;
  if (!needs_forward) {
    out.logp = tokens.behav_logp;
    return out;
  }
  out.logp = forward_tokens(PolicyGraph::bind(params_, false), tokens.seqs).logp.data().values;
  out.forward_passes = 1;
  return out;
}

StepMetrics Trainer::train_step(const TrajectoryBatch& batch) {
  const PolicyParams saved_params = params_;
  const AdamState saved_adam = adam_;
  try {
    return run_step(batch);
  } catch (...) {
    params_ = saved_params;
    adam_ = saved_adam;
    throw;
  }
}

StepMetrics Trainer::run_step(const TrajectoryBatch& batch) {
  const std::size_t n_traj = batch.trajectories.size();
  if (n_traj == 0) throw DomainError("train_step: empty batch");
  const ProxStrategy strategy = config_.prox_strategy;
  const SnapshotTiming timing = config_.resolved_timing();
  const std::int64_t version = params_.version;

  StepMetrics metrics;
  metrics.step = steps_;
  metrics.version = version;

  std::vector<double> rewards;
  std::vector<std::int64_t> groups;
  for (const auto& tr : batch.trajectories) {
    rewards.push_back(tr.reward);
    groups.push_back(tr.group_id);
  }
  double reward_sum = 0.0;
  for (double r : rewards) reward_sum += r;
  metrics.task_reward_mean = reward_sum / static_cast<double>(n_traj);
  const std::vector<double> advantages = grpo_advantages(rewards, groups);

  const TokenBatch all = TokenBatch::from(batch, advantages, 0, n_traj);
  for (std::int64_t s : staleness(all.versions, version)) ++metrics.staleness_hist[s];

  // Step-start proximal values, frozen for every minibatch of this step.
  std::vector<double> frozen_prox;
  if (timing == SnapshotTiming::kPerTrainingStep && strategy != ProxStrategy::kCoupled) {
    if (strategy == ProxStrategy::kRecompute) {
      ProxResult r = compute_prox(strategy, all, params_, version);
      metrics.forward_pass_count += r.forward_passes;
      metrics.prox_time_s += event_cost(cost_, ProxRecompute{});
      frozen_prox = std::move(r.logp);
    } else {
      ProxResult target = step_start_target_logp(all);
      metrics.forward_pass_count += target.forward_passes;
      if (target.forward_passes) metrics.prox_time_s += event_cost(cost_, ProxRecompute{});
      frozen_prox = compute_prox(strategy, all, params_, version, target.logp).logp;
      metrics.prox_time_s += event_cost(cost_, ProxLogLinear{});
    }
  } else if (strategy == ProxStrategy::kLogLinear) {
    // Interpolation happens inside every minibatch; charged once per step.
    metrics.prox_time_s += event_cost(cost_, ProxLogLinear{});
  }

  const std::size_t m = std::min(config_.n_minibatches, n_traj);
  metrics.iw_max = -std::numeric_limits<double>::infinity();
  metrics.iw_min = std::numeric_limits<double>::infinity();
  double entropy_sum = 0.0;
  double grad_norm_sum = 0.0;
  std::size_t token_offset = 0;

  for (std::size_t j = 0; j < m; ++j) {
    const std::size_t begin = j * n_traj / m;
    const std::size_t end = (j + 1) * n_traj / m;
    if (begin == end) continue;
    const TokenBatch mb = TokenBatch::from(batch, advantages, begin, end);
    const std::size_t T = mb.size();

    PolicyGraph graph = PolicyGraph::bind(params_, true);
    TokenForward fwd = forward_tokens(graph, mb.seqs);
    {
      std::vector<std::size_t> bad;
      for (std::size_t i = 0; i < T; ++i) {
        if (!std::isfinite(fwd.logp.data()[i])) bad.push_back(token_offset + i);
      }
      if (!bad.empty()) {
        const std::string msg = "train_step: non-finite log-prob at token " + std::to_string(bad[0]);
        throw NonFiniteError(msg, std::move(bad));
      }
    }

    std::vector<double> prox;
    if (strategy == ProxStrategy::kCoupled) {
      prox = mb.behav_logp;
    } else if (timing == SnapshotTiming::kPerTrainingStep) {
      prox.assign(frozen_prox.begin() + static_cast<std::ptrdiff_t>(token_offset),
                  frozen_prox.begin() + static_cast<std::ptrdiff_t>(token_offset + T));
    } else if (strategy == ProxStrategy::kRecompute) {
      ProxResult r = compute_prox(strategy, mb, params_, version);
      metrics.forward_pass_count += r.forward_passes;
      metrics.prox_time_s += event_cost(cost_, ProxRecompute{});
      prox = std::move(r.logp);
    } else {
      // Current minibatch forward, detached: no extra pass.
      prox = compute_prox(strategy, mb, params_, version, fwd.logp.data().values).logp;
    }

    const ad::Value behav = ad::Value::constant(Tensor::vector(mb.behav_logp));
    const ad::Value adv = ad::Value::constant(Tensor::vector(mb.advantages));
    Surrogate loss;
    try {
      loss = strategy == ProxStrategy::kCoupled
                 ? coupled_ppo_loss(fwd.logp, behav, adv, config_.eps_clip)
                 : decoupled_loss(fwd.logp, ad::Value::constant(Tensor::vector(std::move(prox))),
                                  behav, adv, config_.eps_clip);
    } catch (const NonFiniteError& e) {
      // Report token positions within the whole step batch.
      std::vector<std::size_t> idx = e.indices();
      for (auto& i : idx) i += token_offset;
      throw NonFiniteError(std::string(e.what()) + " (minibatch " + std::to_string(j) + ")",
                           std::move(idx));
    }
    if (!std::isfinite(loss.report.objective)) {
      throw NonFiniteError("train_step: non-finite objective in minibatch " + std::to_string(j),
                           {});
    }
    ad::backward(ad::neg(loss.objective));

    std::vector<Tensor> grads;
    double sq = 0.0;
    for (const auto& layer : graph.layers) {
      grads.push_back(layer.grad());
      for (double g : grads.back().values) sq += g * g;
    }
    adam_update(params_.layers, grads, adam_, config_.adam);

    metrics.minibatch_objectives.push_back(loss.report.objective);
    metrics.clipped_tokens += loss.report.clipped_tokens;
    metrics.token_count += T;
    metrics.iw_max = std::max(metrics.iw_max, loss.report.iw_max);
    metrics.iw_min = std::min(metrics.iw_min, loss.report.iw_min);
    for (double e : fwd.entropy) entropy_sum += e;
    grad_norm_sum += std::sqrt(sq);
    metrics.train_time_s += event_cost(cost_, Minibatch{});
    ++metrics.minibatches;
    token_offset += T;
  }

  double obj_sum = 0.0;
  for (double o : metrics.minibatch_objectives) obj_sum += o;
  metrics.objective = obj_sum / static_cast<double>(metrics.minibatches);
  metrics.entropy_mean = entropy_sum / static_cast<double>(metrics.token_count);
  metrics.grad_norm = grad_norm_sum / static_cast<double>(metrics.minibatches);

  ++params_.version;
  ++steps_;
  return metrics;
}

}  // namespace proxlab
