#include "proxlab/rl_core.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "proxlab/error.hpp"

namespace proxlab {

std::string_view to_string(ProxStrategy s) {
  switch (s) {
    case ProxStrategy::kCoupled:
      return "coupled";
    case ProxStrategy::kRecompute:
      return "recompute";
    case ProxStrategy::kLogLinear:
      return "loglinear";
  }
  return "unknown";
}

std::string_view to_string(SnapshotTiming t) {
  return t == SnapshotTiming::kPerTrainingStep ? "per_training_step" : "per_minibatch";
}

ProxStrategy parse_strategy(std::string_view name) {
  if (name == "coupled") return ProxStrategy::kCoupled;
  if (name == "recompute") return ProxStrategy::kRecompute;
  if (name == "loglinear") return ProxStrategy::kLogLinear;
  throw DomainError("unknown prox strategy '" + std::string(name) +
                    "' (expected coupled, recompute or loglinear)");
}

SnapshotTiming parse_snapshot_timing(std::string_view name) {
  if (name == "per_training_step") return SnapshotTiming::kPerTrainingStep;
  if (name == "per_minibatch") return SnapshotTiming::kPerMinibatch;
  throw DomainError("unknown snapshot timing '" + std::string(name) +
                    "' (expected per_training_step or per_minibatch)");
}

std::vector<std::int64_t> staleness(std::span<const std::int64_t> versions,
                                    std::int64_t current_version) {
  std::vector<std::int64_t> s(versions.size());
  for (std::size_t i = 0; i < versions.size(); ++i) {
    s[i] = current_version - versions[i];
    if (s[i] < 0) {
      throw VersionError("staleness: token " + std::to_string(i) + " has version " +
                         std::to_string(versions[i]) + " ahead of current version " +
                         std::to_string(current_version));
    }
  }
  return s;
}

double alpha(std::int64_t s) {
  if (s < 0) throw VersionError("alpha: negative staleness");
  return s >= 1 ? 1.0 / static_cast<double>(s) : 0.0;
}

std::vector<double> alpha(std::span<const std::int64_t> s) {
  std::vector<double> a(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) a[i] = alpha(s[i]);
  return a;
}

std::vector<double> approx_prox_logp(std::span<const double> old_logp,
                                     std::span<const double> cur_logp,
                                     std::span<const std::int64_t> versions,
                                     std::int64_t current_version) {
  if (old_logp.size() != cur_logp.size() || old_logp.size() != versions.size()) {
    throw ShapeError("approx_prox_logp: shape mismatch [" + std::to_string(old_logp.size()) +
                     "] vs [" + std::to_string(cur_logp.size()) + "] vs versions [" +
                     std::to_string(versions.size()) + "]");
  }
  const std::vector<std::int64_t> s = staleness(versions, current_version);
  std::vector<double> prox(old_logp.size());
  for (std::size_t i = 0; i < prox.size(); ++i) {
    const double a = alpha(s[i]);
    prox[i] = a * old_logp[i] + (1.0 - a) * cur_logp[i];
  }
  return prox;
}

namespace {

void check_same(const char* op, const ad::Value& a, const ad::Value& b) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().to_string() + " vs " +
                     b.shape().to_string());
  }
}

void check_finite(const char* what, const ad::Value& v) {
  std::vector<std::size_t> bad;
  for (std::size_t i = 0; i < v.numel(); ++i) {
    if (!std::isfinite(v.data()[i])) bad.push_back(i);
  }
  if (!bad.empty()) {
    const std::string msg = std::string(what) + " is not finite at token " + std::to_string(bad[0]);
    throw NonFiniteError(msg, std::move(bad));
  }
}

// min(ratio * adv, clip(ratio) * adv) plus the count of tokens where the
// clipped branch is the one selected.
ad::Value clipped_surrogate(const ad::Value& ratio, const ad::Value& adv, double eps,
                            std::size_t& clipped) {
  using namespace ad;
  const double lo = 1.0 - eps, hi = 1.0 + eps;
  Value unclipped = ratio * adv;
  Value bounded = clip(ratio, lo, hi) * adv;
  Value m = minimum(unclipped, bounded);
  clipped = 0;
  for (std::size_t i = 0; i < ratio.numel(); ++i) {
    const double r = ratio.data()[i];
    const bool outside = r < lo || r > hi;
    if (outside && bounded.data()[i] < unclipped.data()[i]) ++clipped;
  }
  return m;
}

void end_to_end_ratio_stats(const ad::Value& logp_theta, const ad::Value& logp_behav,
                            LossReport& report) {
  report.token_count = logp_theta.numel();
  if (report.token_count == 0) return;
  report.iw_max = -std::numeric_limits<double>::infinity();
  report.iw_min = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logp_theta.numel(); ++i) {
    const double r = std::exp(logp_theta.data()[i] - logp_behav.data()[i]);
    report.iw_max = std::max(report.iw_max, r);
    report.iw_min = std::min(report.iw_min, r);
  }
}

}  // namespace

Surrogate coupled_ppo_loss(const ad::Value& logp_theta, const ad::Value& logp_old,
                           const ad::Value& adv, double eps) {
  using namespace ad;
  check_same("coupled_ppo_loss", logp_theta, logp_old);
  check_same("coupled_ppo_loss", logp_theta, adv);
  if (!(eps > 0.0)) throw DomainError("coupled_ppo_loss: eps must be positive");
  if (logp_theta.numel() == 0) throw ShapeError("coupled_ppo_loss: no tokens");

  Value ratio = exp(logp_theta - detach(logp_old));
  check_finite("coupled_ppo_loss: ratio", ratio);
  Surrogate out;
  Value per_token = clipped_surrogate(ratio, detach(adv), eps, out.report.clipped_tokens);
  out.objective = mean(per_token);
  out.report.objective = out.objective.item();
  end_to_end_ratio_stats(logp_theta, logp_old, out.report);
  return out;
}

Surrogate decoupled_loss(const ad::Value& logp_theta, const ad::Value& logp_prox,
                         const ad::Value& logp_behav, const ad::Value& adv, double eps) {
  using namespace ad;
  check_same("decoupled_loss", logp_theta, logp_prox);
  check_same("decoupled_loss", logp_theta, logp_behav);
  check_same("decoupled_loss", logp_theta, adv);
  if (!(eps > 0.0)) throw DomainError("decoupled_loss: eps must be positive");
  if (logp_theta.numel() == 0) throw ShapeError("decoupled_loss: no tokens");

  Value prox = detach(logp_prox);
  Value weight = exp(prox - detach(logp_behav));
  check_finite("decoupled_loss: importance weight", weight);
  Value rho = exp(logp_theta - prox);
  check_finite("decoupled_loss: trust-region ratio", rho);
  Surrogate out;
  Value per_token = weight * clipped_surrogate(rho, detach(adv), eps, out.report.clipped_tokens);
  out.objective = mean(per_token);
  out.report.objective = out.objective.item();
  end_to_end_ratio_stats(logp_theta, logp_behav, out.report);
  return out;
}

std::vector<double> grpo_advantages(std::span<const double> rewards,
                                    std::span<const std::int64_t> group_ids, double eps_std) {
  if (rewards.size() != group_ids.size()) {
    throw ShapeError("grpo_advantages: " + std::to_string(rewards.size()) + " rewards vs " +
                     std::to_string(group_ids.size()) + " group ids");
  }
  struct Moments {
    double sum = 0.0;
    std::size_t n = 0;
    double mean = 0.0;
    double sq = 0.0;
  };
  std::map<std::int64_t, Moments> groups;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    auto& g = groups[group_ids[i]];
    g.sum += rewards[i];
    ++g.n;
  }
  for (auto& [id, g] : groups) g.mean = g.sum / static_cast<double>(g.n);
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    auto& g = groups[group_ids[i]];
    const double d = rewards[i] - g.mean;
    g.sq += d * d;
  }
  std::vector<double> adv(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    const auto& g = groups[group_ids[i]];
    const double std = std::sqrt(g.sq / static_cast<double>(g.n));
    adv[i] = (rewards[i] - g.mean) / (std + eps_std);
  }
  return adv;
}

}  // namespace proxlab
