#pragma once

// Gradient checks of the surrogate objectives through the policy network, and
// the proximal-computation micro-benchmark.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "proxlab/rl_core.hpp"

namespace proxlab {

struct StrategyCheck {
  ProxStrategy strategy = ProxStrategy::kCoupled;
  std::size_t trials = 0;
  std::size_t scored = 0;    // trials not excluded as boundary points
  std::size_t boundary = 0;
  std::size_t failures = 0;
  double worst_rel_error = 0.0;
  std::size_t worst_trial = 0;
  std::string worst_layer;
};

struct GradcheckReport {
  double tolerance = 0.0;
  std::vector<StrategyCheck> strategies;
  bool passed() const;
};

// For each strategy, `trials` random instances: a small random policy, a few
// random sequences with perturbed behavior log-probs, staleness in 0..3,
// uniform advantages. Each trial perturbs one parameter tensor (cycling) and
// checks the objective's gradient against central differences.
GradcheckReport run_gradcheck(std::size_t trials, double tolerance, std::uint64_t seed = 0,
                              double h = 1e-6, double boundary_margin = 1e-3);

struct BenchReport {
  std::size_t hidden = 0;
  std::size_t tokens = 0;
  std::size_t repeats = 0;
  double recompute_median_s = 0.0;
  double loglinear_median_s = 0.0;
  std::size_t recompute_forward_passes = 0;
  std::size_t loglinear_forward_passes = 0;
  double ratio() const;
};

// Wall-clock medians of compute_prox for Recompute and LogLinear on the same
// token batch (vocab 13, context 4, stale versions 0..4).
BenchReport bench_prox(std::size_t hidden, std::size_t tokens, std::size_t repeats,
                       std::uint64_t seed = 0);

}  // namespace proxlab
