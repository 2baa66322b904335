#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "proxlab/policy.hpp"

namespace proxlab {

// A toy autoregressive task scored once per full response.
struct Task {
  std::string name;
  std::size_t vocab_size = 0;
  std::size_t max_response_len = 1;
  std::optional<Token> end_token;
  // Deterministic in the seed.
  std::function<std::vector<Token>(std::uint64_t seed)> sample_prompt;
  // Pure in (prompt, response, noise_seed); result in [0, 1]. Tasks with
  // stochastic payoffs draw their noise from noise_seed only.
  std::function<double(std::span<const Token> prompt, std::span<const Token> response,
                       std::uint64_t noise_seed)>
      reward;
};

namespace digit_sum {
inline constexpr Token kSeparator = 10;
inline constexpr Token kEnd = 11;
inline constexpr Token kPad = 12;
inline constexpr std::size_t kVocab = 13;
}  // namespace digit_sum

// Prompt: k digits then a separator. Reward 1 for the digit
// (sum of digits mod 10) followed by the end token, 0.5 when only the first
// token is that digit, 0 otherwise.
Task digit_sum_task(std::size_t n_digits);

// Empty prompt, one-token response choosing an arm; Bernoulli payoff.
Task bandit_task(std::vector<double> arm_means);

struct Trajectory {
  std::int64_t group_id = 0;
  std::vector<Token> prompt;
  std::vector<Token> response;
  std::vector<double> behav_logp;      // one per response token
  std::vector<std::int64_t> versions;  // behavior policy version per response token
  double reward = 0.0;
  DoneReason done = DoneReason::kMaxLength;
};

struct TrajectoryBatch {
  std::vector<Trajectory> trajectories;
  // Position in the rollout stream; fixes the batch's seed and lag.
  std::int64_t rollout_index = 0;

  std::size_t token_count() const;
};

// B prompts x G responses sampled from one snapshot. Trajectories are grouped
// contiguously by prompt (group id = prompt index).
TrajectoryBatch group_rollout(const Task& task, const PolicyParams& snapshot,
                              std::size_t n_prompts, std::size_t group_size,
                              const SamplingParams& sampling, std::uint64_t seed);

}  // namespace proxlab
