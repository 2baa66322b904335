#include "proxlab/envs.hpp"

#include <algorithm>

#include "proxlab/error.hpp"
#include "proxlab/random.hpp"

namespace proxlab {

Task digit_sum_task(std::size_t n_digits) {
  if (n_digits < 1) throw DomainError("digit_sum: n_digits must be >= 1");
  using namespace digit_sum;
  Task t;
  t.name = "digit_sum";
  t.vocab_size = kVocab;
  // (sum mod 10) is a single digit, then the end token.
  t.max_response_len = 2;
  t.end_token = kEnd;
  t.sample_prompt = [n_digits](std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Token> prompt;
    for (std::size_t i = 0; i < n_digits; ++i) prompt.push_back(static_cast<Token>(rng.below(10)));
    prompt.push_back(kSeparator);
    return prompt;
  };
  t.reward = [](std::span<const Token> prompt, std::span<const Token> response, std::uint64_t) {
    int sum = 0;
    for (Token p : prompt) {
      if (p >= 0 && p <= 9) sum += p;
    }
    const Token answer = static_cast<Token>(sum % 10);
    if (response.empty() || response[0] != answer) return 0.0;
    if (response.size() == 2 && response[1] == kEnd) return 1.0;
    return 0.5;
  };
  return t;
}

Task bandit_task(std::vector<double> arm_means) {
  if (arm_means.size() < 2) throw DomainError("bandit: need at least 2 arms");
  for (double m : arm_means) {
    if (!(m >= 0.0 && m <= 1.0)) throw DomainError("bandit: arm means must lie in [0, 1]");
  }
  Task t;
  t.name = "bandit";
  t.vocab_size = arm_means.size();
  t.max_response_len = 1;
  t.sample_prompt = [](std::uint64_t) { return std::vector<Token>{}; };
  t.reward = [means = std::move(arm_means)](std::span<const Token>,
                                            std::span<const Token> response,
                                            std::uint64_t noise_seed) {
    if (response.empty()) return 0.0;
    const auto arm = static_cast<std::size_t>(response[0]);
    if (arm >= means.size()) return 0.0;
    Rng rng(noise_seed);
    return rng.uniform() < means[arm] ? 1.0 : 0.0;
  };
  return t;
}

std::size_t TrajectoryBatch::token_count() const {
  std::size_t n = 0;
  for (const auto& t : trajectories) n += t.response.size();
  return n;
}

TrajectoryBatch group_rollout(const Task& task, const PolicyParams& snapshot,
                              std::size_t n_prompts, std::size_t group_size,
                              const SamplingParams& sampling, std::uint64_t seed) {
  if (n_prompts < 1 || group_size < 1) throw DomainError("group_rollout: B and G must be >= 1");
  if (snapshot.vocab_size != task.vocab_size) {
    throw DomainError("group_rollout: policy vocabulary does not match task " + task.name);
  }
  TrajectoryBatch batch;
  batch.trajectories.reserve(n_prompts * group_size);
  for (std::size_t b = 0; b < n_prompts; ++b) {
    const std::vector<Token> prompt = task.sample_prompt(derive_seed(seed, {0, b}));
    for (std::size_t g = 0; g < group_size; ++g) {
      SampleResult s = sample_sequence(snapshot, prompt, sampling, task.max_response_len,
                                       derive_seed(seed, {1, b, g}), task.end_token);
      Trajectory tr;
      tr.group_id = static_cast<std::int64_t>(b);
      tr.prompt = prompt;
      tr.reward = std::clamp(task.reward(prompt, s.tokens, derive_seed(seed, {2, b, g})), 0.0, 1.0);
      tr.versions.assign(s.tokens.size(), snapshot.version);
      tr.response = std::move(s.tokens);
      tr.behav_logp = std::move(s.logp);
      tr.done = s.done;
      batch.trajectories.push_back(std::move(tr));
    }
  }
  return batch;
}

}  // namespace proxlab
