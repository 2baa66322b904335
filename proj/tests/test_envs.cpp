#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "proxlab/envs.hpp"
#include "proxlab/random.hpp"

using namespace proxlab;

TEST_CASE("digit_sum rewards") {
  Task t = digit_sum_task(2);
  CHECK(t.vocab_size == 13);
  CHECK(t.end_token == digit_sum::kEnd);
  const std::vector<Token> prompt = {3, 4, digit_sum::kSeparator};
  CHECK(t.reward(prompt, std::vector<Token>{7, digit_sum::kEnd}, 0) == 1.0);
  CHECK(t.reward(prompt, std::vector<Token>{9, digit_sum::kEnd}, 0) == 0.0);
  CHECK(t.reward(prompt, std::vector<Token>{7, 3}, 0) == 0.5);
  CHECK(t.reward(prompt, std::vector<Token>{7}, 0) == 0.5);
  CHECK(t.reward(prompt, std::vector<Token>{}, 0) == 0.0);
  const std::vector<Token> carry = {9, 8, digit_sum::kSeparator};
  CHECK(t.reward(carry, std::vector<Token>{7, digit_sum::kEnd}, 0) == 1.0);
  CHECK(t.reward(prompt, std::vector<Token>{7, digit_sum::kEnd}, 0) ==
        t.reward(prompt, std::vector<Token>{7, digit_sum::kEnd}, 12345));
}

TEST_CASE("digit_sum prompts") {
  Task t = digit_sum_task(3);
  auto a = t.sample_prompt(5);
  CHECK(a == t.sample_prompt(5));
  REQUIRE(a.size() == 4);
  CHECK(a.back() == digit_sum::kSeparator);
  for (std::size_t i = 0; i < 3; ++i) CHECK((a[i] >= 0 && a[i] <= 9));
  CHECK_THROWS(digit_sum_task(0));
}

TEST_CASE("uniform-random baseline of digit_sum") {
  // Exact: the first token matches with probability 1/13 and, given that,
  // the end token follows with probability 1/13 (max length 2).
  const double exact = (1.0 / 13.0) * (12.0 / 13.0) * 0.5 + (1.0 / 13.0) * (1.0 / 13.0) * 1.0;
  CHECK(exact == doctest::Approx(7.0 / 169.0).epsilon(1e-15));

  Task t = digit_sum_task(2);
  Rng rng(2024);
  constexpr std::size_t n = 10000;
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto prompt = t.sample_prompt(rng.next());
    std::vector<Token> resp;
    for (std::size_t k = 0; k < t.max_response_len; ++k) {
      resp.push_back(static_cast<Token>(rng.below(13)));
      if (resp.back() == digit_sum::kEnd) break;
    }
    const double r = t.reward(prompt, resp, 0);
    sum += r;
    sq += r * r;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(mean - exact) <= 3.0 * std::sqrt(var / n));
}

TEST_CASE("bandit rewards") {
  Task t = bandit_task({0.1, 0.9});
  CHECK(t.vocab_size == 2);
  CHECK(t.max_response_len == 1);
  CHECK(t.sample_prompt(3).empty());
  constexpr std::size_t n = 10000;
  double arm1 = 0.0, uniform = 0.0;
  Rng rng(4);
  for (std::size_t i = 0; i < n; ++i) {
    arm1 += t.reward({}, std::vector<Token>{1}, derive_seed(1, {i}));
    uniform += t.reward({}, std::vector<Token>{static_cast<Token>(rng.below(2))}, derive_seed(2, {i}));
  }
  CHECK(std::abs(arm1 / n - 0.9) <= 3.0 * std::sqrt(0.9 * 0.1 / n));
  CHECK(std::abs(uniform / n - 0.5) <= 3.0 * std::sqrt(0.25 / n));
  CHECK(t.reward({}, std::vector<Token>{1}, 77) == t.reward({}, std::vector<Token>{1}, 77));
  CHECK_THROWS(bandit_task({0.5}));
}

TEST_CASE("group_rollout shape, stamps and determinism") {
  Task t = digit_sum_task(2);
  PolicyParams p = init_policy(1, 13, 4, 8);
  p.version = 6;
  auto b = group_rollout(t, p, 2, 4, SamplingParams{}, 42);
  REQUIRE(b.trajectories.size() == 8);
  const std::vector<std::int64_t> expect = {0, 0, 0, 0, 1, 1, 1, 1};
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < 8; ++i) {
    const auto& tr = b.trajectories[i];
    CHECK(tr.group_id == expect[i]);
    CHECK(tr.behav_logp.size() == tr.response.size());
    CHECK(tr.versions.size() == tr.response.size());
    for (auto v : tr.versions) CHECK(v == 6);
    CHECK(tr.reward >= 0.0);
    CHECK(tr.reward <= 1.0);
    CHECK(tr.prompt == b.trajectories[(i / 4) * 4].prompt);
    tokens += tr.response.size();
  }
  CHECK(b.token_count() == tokens);
  auto c = group_rollout(t, p, 2, 4, SamplingParams{}, 42);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(b.trajectories[i].response == c.trajectories[i].response);
    CHECK(b.trajectories[i].behav_logp == c.trajectories[i].behav_logp);
  }
}

TEST_CASE("mean group reward is stable across seeds") {
  Task t = bandit_task({0.2, 0.8});
  PolicyParams p = zero_policy(2, 1, 4);
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto b = group_rollout(t, p, 50, 4, SamplingParams{}, s);
    double m = 0.0;
    for (const auto& tr : b.trajectories) m += tr.reward;
    m /= 200.0;
    // Reward is Bernoulli(0.5) overall under the uniform policy; 4 sigma band.
    CHECK(std::abs(m - 0.5) <= 4.0 * std::sqrt(0.25 / 200.0));
  }
}
