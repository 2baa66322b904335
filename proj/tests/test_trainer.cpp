#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "oracles/scalar_oracle.hpp"
#include "proxlab/error.hpp"
#include "proxlab/trainer.hpp"

using namespace proxlab;

namespace {

TrainConfig small_config(ProxStrategy s) {
  TrainConfig c;
  c.prompt_batch = 8;
  c.group_size = 4;
  c.prox_strategy = s;
  return c;
}

TrajectoryBatch sample(const PolicyParams& p, std::uint64_t seed, std::size_t prompts = 8) {
  return group_rollout(digit_sum_task(2), p, prompts, 4, SamplingParams{}, seed);
}

bool same_params(const PolicyParams& a, const PolicyParams& b) {
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    if (a.layers[l].values != b.layers[l].values) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("adam update") {
  SUBCASE("first step is about lr") {
    std::vector<Tensor> p = {Tensor::vector({0.0})};
    std::vector<Tensor> g = {Tensor::vector({1.0})};
    AdamState s;
    s.m = {{0.0}};
    s.v = {{0.0}};
    AdamConfig cfg;
    cfg.learning_rate = 0.1;
    adam_update(p, g, s, cfg);
    CHECK(p[0][0] == doctest::Approx(-0.1).epsilon(1e-6));
    CHECK(s.t == 1);
  }
  SUBCASE("zero gradient leaves parameters") {
    PolicyParams params = init_policy(1, 5, 2, 3);
    auto before = params.layers;
    AdamState s = make_adam_state(params);
    std::vector<Tensor> g;
    for (const auto& t : params.layers) g.emplace_back(t.shape, 0.0);
    adam_update(params.layers, g, s, AdamConfig{});
    for (std::size_t l = 0; l < before.size(); ++l) CHECK(params.layers[l].values == before[l].values);
  }
  SUBCASE("non-finite gradient is rejected untouched") {
    std::vector<Tensor> p = {Tensor::vector({1.0, 2.0})};
    std::vector<Tensor> g = {Tensor::vector({0.5, NAN})};
    AdamState s;
    s.m = {{0.0, 0.0}};
    s.v = {{0.0, 0.0}};
    try {
      adam_update(p, g, s, AdamConfig{});
      FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
      CHECK(e.indices() == std::vector<std::size_t>{1});
    }
    CHECK(p[0].values == std::vector<double>{1.0, 2.0});
    CHECK(s.t == 0);
  }
  SUBCASE("deterministic") {
    auto run = [] {
      PolicyParams params = init_policy(3, 5, 2, 3);
      AdamState s = make_adam_state(params);
      for (int k = 0; k < 5; ++k) {
        std::vector<Tensor> g;
        for (const auto& t : params.layers) {
          Tensor x(t.shape);
          for (std::size_t i = 0; i < x.numel(); ++i) x[i] = std::sin(double(i + k));
          g.push_back(x);
        }
        adam_update(params.layers, g, s, AdamConfig{});
      }
      return params;
    };
    CHECK(same_params(run(), run()));
  }
}

TEST_CASE("compute_prox per strategy") {
  PolicyParams p = init_policy(2, 13, 4, 8);
  p.version = 3;
  auto batch = sample(p, 5, 2);
  std::vector<double> adv(batch.trajectories.size(), 0.0);
  const TokenBatch tb = TokenBatch::from(batch, adv, 0, batch.trajectories.size());

  auto c = compute_prox(ProxStrategy::kCoupled, tb, p, 3);
  CHECK(c.logp == tb.behav_logp);
  CHECK(c.forward_passes == 0);

  auto r = compute_prox(ProxStrategy::kRecompute, tb, p, 3);
  CHECK(r.forward_passes == 1);
  for (std::size_t i = 0; i < tb.size(); ++i) CHECK(std::abs(r.logp[i] - tb.behav_logp[i]) <= 1e-12);

  std::vector<double> target(tb.size(), -0.5);
  auto l = compute_prox(ProxStrategy::kLogLinear, tb, p, 5, target);
  CHECK(l.forward_passes == 0);
  for (std::size_t i = 0; i < tb.size(); ++i) {
    CHECK(l.logp[i] == doctest::Approx(0.5 * tb.behav_logp[i] + 0.5 * -0.5).epsilon(1e-14));
  }
  CHECK_THROWS_AS(compute_prox(ProxStrategy::kLogLinear, tb, p, 5), ShapeError);
}

TEST_CASE("train_step increments the version once and splits minibatches") {
  PolicyParams p = init_policy(4, 13, 4, 8);
  Trainer t(small_config(ProxStrategy::kRecompute), CostModel{}, p);
  auto m = t.train_step(sample(p, 1));
  CHECK(m.version == 0);
  CHECK(t.params().version == 1);
  CHECK(t.steps_done() == 1);
  CHECK(m.minibatches == 4);
  CHECK(m.minibatch_objectives.size() == 4);
  CHECK(m.forward_pass_count == 1);
  CHECK(m.prox_time_s == 10.0);
  CHECK(m.train_time_s == 4 * 2.5);
  std::size_t hist_total = 0;
  for (auto [s, n] : m.staleness_hist) hist_total += n;
  CHECK(hist_total == m.token_count);
  CHECK(t.adam().t == 4);
}

TEST_CASE("minibatch 1 matches the scalar oracle") {
  PolicyParams behav_params = init_policy(6, 13, 4, 8);
  PolicyParams live = init_policy(7, 13, 4, 8);
  live.version = 1;
  const TrajectoryBatch batch = sample(behav_params, 9);

  std::vector<double> rewards;
  std::vector<std::int64_t> groups;
  for (const auto& tr : batch.trajectories) {
    rewards.push_back(tr.reward);
    groups.push_back(tr.group_id);
  }
  const auto adv = grpo_advantages(rewards, groups);
  std::vector<double> theta, old, tok_adv;
  for (std::size_t i = 0; i < batch.trajectories.size() / 4; ++i) {
    const auto& tr = batch.trajectories[i];
    auto lp = logp_sequence(live, tr.prompt, tr.response);
    theta.insert(theta.end(), lp.begin(), lp.end());
    old.insert(old.end(), tr.behav_logp.begin(), tr.behav_logp.end());
    tok_adv.insert(tok_adv.end(), tr.response.size(), adv[i]);
  }
  const auto ref = oracle::coupled(theta, old, tok_adv, 0.2);

  Trainer t(small_config(ProxStrategy::kCoupled), CostModel{}, live);
  auto m = t.train_step(batch);
  CHECK(std::abs(m.minibatch_objectives[0] - ref.objective) <= 1e-10);
}

TEST_CASE("s = 0 collapse on one step") {
  PolicyParams p = init_policy(8, 13, 4, 8);
  const TrajectoryBatch batch = sample(p, 3);
  std::vector<double> first;
  for (auto s : {ProxStrategy::kCoupled, ProxStrategy::kRecompute, ProxStrategy::kLogLinear}) {
    TrainConfig c = small_config(s);
    c.snapshot_timing = SnapshotTiming::kPerTrainingStep;
    Trainer t(c, CostModel{}, p);
    auto m = t.train_step(batch);
    first.push_back(m.minibatch_objectives[0]);
    if (s == ProxStrategy::kLogLinear) CHECK(m.forward_pass_count == 0);
  }
  CHECK(std::abs(first[0] - first[1]) <= 1e-10);
  CHECK(std::abs(first[0] - first[2]) <= 1e-10);
}

TEST_CASE("loglinear forward passes by timing") {
  PolicyParams old = init_policy(8, 13, 4, 8);
  const TrajectoryBatch batch = sample(old, 3);
  PolicyParams live = init_policy(9, 13, 4, 8);
  live.version = 3;  // every token at staleness 3

  TrainConfig per_mb = small_config(ProxStrategy::kLogLinear);
  CHECK(per_mb.resolved_timing() == SnapshotTiming::kPerMinibatch);
  Trainer a(per_mb, CostModel{}, live);
  auto ma = a.train_step(batch);
  CHECK(ma.forward_pass_count == 0);
  CHECK(ma.prox_time_s == 0.0012);
  CHECK(ma.staleness_hist.at(3) == ma.token_count);

  TrainConfig per_step = per_mb;
  per_step.snapshot_timing = SnapshotTiming::kPerTrainingStep;
  Trainer b(per_step, CostModel{}, live);
  auto mb = b.train_step(batch);
  CHECK(mb.forward_pass_count == 1);
  CHECK(std::isfinite(mb.objective));

  TrainConfig rec = small_config(ProxStrategy::kRecompute);
  rec.snapshot_timing = SnapshotTiming::kPerMinibatch;
  Trainer r(rec, CostModel{}, live);
  CHECK(r.train_step(batch).forward_pass_count == 4);
}

TEST_CASE("first minibatch never clips when prox is the step-start policy") {
  PolicyParams old = init_policy(8, 13, 4, 8);
  const TrajectoryBatch batch = sample(old, 3);
  PolicyParams live = init_policy(9, 13, 4, 8);
  live.version = 1;
  TrainConfig c = small_config(ProxStrategy::kRecompute);
  c.n_minibatches = 1;
  Trainer t(c, CostModel{}, live);
  CHECK(t.train_step(batch).clipped_tokens == 0);
}

TEST_CASE("non-finite step restores state") {
  PolicyParams p = init_policy(8, 13, 4, 8);
  TrajectoryBatch batch = sample(p, 3);
  batch.trajectories[5].behav_logp[0] = -1e6;
  Trainer t(small_config(ProxStrategy::kCoupled), CostModel{}, p);
  try {
    t.train_step(batch);
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    REQUIRE_FALSE(e.indices().empty());
  }
  CHECK(same_params(t.params(), p));
  CHECK(t.params().version == 0);
  CHECK(t.adam().t == 0);
  CHECK(t.steps_done() == 0);
}

TEST_CASE("trainer rejects invalid settings") {
  PolicyParams p = init_policy(8, 13, 4, 8);
  TrainConfig c = small_config(ProxStrategy::kCoupled);
  c.eps_clip = 0.0;
  CHECK_THROWS_AS(Trainer(c, CostModel{}, p), DomainError);
  Trainer t(small_config(ProxStrategy::kCoupled), CostModel{}, p);
  CHECK_THROWS_AS(t.train_step(TrajectoryBatch{}), DomainError);
  TrajectoryBatch future = sample(p, 1);
  for (auto& tr : future.trajectories) {
    for (auto& v : tr.versions) v = 4;
  }
  CHECK_THROWS_AS(t.train_step(future), VersionError);
}
