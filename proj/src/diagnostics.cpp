#include "proxlab/diagnostics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "proxlab/error.hpp"
#include "proxlab/policy.hpp"
#include "proxlab/random.hpp"
#include "proxlab/trainer.hpp"

namespace proxlab {

namespace {

constexpr std::size_t kVocab = 5;
constexpr std::size_t kWidth = 2;
constexpr std::size_t kHidden = 6;
constexpr std::int64_t kCurrentVersion = 3;

struct Instance {
  PolicyParams params;
  std::vector<std::vector<Token>> prompts;
  std::vector<std::vector<Token>> responses;
  std::vector<double> behav;
  std::vector<double> prox;
  std::vector<double> adv;
};

std::vector<SequenceView> views(const Instance& in) {
  std::vector<SequenceView> v;
  for (std::size_t i = 0; i < in.prompts.size(); ++i) v.push_back({in.prompts[i], in.responses[i]});
  return v;
}

Instance make_instance(ProxStrategy strategy, std::uint64_t seed) {
  Rng rng(seed);
  Instance in;
  in.params = init_policy(derive_seed(seed, {0}), kVocab, kWidth, kHidden);
  const std::size_t n_seq = 2 + rng.below(3);
  for (std::size_t i = 0; i < n_seq; ++i) {
    std::vector<Token> p(1 + rng.below(2)), r(1 + rng.below(3));
    for (auto& t : p) t = static_cast<Token>(rng.below(kVocab));
    for (auto& t : r) t = static_cast<Token>(rng.below(kVocab));
    in.prompts.push_back(std::move(p));
    in.responses.push_back(std::move(r));
  }
  const std::vector<SequenceView> seqs = views(in);
  const std::vector<double> cur =
      forward_tokens(PolicyGraph::bind(in.params, false), seqs).logp.data().values;
  std::vector<std::int64_t> versions;
  for (double lp : cur) {
    in.behav.push_back(lp + rng.uniform(-0.4, 0.4));
    versions.push_back(kCurrentVersion - static_cast<std::int64_t>(rng.below(4)));
    in.adv.push_back(rng.uniform(-1.0, 1.0));
  }
  // The proximal values are frozen data: where the policy stood at the start
  // of the step, which drifts a little from the point being checked.
  std::vector<double> start;
  for (double lp : cur) start.push_back(lp + rng.uniform(-0.1, 0.1));
  switch (strategy) {
    case ProxStrategy::kCoupled: in.prox = in.behav; break;
    case ProxStrategy::kRecompute: in.prox = start; break;
    case ProxStrategy::kLogLinear:
      in.prox = approx_prox_logp(in.behav, start, versions, kCurrentVersion);
      break;
  }
  return in;
}

ad::Value objective(ProxStrategy strategy, const Instance& in, const PolicyGraph& graph) {
  const std::vector<SequenceView> seqs = views(in);
  const ad::Value theta = forward_tokens(graph, seqs).logp;
  const ad::Value behav = ad::Value::constant(Tensor::vector(in.behav));
  const ad::Value adv = ad::Value::constant(Tensor::vector(in.adv));
  if (strategy == ProxStrategy::kCoupled) return coupled_ppo_loss(theta, behav, adv, 0.2).objective;
  const ad::Value prox = ad::Value::constant(Tensor::vector(in.prox));
  return decoupled_loss(theta, prox, behav, adv, 0.2).objective;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

bool GradcheckReport::passed() const {
  return std::all_of(strategies.begin(), strategies.end(),
                     [](const StrategyCheck& s) { return s.failures == 0 && s.scored > 0; });
}

GradcheckReport run_gradcheck(std::size_t trials, double tolerance, std::uint64_t seed, double h,
                              double boundary_margin) {
  if (trials == 0) throw DomainError("gradcheck: trials must be >= 1");
  GradcheckReport report;
  report.tolerance = tolerance;
  const ProxStrategy all[] = {ProxStrategy::kCoupled, ProxStrategy::kRecompute,
                              ProxStrategy::kLogLinear};
  for (std::size_t si = 0; si < 3; ++si) {
    const ProxStrategy strategy = all[si];
    StrategyCheck check;
    check.strategy = strategy;
    check.trials = trials;
    for (std::size_t t = 0; t < trials; ++t) {
      const Instance in = make_instance(strategy, derive_seed(seed, {si, t}));
      const std::size_t layer = t % PolicyParams::kLayerNames.size();
      PolicyGraph base = PolicyGraph::bind(in.params, false);
      auto f = [&](const ad::Value& x) {
        PolicyGraph g = base;
        g.layers[layer] = x;
        return objective(strategy, in, g);
      };
      const ad::GradCheckResult r = ad::grad_check(f, in.params.layers[layer], h, boundary_margin);
      if (r.boundary) {
        ++check.boundary;
        continue;
      }
      ++check.scored;
      if (r.max_rel_error > tolerance) ++check.failures;
      if (r.max_rel_error >= check.worst_rel_error) {
        check.worst_rel_error = r.max_rel_error;
        check.worst_trial = t;
        check.worst_layer = PolicyParams::kLayerNames[layer];
      }
    }
    report.strategies.push_back(check);
  }
  return report;
}

double BenchReport::ratio() const {
  return loglinear_median_s > 0.0 ? recompute_median_s / loglinear_median_s : 0.0;
}

BenchReport bench_prox(std::size_t hidden, std::size_t tokens, std::size_t repeats,
                       std::uint64_t seed) {
  if (repeats < 3) throw DomainError("bench-prox: repeats must be >= 3");
  if (tokens == 0 || hidden == 0) throw DomainError("bench-prox: hidden and tokens must be >= 1");
  constexpr std::size_t kV = 13;
  constexpr std::size_t kW = 4;
  constexpr std::size_t kResponse = 2;
  constexpr std::int64_t kVersion = 4;
  const PolicyParams live = init_policy(derive_seed(seed, {0}), kV, kW, hidden);
  Rng rng(derive_seed(seed, {1}));

  const std::size_t n_seq = (tokens + kResponse - 1) / kResponse;
  std::vector<std::vector<Token>> prompts(n_seq), responses(n_seq);
  TokenBatch batch;
  for (std::size_t i = 0; i < n_seq; ++i) {
    prompts[i].resize(3);
    for (auto& t : prompts[i]) t = static_cast<Token>(rng.below(kV));
    responses[i].resize(std::min(kResponse, tokens - i * kResponse));
    for (auto& t : responses[i]) t = static_cast<Token>(rng.below(kV));
  }
  for (std::size_t i = 0; i < n_seq; ++i) {
    batch.seqs.push_back({prompts[i], responses[i]});
    for (std::size_t k = 0; k < responses[i].size(); ++k) {
      batch.behav_logp.push_back(-std::log(static_cast<double>(kV)) + rng.uniform(-0.2, 0.2));
      batch.versions.push_back(kVersion - static_cast<std::int64_t>(rng.below(5)));
      batch.advantages.push_back(0.0);
    }
  }
  // The target log-probs LogLinear interpolates with come from the trainer's
  // own minibatch forward, so they are an input here rather than measured work.
  const std::vector<double> target =
      forward_tokens(PolicyGraph::bind(live, false), batch.seqs).logp.data().values;

  BenchReport report;
  report.hidden = hidden;
  report.tokens = batch.size();
  report.repeats = repeats;
  std::vector<double> rec, ll;
  double sink = 0.0;
  using clock = std::chrono::steady_clock;
  for (std::size_t r = 0; r < repeats; ++r) {
    auto t0 = clock::now();
    ProxResult a = compute_prox(ProxStrategy::kRecompute, batch, live, kVersion);
    auto t1 = clock::now();
    ProxResult b = compute_prox(ProxStrategy::kLogLinear, batch, live, kVersion, target);
    auto t2 = clock::now();
    rec.push_back(std::chrono::duration<double>(t1 - t0).count());
    ll.push_back(std::chrono::duration<double>(t2 - t1).count());
    report.recompute_forward_passes = a.forward_passes;
    report.loglinear_forward_passes = b.forward_passes;
    sink += a.logp.front() + b.logp.front();
  }
  if (!std::isfinite(sink)) throw NonFiniteError("bench-prox: non-finite log-probs", {});
  report.recompute_median_s = median(rec);
  report.loglinear_median_s = median(ll);
  return report;
}

}  // namespace proxlab
