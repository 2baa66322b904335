#include "proxlab/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "proxlab/error.hpp"
#include "proxlab/random.hpp"

namespace proxlab {

using nlohmann::json;

namespace {

std::string join(const std::vector<std::string>& issues) {
  std::ostringstream os;
  os << "invalid configuration (" << issues.size() << " problem" << (issues.size() == 1 ? "" : "s")
     << ")";
  for (const auto& i : issues) os << "\n  - " << i;
  return os.str();
}

// Reads fields of one JSON object, recording type errors and unknown keys
// instead of throwing at the first one.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path, std::vector<std::string>& issues)
      : j_(j), path_(std::move(path)), issues_(issues) {
    if (!j_.is_object()) {
      issues_.push_back(where("") + " must be an object");
      ok_ = false;
    }
  }

  ~ObjectReader() {
    if (!ok_) return;
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) issues_.push_back("unknown key " + where(it.key()));
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!ok_ || !j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      issues_.push_back(where(key) + " has the wrong type (" + j_.at(key).dump() + ")");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    if (!ok_ || !j_.contains(key)) return nullptr;
    return &j_.at(key);
  }

  void skip(const char* key) { seen_.insert(key); }
  bool has(const char* key) const { return ok_ && j_.contains(key); }
  std::string where(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const json& j_;
  std::string path_;
  std::vector<std::string>& issues_;
  std::set<std::string> seen_;
  bool ok_ = true;
};

json lag_schedule_to_json(const LagSchedule& s, const std::string& trace_file) {
  return std::visit(
      [&](const auto& k) -> json {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, FixedLag>) {
          return {{"kind", "fixed"}, {"lag", k.lag}};
        } else if constexpr (std::is_same_v<K, UniformLag>) {
          return {{"kind", "uniform"}, {"max_lag", k.max_lag}};
        } else {
          json j = {{"kind", "trace"}, {"lags", k.lags}};
          if (!trace_file.empty()) j["file"] = trace_file;
          return j;
        }
      },
      s.kind());
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> issues)
    : Error(join(issues)), issues_(std::move(issues)) {}

std::string ExperimentConfig::resolved_run_name() const {
  if (!run_name.empty()) return run_name;
  return task.name + "-" + std::string(to_string(train.prox_strategy)) + "-seed" +
         std::to_string(seed);
}

std::uint64_t ExperimentConfig::init_seed() const { return derive_seed(seed, {1}); }
std::uint64_t ExperimentConfig::rollout_seed() const { return derive_seed(seed, {2}); }
std::uint64_t ExperimentConfig::lag_seed() const { return derive_seed(seed, {3}); }
std::uint64_t ExperimentConfig::eval_seed() const { return derive_seed(seed, {4}); }

std::vector<std::string> validate(const ExperimentConfig& c) {
  std::vector<std::string> issues;
  auto require = [&](bool ok, std::string msg) {
    if (!ok) issues.push_back(std::move(msg));
  };
  require(c.task.name == "digit_sum" || c.task.name == "bandit",
          "task.name must be digit_sum or bandit, got '" + c.task.name + "'");
  if (c.task.name == "digit_sum") require(c.task.n_digits >= 1, "task.n_digits must be >= 1");
  if (c.task.name == "bandit") {
    require(c.task.arm_means.size() >= 2, "task.arm_means needs at least 2 arms");
    for (double m : c.task.arm_means) {
      require(m >= 0.0 && m <= 1.0, "task.arm_means entries must lie in [0, 1]");
    }
  }
  require(c.policy.context_width >= 1, "policy.context_width must be >= 1");
  require(c.policy.hidden >= 1, "policy.hidden must be >= 1");

  const TrainConfig& t = c.train;
  require(t.prompt_batch >= 1, "train.prompt_batch must be >= 1");
  require(t.group_size >= 1, "train.group_size must be >= 1");
  require(t.n_minibatches >= 1, "train.n_minibatches must be >= 1");
  if (t.n_minibatches >= 1) {
    require((t.prompt_batch * t.group_size) % t.n_minibatches == 0,
            "train.prompt_batch * train.group_size must be divisible by train.n_minibatches");
  }
  require(t.eps_clip > 0.0, "train.eps_clip must be > 0");
  require(t.adam.learning_rate > 0.0, "train.learning_rate must be > 0");
  require(t.adam.beta1 >= 0.0 && t.adam.beta1 < 1.0, "train.adam_beta1 must lie in [0, 1)");
  require(t.adam.beta2 >= 0.0 && t.adam.beta2 < 1.0, "train.adam_beta2 must lie in [0, 1)");
  require(t.adam.eps > 0.0, "train.adam_eps must be > 0");
  require(t.max_steps >= 1, "train.max_steps must be >= 1");
  require(t.eval_every >= 1, "train.eval_every must be >= 1");
  require(t.eval_prompts >= 1, "train.eval_prompts must be >= 1");
  require(t.final_window >= 1, "train.final_window must be >= 1");

  require(c.staleness.s_max >= 0, "staleness.s_max must be >= 0");
  require(c.staleness.lag_schedule.max_lag() <= c.staleness.s_max,
          "staleness.lag_schedule can request lag " +
              std::to_string(c.staleness.lag_schedule.max_lag()) + " beyond s_max " +
              std::to_string(c.staleness.s_max) +
              " (the snapshot store keeps only s_max + 1 versions)");

  const CostModel& cm = c.cost_model;
  require(cm.t_prox_recompute >= 0.0 && cm.t_prox_loglinear >= 0.0 &&
              cm.t_train_minibatch >= 0.0 && cm.t_rollout_per_sample >= 0.0,
          "cost_model entries must be >= 0");

  require(c.sampling.temperature >= 0.0, "sampling.temperature must be >= 0");
  require(c.sampling.top_p > 0.0 && c.sampling.top_p <= 1.0, "sampling.top_p must lie in (0, 1]");
  require(c.mode == RunMode::kDeterministic || c.rollout_workers >= 1,
          "rollout_workers must be >= 1");
  require(c.queue_capacity >= 1, "queue_capacity must be >= 1");
  return issues;
}

json config_to_json(const ExperimentConfig& c) {
  json task = {{"name", c.task.name}};
  if (c.task.name == "bandit") {
    task["arm_means"] = c.task.arm_means;
  } else {
    task["n_digits"] = c.task.n_digits;
  }
  const TrainConfig& t = c.train;
  json train = {
      {"prompt_batch", t.prompt_batch},
      {"group_size", t.group_size},
      {"n_minibatches", t.n_minibatches},
      {"eps_clip", t.eps_clip},
      {"learning_rate", t.adam.learning_rate},
      {"adam_beta1", t.adam.beta1},
      {"adam_beta2", t.adam.beta2},
      {"adam_eps", t.adam.eps},
      {"max_steps", t.max_steps},
      {"prox_strategy", std::string(to_string(t.prox_strategy))},
      {"snapshot_timing",
       t.snapshot_timing ? std::string(to_string(*t.snapshot_timing)) : std::string("auto")},
      {"eval_every", t.eval_every},
      {"eval_prompts", t.eval_prompts},
      {"final_window", t.final_window},
  };
  json sampling = {{"temperature", c.sampling.temperature}, {"top_p", c.sampling.top_p}};
  if (c.sampling.top_k == 0) {
    sampling["top_k"] = "all";
  } else {
    sampling["top_k"] = c.sampling.top_k;
  }
  return {
      {"schema_version", kConfigSchemaVersion},
      {"run_name", c.run_name},
      {"task", task},
      {"policy", {{"context_width", c.policy.context_width}, {"hidden", c.policy.hidden}}},
      {"train", train},
      {"staleness",
       {{"s_max", c.staleness.s_max},
        {"lag_schedule", lag_schedule_to_json(c.staleness.lag_schedule, c.lag_trace_file)}}},
      {"cost_model",
       {{"t_prox_recompute", c.cost_model.t_prox_recompute},
        {"t_prox_loglinear", c.cost_model.t_prox_loglinear},
        {"t_train_minibatch", c.cost_model.t_train_minibatch},
        {"t_rollout_per_sample", c.cost_model.t_rollout_per_sample}}},
      {"sampling", sampling},
      {"mode", c.mode == RunMode::kDeterministic ? "deterministic" : "parallel"},
      {"rollout_workers", c.rollout_workers},
      {"queue_capacity", c.queue_capacity},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"record_trajectories", c.record_trajectories},
  };
}

ExperimentConfig config_from_json(const json& j, const std::filesystem::path& base_dir) {
  std::vector<std::string> issues;
  ExperimentConfig c;
  {
    ObjectReader root(j, "", issues);
    if (!root.has("schema_version")) {
      issues.push_back("schema_version is required (current: " +
                       std::to_string(kConfigSchemaVersion) + ")");
    }
    int schema = kConfigSchemaVersion;
    root.get("schema_version", schema);
    if (schema != kConfigSchemaVersion) {
      issues.push_back("schema_version " + std::to_string(schema) + " is not supported (expected " +
                       std::to_string(kConfigSchemaVersion) + ")");
    }
    root.get("run_name", c.run_name);

    if (const json* task = root.child("task")) {
      ObjectReader r(*task, "task", issues);
      r.get("name", c.task.name);
      r.get("n_digits", c.task.n_digits);
      r.get("arm_means", c.task.arm_means);
    }
    if (const json* policy = root.child("policy")) {
      ObjectReader r(*policy, "policy", issues);
      r.get("context_width", c.policy.context_width);
      r.get("hidden", c.policy.hidden);
    }
    if (const json* train = root.child("train")) {
      ObjectReader r(*train, "train", issues);
      TrainConfig& t = c.train;
      r.get("prompt_batch", t.prompt_batch);
      r.get("group_size", t.group_size);
      r.get("n_minibatches", t.n_minibatches);
      r.get("eps_clip", t.eps_clip);
      r.get("learning_rate", t.adam.learning_rate);
      r.get("adam_beta1", t.adam.beta1);
      r.get("adam_beta2", t.adam.beta2);
      r.get("adam_eps", t.adam.eps);
      r.get("max_steps", t.max_steps);
      std::string strategy(to_string(t.prox_strategy));
      r.get("prox_strategy", strategy);
      try {
        t.prox_strategy = parse_strategy(strategy);
      } catch (const Error& e) {
        issues.push_back(std::string("train.prox_strategy: ") + e.what());
      }
      std::string timing = "auto";
      r.get("snapshot_timing", timing);
      if (timing == "auto") {
        t.snapshot_timing.reset();
      } else {
        try {
          t.snapshot_timing = parse_snapshot_timing(timing);
        } catch (const Error& e) {
          issues.push_back(std::string("train.snapshot_timing: ") + e.what() + " or auto");
        }
      }
      r.get("eval_every", t.eval_every);
      r.get("eval_prompts", t.eval_prompts);
      r.get("final_window", t.final_window);
    }
    if (const json* st = root.child("staleness")) {
      ObjectReader r(*st, "staleness", issues);
      r.get("s_max", c.staleness.s_max);
      if (const json* ls = r.child("lag_schedule")) {
        ObjectReader lr(*ls, "staleness.lag_schedule", issues);
        std::string kind;
        lr.get("kind", kind);
        try {
          if (kind == "fixed") {
            FixedLag f;
            lr.get("lag", f.lag);
            c.staleness.lag_schedule = LagSchedule(f);
          } else if (kind == "uniform") {
            UniformLag u;
            lr.get("max_lag", u.max_lag);
            c.staleness.lag_schedule = LagSchedule(u);
          } else if (kind == "trace") {
            TraceDriven tr;
            lr.get("file", c.lag_trace_file);
            if (lr.has("lags")) {
              lr.get("lags", tr.lags);
            } else if (!c.lag_trace_file.empty()) {
              std::filesystem::path p(c.lag_trace_file);
              if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
              tr = load_lag_trace(p);
            } else {
              lr.skip("lags");
              issues.push_back("staleness.lag_schedule: trace needs 'lags' or 'file'");
            }
            if (!tr.lags.empty()) c.staleness.lag_schedule = LagSchedule(tr);
          } else {
            issues.push_back("staleness.lag_schedule.kind must be fixed, uniform or trace, got '" +
                             kind + "'");
          }
        } catch (const Error& e) {
          issues.push_back(std::string("staleness.lag_schedule: ") + e.what());
        }
        lr.skip("lag");
        lr.skip("max_lag");
        lr.skip("lags");
        lr.skip("file");
      }
    }
    if (const json* cm = root.child("cost_model")) {
      ObjectReader r(*cm, "cost_model", issues);
      r.get("t_prox_recompute", c.cost_model.t_prox_recompute);
      r.get("t_prox_loglinear", c.cost_model.t_prox_loglinear);
      r.get("t_train_minibatch", c.cost_model.t_train_minibatch);
      r.get("t_rollout_per_sample", c.cost_model.t_rollout_per_sample);
    }
    if (const json* s = root.child("sampling")) {
      ObjectReader r(*s, "sampling", issues);
      r.get("temperature", c.sampling.temperature);
      r.get("top_p", c.sampling.top_p);
      if (s->is_object() && s->contains("top_k")) {
        const json& k = s->at("top_k");
        if (k.is_string() && k.get<std::string>() == "all") {
          c.sampling.top_k = 0;
        } else {
          r.get("top_k", c.sampling.top_k);
        }
      }
      r.skip("top_k");
    }
    std::string mode = "deterministic";
    root.get("mode", mode);
    if (mode == "deterministic") {
      c.mode = RunMode::kDeterministic;
    } else if (mode == "parallel") {
      c.mode = RunMode::kParallel;
    } else {
      issues.push_back("mode must be deterministic or parallel, got '" + mode + "'");
    }
    root.get("rollout_workers", c.rollout_workers);
    root.get("queue_capacity", c.queue_capacity);
    root.get("seed", c.seed);
    root.get("output_dir", c.output_dir);
    root.get("record_trajectories", c.record_trajectories);
  }
  c.staleness.lag_schedule = LagSchedule(c.staleness.lag_schedule.kind(), c.lag_seed());

  // Fields that failed to parse kept their defaults, so validating the rest
  // still reports every independent problem at once.
  for (auto& issue : validate(c)) issues.push_back(std::move(issue));
  if (!issues.empty()) throw ConfigError(std::move(issues));
  return c;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError({"override '" + assignment + "' must look like path.to.key=value"});
  }
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw ConfigError({"override path '" + path + "' has an empty segment"});
    if (!node->is_object()) throw ConfigError({"override path '" + path + "' crosses a non-object"});
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

json read_config_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot read config file " + path.string()});
  try {
    return json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw ConfigError({"config file " + path.string() + " is not valid JSON: " + e.what()});
  }
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides) {
  json j = read_config_json(path);
  for (const auto& o : overrides) apply_override(j, o);
  return config_from_json(j, path.parent_path());
}

Task make_task(const TaskConfig& config) {
  if (config.name == "digit_sum") return digit_sum_task(config.n_digits);
  if (config.name == "bandit") return bandit_task(config.arm_means);
  throw ConfigError({"unknown task '" + config.name + "'"});
}

}  // namespace proxlab
