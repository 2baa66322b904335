#include "proxlab/metrics_io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "proxlab/error.hpp"

namespace proxlab {

using nlohmann::json;

namespace {

const std::vector<std::string> kRequired = {
    "schema_version", "step",          "sim_time_s",     "strategy",     "objective",
    "task_reward_mean", "entropy_mean", "iw_max",        "iw_min",       "clipped_tokens",
    "token_count",    "staleness_hist", "forward_pass_count", "grad_norm", "prox_time_s",
    "eval_reward"};

double mean_of(const std::vector<json>& records, const char* field) {
  double s = 0.0;
  for (const auto& r : records) s += r.at(field).get<double>();
  return s / static_cast<double>(records.size());
}

}  // namespace

const std::vector<std::string>& curve_quantities() {
  static const std::vector<std::string> q = {
      "objective",   "task_reward_mean", "entropy_mean", "iw_max",
      "iw_min",      "clipped_tokens",   "token_count",  "forward_pass_count",
      "grad_norm",   "prox_time_s",      "sim_time_s",   "eval_reward"};
  return q;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<json> read_metrics(const std::filesystem::path& metrics_file) {
  std::ifstream in(metrics_file, std::ios::binary);
  if (!in) throw SchemaError("cannot read metrics file " + metrics_file.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  if (!text.empty() && text.back() != '\n') {
    throw SchemaError(metrics_file.string() + ": truncated (last line has no newline)");
  }
  std::vector<json> records;
  std::istringstream lines(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.empty()) continue;
    json r;
    try {
      r = json::parse(line);
    } catch (const json::exception& e) {
      throw SchemaError(metrics_file.string() + ":" + std::to_string(lineno) +
                        ": malformed record (" + e.what() + ")");
    }
    if (!r.is_object()) {
      throw SchemaError(metrics_file.string() + ":" + std::to_string(lineno) +
                        ": record is not an object");
    }
    if (r.value("schema_version", -1) != kMetricsSchemaVersion) {
      throw SchemaError(metrics_file.string() + ":" + std::to_string(lineno) +
                        ": schema_version mismatch (expected " +
                        std::to_string(kMetricsSchemaVersion) + ")");
    }
    for (const auto& f : kRequired) {
      if (!r.contains(f)) {
        throw SchemaError(metrics_file.string() + ":" + std::to_string(lineno) +
                          ": missing field '" + f + "'");
      }
    }
    records.push_back(std::move(r));
  }
  return records;
}

RunSummary summarize_records(const std::vector<json>& records, std::size_t final_window) {
  if (records.empty()) throw SchemaError("summarize: run has no step records");
  RunSummary s;
  s.strategy = records.front().at("strategy").get<std::string>();
  s.steps = records.size();
  s.total_sim_time_s = records.back().at("sim_time_s").get<double>();
  s.task_reward_mean = mean_of(records, "task_reward_mean");
  s.entropy_mean = mean_of(records, "entropy_mean");
  s.iw_max_mean = mean_of(records, "iw_max");
  s.iw_min_mean = mean_of(records, "iw_min");
  s.clipped_tokens_mean = mean_of(records, "clipped_tokens");
  for (const auto& r : records) {
    s.prox_time_total_s += r.at("prox_time_s").get<double>();
    s.forward_pass_total += r.at("forward_pass_count").get<std::size_t>();
  }
  std::vector<double> evals;
  for (const auto& r : records) {
    if (!r.at("eval_reward").is_null()) evals.push_back(r.at("eval_reward").get<double>());
  }
  if (!evals.empty()) {
    const std::size_t w = std::min(std::max<std::size_t>(final_window, 1), evals.size());
    double sum = 0.0;
    for (std::size_t i = evals.size() - w; i < evals.size(); ++i) sum += evals[i];
    s.final_reward = sum / static_cast<double>(w);
  }
  return s;
}

RunSummary summarize(const std::filesystem::path& run_dir) {
  std::size_t window = 5;
  const auto cfg = run_dir / "config.json";
  if (std::filesystem::exists(cfg)) {
    std::ifstream in(cfg);
    const json c = json::parse(in, nullptr, true, true);
    if (c.contains("train") && c["train"].contains("final_window")) {
      window = c["train"]["final_window"].get<std::size_t>();
    }
  }
  return summarize_records(read_metrics(run_dir / "metrics.jsonl"), window);
}

json summary_to_json(const RunSummary& s) {
  return {{"schema_version", kMetricsSchemaVersion},
          {"strategy", s.strategy},
          {"steps", s.steps},
          {"total_sim_time_s", s.total_sim_time_s},
          {"final_reward", s.final_reward},
          {"task_reward_mean", s.task_reward_mean},
          {"entropy_mean", s.entropy_mean},
          {"iw_max_mean", s.iw_max_mean},
          {"iw_min_mean", s.iw_min_mean},
          {"clipped_tokens_mean", s.clipped_tokens_mean},
          {"prox_time_total_s", s.prox_time_total_s},
          {"forward_pass_total", s.forward_pass_total}};
}

RunSummary summary_from_json(const json& j) {
  if (j.value("schema_version", -1) != kMetricsSchemaVersion) {
    throw SchemaError("summary: schema_version mismatch");
  }
  RunSummary s;
  try {
    s.strategy = j.at("strategy").get<std::string>();
    s.steps = j.at("steps").get<std::size_t>();
    s.total_sim_time_s = j.at("total_sim_time_s").get<double>();
    s.final_reward = j.at("final_reward").get<double>();
    s.task_reward_mean = j.at("task_reward_mean").get<double>();
    s.entropy_mean = j.at("entropy_mean").get<double>();
    s.iw_max_mean = j.at("iw_max_mean").get<double>();
    s.iw_min_mean = j.at("iw_min_mean").get<double>();
    s.clipped_tokens_mean = j.at("clipped_tokens_mean").get<double>();
    s.prox_time_total_s = j.at("prox_time_total_s").get<double>();
    s.forward_pass_total = j.at("forward_pass_total").get<std::size_t>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("summary: ") + e.what());
  }
  return s;
}

void write_summary(const RunSummary& s, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << summary_to_json(s).dump(2) << '\n';
}

RunSummary read_summary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot read " + path.string());
  try {
    return summary_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

std::string export_curves(const std::vector<std::filesystem::path>& run_dirs,
                          const std::string& quantity, XAxis x_axis) {
  const auto& valid = curve_quantities();
  if (std::find(valid.begin(), valid.end(), quantity) == valid.end()) {
    std::string names;
    for (const auto& v : valid) names += (names.empty() ? "" : ", ") + v;
    throw DomainError("unknown quantity '" + quantity + "'; valid: " + names);
  }
  std::string csv = "run_id,x,y\n";
  for (const auto& dir : run_dirs) {
    const std::string run_id = dir.filename().empty() ? dir.parent_path().filename().string()
                                                      : dir.filename().string();
    for (const auto& r : read_metrics(dir / "metrics.jsonl")) {
      const json& y = r.at(quantity);
      if (y.is_null()) continue;
      const double x = x_axis == XAxis::kStep ? r.at("step").get<double>()
                                              : r.at("sim_time_s").get<double>();
      csv += run_id + "," + format_double(x) + "," + format_double(y.get<double>()) + "\n";
    }
  }
  return csv;
}

}  // namespace proxlab
