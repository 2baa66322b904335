#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "proxlab/cli.hpp"
#include "proxlab/diagnostics.hpp"
#include "proxlab/error.hpp"
#include "proxlab/experiment.hpp"
#include "proxlab/rl_core.hpp"

namespace py = pybind11;
using namespace proxlab;

namespace {

py::object to_py(const nlohmann::json& j) {
  switch (j.type()) {
    case nlohmann::json::value_t::null: return py::none();
    case nlohmann::json::value_t::boolean: return py::bool_(j.get<bool>());
    case nlohmann::json::value_t::number_integer: return py::int_(j.get<std::int64_t>());
    case nlohmann::json::value_t::number_unsigned: return py::int_(j.get<std::uint64_t>());
    case nlohmann::json::value_t::number_float: return py::float_(j.get<double>());
    case nlohmann::json::value_t::string: return py::str(j.get<std::string>());
    case nlohmann::json::value_t::array: {
      py::list l;
      for (const auto& x : j) l.append(to_py(x));
      return l;
    }
    default: {
      py::dict d;
      for (const auto& [k, v] : j.items()) d[py::str(k)] = to_py(v);
      return d;
    }
  }
}

py::dict loss_result(const Surrogate& s, const ad::Value& theta) {
  py::dict d;
  d["objective"] = s.report.objective;
  d["grad"] = theta.grad().values;
  d["clipped_tokens"] = s.report.clipped_tokens;
  d["iw_max"] = s.report.iw_max;
  d["iw_min"] = s.report.iw_min;
  d["token_count"] = s.report.token_count;
  return d;
}

ad::Value constant(const std::vector<double>& v) { return ad::Value::constant(Tensor::vector(v)); }

}  // namespace

PYBIND11_MODULE(_proxlab, m) {
  m.doc() = "Asynchronous RL training with an approximated proximal policy on toy tasks";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<VersionError>(m, "VersionError", PyExc_RuntimeError);
  py::register_exception<NonFiniteError>(m, "NonFiniteError", PyExc_ArithmeticError);

  m.def("alpha", py::overload_cast<std::int64_t>(&alpha), py::arg("staleness"));
  m.def(
      "approx_prox_logp",
      [](const std::vector<double>& old_logp, const std::vector<double>& cur_logp,
         const std::vector<std::int64_t>& versions, std::int64_t current_version) {
        return approx_prox_logp(old_logp, cur_logp, versions, current_version);
      },
      py::arg("old_logp"), py::arg("cur_logp"), py::arg("versions"), py::arg("current_version"));
  m.def(
      "coupled_ppo_loss",
      [](const std::vector<double>& logp_theta, const std::vector<double>& logp_old,
         const std::vector<double>& adv, double eps) {
        ad::Value t = ad::Value::variable(Tensor::vector(logp_theta));
        Surrogate s = coupled_ppo_loss(t, constant(logp_old), constant(adv), eps);
        ad::backward(s.objective);
        return loss_result(s, t);
      },
      py::arg("logp_theta"), py::arg("logp_old"), py::arg("adv"), py::arg("eps") = 0.2,
      "Objective and its gradient w.r.t. logp_theta.");
  m.def(
      "decoupled_loss",
      [](const std::vector<double>& logp_theta, const std::vector<double>& logp_prox,
         const std::vector<double>& logp_behav, const std::vector<double>& adv, double eps) {
        ad::Value t = ad::Value::variable(Tensor::vector(logp_theta));
        Surrogate s = decoupled_loss(t, constant(logp_prox), constant(logp_behav), constant(adv), eps);
        ad::backward(s.objective);
        return loss_result(s, t);
      },
      py::arg("logp_theta"), py::arg("logp_prox"), py::arg("logp_behav"), py::arg("adv"),
      py::arg("eps") = 0.2, "Objective and its gradient w.r.t. logp_theta.");
  m.def(
      "grpo_advantages",
      [](const std::vector<double>& rewards, const std::vector<std::int64_t>& group_ids, double eps_std) {
        return grpo_advantages(rewards, group_ids, eps_std);
      },
      py::arg("rewards"), py::arg("group_ids"), py::arg("eps_std") = 1e-6);

  m.def(
      "load_config",
      [](const std::filesystem::path& path, const std::vector<std::string>& overrides) {
        return to_py(config_to_json(load_config(path, overrides)));
      },
      py::arg("path"), py::arg("overrides") = std::vector<std::string>{},
      "Resolved configuration as a dict.");
  m.def(
      "run_experiment",
      [](const std::filesystem::path& path, const std::vector<std::string>& overrides) {
        const ExperimentConfig config = load_config(path, overrides);
        RunResult r;
        {
          py::gil_scoped_release release;
          r = run_experiment(config);
        }
        py::dict d;
        d["run_dir"] = r.run_dir.string();
        d["summary"] = to_py(summary_to_json(r.summary));
        return d;
      },
      py::arg("config"), py::arg("overrides") = std::vector<std::string>{});
  m.def(
      "summarize", [](const std::filesystem::path& dir) { return to_py(summary_to_json(summarize(dir))); },
      py::arg("run_dir"));
  m.def(
      "gradcheck",
      [](std::size_t trials, double tolerance, std::uint64_t seed) {
        const GradcheckReport r = run_gradcheck(trials, tolerance, seed);
        py::dict d;
        d["passed"] = r.passed();
        py::list per;
        for (const auto& s : r.strategies) {
          py::dict x;
          x["strategy"] = std::string(to_string(s.strategy));
          x["trials"] = s.trials;
          x["scored"] = s.scored;
          x["failures"] = s.failures;
          x["worst_rel_error"] = s.worst_rel_error;
          per.append(x);
        }
        d["strategies"] = per;
        return d;
      },
      py::arg("trials") = 100, py::arg("tolerance") = 1e-5, py::arg("seed") = 0);
  m.def(
      "bench_prox",
      [](std::size_t hidden, std::size_t tokens, std::size_t repeats) {
        const BenchReport r = bench_prox(hidden, tokens, repeats);
        py::dict d;
        d["recompute_median_s"] = r.recompute_median_s;
        d["loglinear_median_s"] = r.loglinear_median_s;
        d["ratio"] = r.ratio();
        d["recompute_forward_pass_count"] = r.recompute_forward_passes;
        d["loglinear_forward_pass_count"] = r.loglinear_forward_passes;
        return d;
      },
      py::arg("hidden") = 256, py::arg("tokens") = 1024, py::arg("repeats") = 5);
  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::vector<std::string> full = {"proxlab"};
        full.insert(full.end(), args.begin(), args.end());
        std::vector<const char*> argv;
        for (const auto& a : full) argv.push_back(a.c_str());
        std::ostringstream out, err;
        const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command line in-process; returns (exit_code, stdout, stderr).");
}
