// python/src/bindings.cc

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <iostream>
#include <string>
#include <vector>

#include "chaingem/chain.h"
#include "chaingem/cli.h"
#include "chaingem/gem.h"
#include "chaingem/metrics.h"
#include "chaingem/tasks.h"

namespace py = pybind11;

namespace chaingem {
namespace {

py::tuple project_py(const Vector& g, const std::vector<Vector>& refs, double qp_tolerance,
                     int qp_max_iterations) {
  GemConfig cfg;
  cfg.qp_tolerance = qp_tolerance;
  cfg.qp_max_iterations = qp_max_iterations;
  cfg.validate();
  std::vector<GradientVector> rs;
  rs.reserve(refs.size());
  for (const auto& r : refs) rs.emplace_back(r);
  const ProjectionResult p = project(GradientVector(g), rs, cfg);
  return py::make_tuple(p.projected.values, p.duals);
}

py::dict metrics_py(const std::vector<std::vector<double>>& entries,
                    const std::vector<double>& finetune_reference) {
  ErrorMatrix r;
  r.entries = entries;
  for (std::size_t j = 0; j < finetune_reference.size(); ++j) {
    r.task_ids.push_back(static_cast<int>(j));
  }
  const CLMetrics m = compute_metrics(r, finetune_reference);
  py::dict d;
  d["avg"] = m.avg;
  d["bwt"] = m.bwt;
  d["fwt"] = m.fwt;
  return d;
}

int cli_py(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"chaingem"};
  for (const auto& a : args) argv.push_back(a.c_str());
  py::gil_scoped_release release;
  return cli::run_cli(static_cast<int>(argv.size()), argv.data(), std::cout, std::cerr);
}

}  // namespace
}  // namespace chaingem

PYBIND11_MODULE(_core, m) {
  using namespace chaingem;
  m.doc() = "Recognizer/synthesizer chain with GEM continual learning";
  m.attr("__version__") = PROJECT_VERSION;

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);

  m.def("default_config", [] { return config_to_json(PipelineConfig{}); },
        "Default pipeline configuration as JSON text.");
  m.def("normalize_config",
        [](const std::string& text) { return config_to_json(parse_config(text)); },
        py::arg("config_json"),
        "Validates a configuration and returns it with every default filled in.");
  m.def(
      "run_pipeline",
      [](const std::string& text, const std::string& out_dir) {
        const PipelineConfig c = parse_config(text);
        py::gil_scoped_release release;
        run_pipeline(c, out_dir);
      },
      py::arg("config_json"), py::arg("out_dir"));
  m.def("cli", &cli_py, py::arg("args"), "Runs the command line front end; returns its exit code.");

  m.def("edit_distance",
        [](const std::vector<int>& ref, const std::vector<int>& hyp) {
          return edit_distance(ref, hyp);
        },
        py::arg("reference"), py::arg("hypothesis"));
  m.def("cer", [](const std::vector<int>& ref, const std::vector<int>& hyp) { return cer(ref, hyp); },
        py::arg("reference"), py::arg("hypothesis"));
  m.def("project", &project_py, py::arg("g"), py::arg("refs"), py::arg("qp_tolerance") = 1e-9,
        py::arg("qp_max_iterations") = 10000,
        "Projects g onto {x : <x, r> >= 0 for every r in refs}; returns (projected, duals).");
  m.def("add_noise",
        [](const Matrix& x, double snr_db, std::uint64_t seed) { return add_noise(x, snr_db, seed); },
        py::arg("x"), py::arg("snr_db"), py::arg("seed"));
  m.def("compute_metrics", &metrics_py, py::arg("errors"), py::arg("finetune_reference"),
        "AVG/BWT/FWT of a square error matrix (rows are phases, columns tasks).");
}
