// src/cli.cc

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

#include "chaingem/cli.h"

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "chaingem/chain.h"
#include "io_util.h"
#include "json.hpp"

namespace chaingem::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

std::string output_root(const std::string& config_output_dir) {
  if (const char* env = std::getenv(kOutEnv); env != nullptr && *env != '\0') return env;
  if (!config_output_dir.empty()) return config_output_dir;
  return "runs";
}

std::string config_hash(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// manifest.json, rewritten atomically on every stage transition.
class Manifest {
 public:
  Manifest(std::string path, const PipelineConfig& config, const std::string& config_text)
      : path_(std::move(path)) {
    doc_["version"] = kVersion;
    doc_["config_hash"] = config_hash(config_text);
    doc_["seed"] = config.seed;
    doc_["method"] = method_name(config.method);
    doc_["started_at"] = utc_now();
    doc_["finished_at"] = nullptr;
    doc_["status"] = "running";
    for (int s = 1; s <= 3; ++s) {
      doc_["stages"][std::to_string(s)] =
          config.stages[static_cast<std::size_t>(s - 1)] ? "pending" : "skipped";
    }
    write();
  }

  void stage(int s, const std::string& status) {
    doc_["stages"][std::to_string(s)] = status;
    write();
  }

  void finalize(const std::string& status, const std::string& message = {}) {
    if (finalized_) return;
    finalized_ = true;
    for (auto& [key, value] : doc_["stages"].items()) {
      if (value == "running" && status != "complete") value = "failed";
    }
    doc_["status"] = status;
    doc_["finished_at"] = utc_now();
    if (!message.empty()) doc_["error"] = message;
    write();
  }

 private:
  void write() const { io::write_file_atomic(path_, doc_.dump(2) + "\n"); }

  std::string path_;
  ordered_json doc_;
  bool finalized_ = false;
};

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DivergenceError& e) {
    err << "training diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

std::string read_text(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Runs the pipeline into `dir` under a manifest. Exceptions propagate after
// the manifest is finalized as failed.
void execute(const PipelineConfig& config, const std::string& dir) {
  fs::create_directories(dir);
  const std::string canonical = config_to_json(config);
  Manifest manifest((fs::path(dir) / kManifestFile).string(), config, canonical);
  try {
    run_pipeline(config, dir,
                 [&](int stage, const std::string& status) { manifest.stage(stage, status); });
  } catch (const std::exception& e) {
    manifest.finalize("failed", e.what());
    throw;
  }
  manifest.finalize("complete");
}

void apply_stages(const std::vector<int>& stages, PipelineConfig* config) {
  if (stages.empty()) throw ConfigError("--stages must name at least one stage");
  config->stages = {false, false, false};
  for (int s : stages) {
    if (s < 1 || s > 3) throw ConfigError("--stages entries must be 1, 2 or 3");
    config->stages[static_cast<std::size_t>(s - 1)] = true;
  }
}

std::string fraction_label(double f) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << f;
  return os.str();
}

struct Cell {
  double fraction;
  std::uint64_t seed;
  std::string dir;
};

PipelineConfig cell_config(PipelineConfig config, const Cell& cell) {
  config.labeled_fraction = cell.fraction;
  config.seed = cell.seed;
  // Nothing is left unlabeled at fraction 1, so there is no stage 2.
  if (cell.fraction >= 1.0) config.stages[1] = false;
  config.validate();
  return config;
}

int run_cell(const PipelineConfig& base, const Cell& cell, std::ostream& err) {
  return guarded(err, [&] {
    execute(cell_config(base, cell), cell.dir);
    return kExitOk;
  });
}

std::string csv_number(const json& metrics, const std::string& key) {
  auto it = metrics.find(key);
  if (it == metrics.end() || !it->is_number()) return "";
  return io::format_double(it->get<double>());
}

}  // namespace

int cmd_run(const RunOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    PipelineConfig config = parse_config(read_text(options.config_path));
    if (options.method) config.method = parse_method(*options.method);
    if (options.seed) config.seed = *options.seed;
    if (options.stages) apply_stages(*options.stages, &config);
    config.validate();
    const std::string dir =
        !options.out.empty()
            ? options.out
            : (fs::path(output_root(config.output_dir)) /
               (method_name(config.method) + "-seed" + std::to_string(config.seed)))
                  .string();
    execute(config, dir);
    out << "run complete: " << dir << "\n";
    return kExitOk;
  });
}

int cmd_sweep(const SweepOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    PipelineConfig config = parse_config(read_text(options.config_path));
    if (options.method) config.method = parse_method(*options.method);
    if (options.labeled_fractions.empty()) throw ConfigError("--labeled-fractions is empty");
    if (options.seeds.empty()) throw ConfigError("--seeds is empty");
    if (options.jobs < 1) throw ConfigError("--jobs must be positive");
    for (double f : options.labeled_fractions) {
      if (!(f > 0.0 && f <= 1.0)) throw ConfigError("labeled fractions must lie in (0, 1]");
    }
    const std::string root = !options.out.empty()
                                 ? options.out
                                 : (fs::path(output_root(config.output_dir)) / "sweep").string();

    std::vector<Cell> cells;
    for (double f : options.labeled_fractions) {
      for (std::uint64_t s : options.seeds) {
        const std::string name = "frac" + fraction_label(f) + "-seed" + std::to_string(s);
        cells.push_back({f, s, (fs::path(root) / name).string()});
      }
    }
    // Fail fast on a config that no cell could run.
    for (const auto& c : cells) cell_config(config, c);
    fs::create_directories(root);

    std::vector<int> codes(cells.size(), kExitFailure);
    if (options.jobs == 1) {
      for (std::size_t i = 0; i < cells.size(); ++i) codes[i] = run_cell(config, cells[i], err);
    } else {
      std::map<pid_t, std::size_t> running;
      std::size_t next = 0;
      err.flush();
      std::cout.flush();
      while (next < cells.size() || !running.empty()) {
        while (next < cells.size() && running.size() < static_cast<std::size_t>(options.jobs)) {
          const pid_t pid = fork();
          if (pid < 0) throw Error("fork failed");
          if (pid == 0) {
            const int code = run_cell(config, cells[next], std::cerr);
            std::cerr.flush();
            _exit(code);
          }
          running[pid] = next++;
        }
        int status = 0;
        const pid_t done = waitpid(-1, &status, 0);
        if (done < 0) throw Error("waitpid failed");
        auto it = running.find(done);
        if (it == running.end()) continue;
        codes[it->second] = WIFEXITED(status) ? WEXITSTATUS(status) : kExitFailure;
        running.erase(it);
      }
    }

    std::size_t tasks = config.num_tasks();
    std::ostringstream csv;
    csv << "labeled_fraction,seed,status";
    for (std::size_t j = 0; j < tasks; ++j) csv << ",final_cer_task_" << j;
    csv << ",avg,bwt,fwt\n";
    bool any_failed = false;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      json metrics;
      bool ok = codes[i] == kExitOk;
      if (ok) {
        try {
          metrics = json::parse(io::read_file((fs::path(cells[i].dir) / kMetricsFile).string()));
        } catch (const std::exception&) {
          ok = false;
        }
      }
      any_failed = any_failed || !ok;
      csv << io::format_double(cells[i].fraction) << "," << cells[i].seed << ","
          << (ok ? "ok" : "failed");
      for (std::size_t j = 0; j < tasks; ++j) {
        csv << "," << (ok ? csv_number(metrics, "final_cer_task_" + std::to_string(j)) : "");
      }
      for (const char* key : {"avg", "bwt", "fwt"}) {
        csv << "," << (ok ? csv_number(metrics, key) : "");
      }
      csv << "\n";
    }
    io::write_file_atomic((fs::path(root) / kSummaryFile).string(), csv.str());
    out << "sweep summary: " << (fs::path(root) / kSummaryFile).string() << "\n";
    if (any_failed) {
      err << "one or more sweep cells failed\n";
      return kExitSweepCellFailed;
    }
    return kExitOk;
  });
}

int cmd_report(const ReportOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&]() -> int {
    const fs::path run(options.run_dir);
    const fs::path manifest_path = run / kManifestFile;
    const fs::path metrics_path = run / kMetricsFile;
    if (!fs::exists(manifest_path) || !fs::exists(metrics_path)) {
      err << "incomplete run: " << options.run_dir << " lacks manifest.json or metrics.json\n";
      return kExitIncompleteRun;
    }
    json manifest;
    json metrics;
    try {
      manifest = json::parse(io::read_file(manifest_path.string()));
      metrics = json::parse(io::read_file(metrics_path.string()));
    } catch (const json::exception& e) {
      err << "incomplete run: unreadable run record (" << e.what() << ")\n";
      return kExitIncompleteRun;
    }
    if (manifest.value("status", "") != "complete") {
      err << "incomplete run: status is " << manifest.value("status", std::string("unknown"))
          << "\n";
      return kExitIncompleteRun;
    }
    const bool has_stage3 = metrics.contains("avg");
    if (has_stage3 && (!fs::exists(run / kErrorMatrixFile) || !fs::exists(run / kCurvesFile))) {
      err << "incomplete run: stage-3 artifacts missing\n";
      return kExitIncompleteRun;
    }

    const std::size_t tasks = metrics.value("num_tasks", std::size_t{0});
    const std::string method = metrics.value("method", std::string("?"));
    const auto cell = [](const json& m, const std::string& key) {
      std::ostringstream os;
      auto it = m.find(key);
      if (it == m.end() || !it->is_number()) return std::string("-");
      os << std::fixed << std::setprecision(4) << it->get<double>();
      return os.str();
    };
    out << std::left << std::setw(12) << "method";
    for (std::size_t j = 0; j < tasks; ++j) out << std::setw(10) << ("task_" + std::to_string(j));
    out << "\n";
    out << std::setw(12) << "pretrained" << std::setw(10) << cell(metrics, "stage1_test_cer");
    for (std::size_t j = 1; j < tasks; ++j) {
      out << std::setw(10) << cell(metrics, "stage1_cross_test_cer_task_" + std::to_string(j));
    }
    out << "\n";
    if (has_stage3) {
      out << std::setw(12) << method;
      for (std::size_t j = 0; j < tasks; ++j) {
        out << std::setw(10) << cell(metrics, "final_cer_task_" + std::to_string(j));
      }
      out << "\n";
      if (method != "finetune") {
        out << std::setw(12) << "finetune";
        for (std::size_t j = 0; j < tasks; ++j) {
          out << std::setw(10) << cell(metrics, "reference_final_cer_task_" + std::to_string(j));
        }
        out << "\n";
      }
      out << "avg " << cell(metrics, "avg") << "  bwt " << cell(metrics, "bwt") << "  fwt "
          << cell(metrics, "fwt") << "\n";

      std::ifstream is(run / kCurvesFile);
      const Curve curve = read_curve_csv(is);
      const std::string dest =
          !options.curves_out.empty()
              ? options.curves_out
              : (fs::current_path() / (fs::absolute(run).lexically_normal().filename().string() +
                                       "_curves.csv"))
                    .string();
      const fs::path dest_abs = fs::absolute(dest).lexically_normal();
      const fs::path run_abs = fs::absolute(run).lexically_normal();
      const auto rel = dest_abs.lexically_relative(run_abs);
      if (!rel.empty() && *rel.begin() != "..") {
        throw ConfigError("--curves-out must lie outside the run directory");
      }
      std::ostringstream csv;
      write_curve_csv(csv, curve);
      io::write_file_atomic(dest, csv.str());
      out << "curves: " << dest << "\n";
    }
    return kExitOk;
  });
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Continual learning with a recognizer/synthesizer chain and GEM replay",
               "chaingem"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  RunOptions run;
  std::string run_method;
  std::uint64_t run_seed = 0;
  std::vector<int> run_stages;
  CLI::App* run_cmd = app.add_subcommand("run", "Run the pipeline once");
  run_cmd->add_option("--config", run.config_path, "Config JSON")->required();
  auto* method_opt = run_cmd->add_option("--method", run_method, "gem|finetune|multitask|ewc");
  auto* seed_opt = run_cmd->add_option("--seed", run_seed, "Master seed");
  auto* stages_opt =
      run_cmd->add_option("--stages", run_stages, "Stages to run, e.g. 1,2,3")->delimiter(',');
  run_cmd->add_option("--out", run.out, "Run directory");

  SweepOptions sweep;
  std::string sweep_method;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "Run a labeled-fraction x seed grid");
  sweep_cmd->add_option("--config", sweep.config_path, "Config JSON")->required();
  sweep_cmd->add_option("--labeled-fractions", sweep.labeled_fractions, "e.g. 0.3,0.5,0.7")
      ->delimiter(',')
      ->required();
  sweep_cmd->add_option("--seeds", sweep.seeds, "e.g. 0,1,2")->delimiter(',')->required();
  auto* sweep_method_opt = sweep_cmd->add_option("--method", sweep_method, "Override method");
  sweep_cmd->add_option("--out", sweep.out, "Sweep root directory");
  sweep_cmd->add_option("--jobs", sweep.jobs, "Parallel cell processes");

  ReportOptions report;
  CLI::App* report_cmd = app.add_subcommand("report", "Summarize a completed run");
  report_cmd->add_option("--run", report.run_dir, "Run directory")->required();
  report_cmd->add_option("--curves-out", report.curves_out, "Where to write the curves CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion& e) {
    out << kVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    return kExitConfig;
  }

  if (run_cmd->parsed()) {
    if (method_opt->count() > 0) run.method = run_method;
    if (seed_opt->count() > 0) run.seed = run_seed;
    if (stages_opt->count() > 0) run.stages = run_stages;
    return cmd_run(run, out, err);
  }
  if (sweep_cmd->parsed()) {
    if (sweep_method_opt->count() > 0) sweep.method = sweep_method;
    return cmd_sweep(sweep, out, err);
  }
  return cmd_report(report, out, err);
}

}  // namespace chaingem::cli
