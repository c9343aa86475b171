// chaingem/cli.h

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

#ifndef CHAINGEM_CLI_H_
#define CHAINGEM_CLI_H_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace chaingem::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDivergence = 3;
inline constexpr int kExitSweepCellFailed = 4;
inline constexpr int kExitIncompleteRun = 5;

inline constexpr char kVersion[] = "chaingem 0.1.0";
inline constexpr char kOutEnv[] = "CHAINGEM_OUT";
inline constexpr char kSummaryFile[] = "summary.csv";

struct RunOptions {
  std::string config_path;
  std::optional<std::string> method;
  std::optional<std::uint64_t> seed;
  /// Subset of {1, 2, 3}; overrides the config's stage list.
  std::optional<std::vector<int>> stages;
  /// Empty: <output root>/<method>-seed<seed>.
  std::string out;
};

struct SweepOptions {
  std::string config_path;
  std::vector<double> labeled_fractions;
  std::vector<std::uint64_t> seeds;
  std::optional<std::string> method;
  /// Empty: <output root>/sweep.
  std::string out;
  int jobs = 1;
};

struct ReportOptions {
  std::string run_dir;
  /// Empty: ./<run directory name>_curves.csv
  std::string curves_out;
};

/// --out, else $CHAINGEM_OUT, else the config's output_dir, else "runs".
std::string output_root(const std::string& config_output_dir);

/// 64-bit FNV-1a of the text, as 16 hex digits.
std::string config_hash(const std::string& text);

int cmd_run(const RunOptions& options, std::ostream& out, std::ostream& err);
int cmd_sweep(const SweepOptions& options, std::ostream& out, std::ostream& err);
int cmd_report(const ReportOptions& options, std::ostream& out, std::ostream& err);

/// Parses argv and dispatches to a subcommand.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace chaingem::cli

#endif  // CHAINGEM_CLI_H_
