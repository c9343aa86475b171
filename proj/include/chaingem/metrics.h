// chaingem/metrics.h

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

#ifndef CHAINGEM_METRICS_H_
#define CHAINGEM_METRICS_H_

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "chaingem/recognizer.h"
#include "chaingem/utterance.h"

namespace chaingem {

/// Levenshtein distance with unit insertion, deletion and substitution costs.
std::size_t edit_distance(std::span<const int> reference,
                          std::span<const int> hypothesis);

/// edit_distance / |reference|. May exceed 1 for long hypotheses.
double cer(std::span<const int> reference, std::span<const int> hypothesis);

using Decoder = std::function<LabelSeq(const Matrix& features)>;

/// Total edits over total reference length.
double corpus_cer(const Decoder& decoder, std::span<const Utterance> utts);
double corpus_cer(const RecognizerModel& model, std::span<const Utterance> utts);

/// R[i][j]: CER on task j after phase i. Phase 0 is the base-trained model.
struct ErrorMatrix {
  std::vector<std::string> phase_labels;
  std::vector<int> task_ids;
  std::vector<std::vector<double>> entries;

  std::size_t num_phases() const { return entries.size(); }
  std::size_t num_tasks() const { return task_ids.size(); }
  double at(std::size_t phase, std::size_t task) const {
    return entries.at(phase).at(task);
  }
  void validate() const;
};

struct CLMetrics {
  double avg = 0.0;
  /// Mean rise in old-task error over the run; positive means forgetting.
  double bwt = 0.0;
  /// Mean new-task error relative to plain fine-tuning; negative is better.
  double fwt = 0.0;
};

ErrorMatrix build_error_matrix(std::span<const Decoder> phases,
                               const std::vector<std::span<const Utterance>>& tests,
                               std::vector<int> task_ids = {});
ErrorMatrix build_error_matrix(std::span<const RecognizerModel> snapshots,
                               const std::vector<std::span<const Utterance>>& tests,
                               std::vector<int> task_ids = {});

/// Requires a square matrix (one phase per task). finetune_reference is
/// indexed by task position; entry 0 is ignored.
CLMetrics compute_metrics(const ErrorMatrix& r,
                          std::span<const double> finetune_reference);

void write_error_matrix_csv(std::ostream& os, const ErrorMatrix& r);
ErrorMatrix read_error_matrix_csv(std::istream& is);

}  // namespace chaingem

#endif  // CHAINGEM_METRICS_H_
