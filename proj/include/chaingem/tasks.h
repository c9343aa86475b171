// chaingem/tasks.h

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

#ifndef CHAINGEM_TASKS_H_
#define CHAINGEM_TASKS_H_

// Synthetic sequence-recognition tasks. A task draws label sequences without
// immediate repeats, renders them through a prototype emitter, optionally
// passes them through a recording channel and adds white noise at a target
// SNR, then splits the result into train/dev/test.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "chaingem/common.h"
#include "chaingem/synthesizer.h"
#include "chaingem/utterance.h"

namespace chaingem {

struct TaskSpec {
  int task_id = 0;
  /// Empty means clean (no noise).
  std::optional<double> snr_db;
  int n_utterances = 1000;
  int length_min = 4;
  int length_max = 12;
  std::uint64_t seed = 0;
  /// Weight moved from each symbol's emission toward a seeded partner
  /// symbol's emission (0 = unchanged channel).
  double channel_mix = 0.0;
  int frames_per_symbol = kDefaultFramesPerSymbol;

  void validate() const;
};

struct SplitRatios {
  double train = 0.94;
  double dev = 0.03;
  double test = 0.03;
};

struct TaskDataset {
  TaskSpec spec;
  UtteranceList train;
  UtteranceList dev;
  UtteranceList test;
};

struct Splits {
  UtteranceList train;
  UtteranceList dev;
  UtteranceList test;
};

/// Labeled pairs plus feature-only items whose labels are withheld.
struct LabeledSplit {
  UtteranceList labeled;
  std::vector<Matrix> unlabeled;
};

struct NoiseResult {
  Matrix noisy;
  Matrix noise;
};

/// Ground-truth emitter for a synthetic world: prototype entries are
/// N(0, scale^2), emission noise has standard deviation emission_sigma.
SynthesizerModel make_prototypes(const SymbolAlphabet& alphabet, int feature_dim,
                                 double scale, double emission_sigma, std::uint64_t seed);

/// Mixes each prototype with that of a partner symbol drawn as a seeded
/// cyclic permutation: mu'_v = (1 - mix) mu_v + mix mu_partner(v).
SynthesizerModel apply_channel(const SynthesizerModel& proto, double mix, std::uint64_t seed);

/// One label sequence with length in [min_len, max_len] and no two equal
/// neighbours.
LabelSeq sample_labels(const SymbolAlphabet& alphabet, int min_len, int max_len, Rng& rng);
std::vector<LabelSeq> sample_label_sequences(const SymbolAlphabet& alphabet, std::size_t n,
                                             int min_len, int max_len, std::uint64_t seed);

/// x + n with n i.i.d. N(0, s^2), s^2 = mean(x^2) / 10^(snr_db / 10).
Matrix add_noise(const Eigen::Ref<const Matrix>& x, double snr_db, std::uint64_t seed);
/// Same draw as add_noise, also returning the noise sample.
NoiseResult add_noise_detailed(const Eigen::Ref<const Matrix>& x, double snr_db,
                               std::uint64_t seed);

/// Dev and test sizes are round(ratio * n); train takes the remainder.
Splits split_dataset(UtteranceList utterances, const SplitRatios& ratios, std::uint64_t seed);

/// round(fraction * |train|) labeled items; the rest expose features only.
LabeledSplit split_labeled_unlabeled(const UtteranceList& train, double labeled_fraction,
                                     std::uint64_t seed);

TaskDataset make_task(const TaskSpec& spec, const SymbolAlphabet& alphabet,
                      const SynthesizerModel& proto, const SplitRatios& ratios = {});

// Line records: task_id <TAB> split <TAB> labels <TAB> rows cols values...
// (space-separated, row-major, shortest round-trip decimal).
void write_dataset_records(std::ostream& os, const TaskDataset& data);
/// Returns utterances grouped by split name ("train", "dev", "test").
TaskDataset read_dataset_records(std::istream& is);

}  // namespace chaingem

#endif  // CHAINGEM_TASKS_H_
