// chaingem/synthesizer.h

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

#ifndef CHAINGEM_SYNTHESIZER_H_
#define CHAINGEM_SYNTHESIZER_H_

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "chaingem/common.h"
#include "chaingem/curve.h"
#include "chaingem/recognizer.h"
#include "chaingem/utterance.h"

namespace chaingem {

/// Label-to-features model: every symbol emits its prototype row, optionally
/// with isotropic Gaussian noise of scale emission_sigma.
struct SynthesizerModel {
  Matrix prototypes;  // alphabet size x feature dim
  double emission_sigma = 0.0;
  std::vector<long> counts;  // frames observed per symbol when fitted

  int alphabet_size() const { return static_cast<int>(prototypes.rows()); }
  int feature_dim() const { return static_cast<int>(prototypes.cols()); }
  void validate() const;
};

/// Per-symbol frame means and the pooled residual standard deviation.
/// Throws Error naming any symbol that never occurs.
SynthesizerModel fit_synthesizer(std::span<const Utterance> pairs, int alphabet_size);

/// (frames_per_symbol * |labels|) x d frames; block t repeats the prototype of
/// labels[t], plus noise when with_noise is set.
Matrix synthesize(const SynthesizerModel& synth, std::span<const int> labels,
                  std::uint64_t seed, bool with_noise,
                  int frames_per_symbol = kDefaultFramesPerSymbol);

struct RefineConfig {
  TrainConfig train;
  /// Pseudo-labels are kept only when the mean per-frame max probability
  /// reaches this value.
  double confidence = 0.8;
  int frames_per_symbol = kDefaultFramesPerSymbol;
};

struct RefineRoundStats {
  int round = 0;
  std::size_t accepted = 0;
  std::size_t skipped_confidence = 0;
  std::size_t skipped_length = 0;
  std::size_t synthetic_pairs = 0;
};

struct RefineResult {
  RecognizerModel asr;
  SynthesizerModel synth;
  Curve curve;
  std::vector<RefineRoundStats> rounds;
};

/// Alternating recognizer/synthesizer improvement from unpaired data. Each
/// round: (a) pseudo-label the unlabeled features with the recognizer and re-fit
/// the synthesizer on labeled + confident pseudo pairs; (b) synthesize features
/// for the text-only label sequences and take one Adam pass over those pairs.
/// Eval targets are scored after every round (step = round number).
RefineResult refine_semi_supervised(const RecognizerModel& asr, const SynthesizerModel& synth,
                                    std::span<const Utterance> labeled,
                                    std::span<const Matrix> unlabeled_features,
                                    std::span<const LabelSeq> text_only_labels, int rounds,
                                    const RefineConfig& config, std::uint64_t seed,
                                    std::span<const EvalTarget> eval = {});

// Checkpoint: 8-byte magic, int32 V, int32 d, float64 sigma, V*d float64
// prototypes (row-major), V uint64 counts; all little-endian.
void save_synthesizer(std::ostream& os, const SynthesizerModel& synth);
SynthesizerModel load_synthesizer(std::istream& is);
void save_synthesizer(const std::string& path, const SynthesizerModel& synth);
SynthesizerModel load_synthesizer(const std::string& path);

}  // namespace chaingem

#endif  // CHAINGEM_SYNTHESIZER_H_
