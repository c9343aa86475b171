// chaingem/utterance.h

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

#ifndef CHAINGEM_UTTERANCE_H_
#define CHAINGEM_UTTERANCE_H_

#include <span>
#include <vector>

#include "chaingem/common.h"

namespace chaingem {

inline constexpr int kDefaultFramesPerSymbol = 3;

/// Symbol ids are dense and zero-based: 0 .. size-1.
struct SymbolAlphabet {
  int size = 10;

  explicit SymbolAlphabet(int v = 10);
  bool contains(int id) const { return id >= 0 && id < size; }
};

/// One labelled sequence. The features hold exactly
/// frames_per_symbol() rows per label, aligned in order.
struct Utterance {
  LabelSeq labels;
  Matrix features;

  int num_frames() const { return static_cast<int>(features.rows()); }
  int feature_dim() const { return static_cast<int>(features.cols()); }

  /// Frames per label; throws Error if the frame count is not a positive
  /// multiple of the label count.
  int frames_per_symbol() const;

  /// Per-frame target ids (each label repeated frames_per_symbol() times).
  std::vector<int> frame_targets() const;
};

using UtteranceList = std::vector<Utterance>;

/// Drops consecutive duplicates: [2,2,5,5,2] -> [2,5,2].
LabelSeq collapse_repeats(std::span<const int> ids);

/// Stacks the features of several utterances into one matrix and returns the
/// matching frame targets.
void stack_frames(std::span<const Utterance> utts, Matrix* frames,
                  std::vector<int>* targets);
void stack_frames(std::span<const Utterance* const> utts, Matrix* frames,
                  std::vector<int>* targets);

}  // namespace chaingem

#endif  // CHAINGEM_UTTERANCE_H_
