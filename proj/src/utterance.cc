// src/utterance.cc

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

#include "chaingem/utterance.h"

#include <string>

namespace chaingem {

SymbolAlphabet::SymbolAlphabet(int v) : size(v) {
  if (v < 2) {
    throw ConfigError("alphabet needs at least 2 symbols, got " +
                      std::to_string(v));
  }
}

int Utterance::frames_per_symbol() const {
  const auto n_labels = static_cast<Eigen::Index>(labels.size());
  if (n_labels == 0 || features.rows() == 0 || features.rows() % n_labels != 0) {
    throw Error("utterance has " + std::to_string(features.rows()) +
                " frames for " + std::to_string(n_labels) +
                " labels; frames must be a positive multiple of labels");
  }
  return static_cast<int>(features.rows() / n_labels);
}

std::vector<int> Utterance::frame_targets() const {
  const int k = frames_per_symbol();
  std::vector<int> out;
  out.reserve(labels.size() * static_cast<std::size_t>(k));
  for (int id : labels) out.insert(out.end(), static_cast<std::size_t>(k), id);
  return out;
}

LabelSeq collapse_repeats(std::span<const int> ids) {
  LabelSeq out;
  for (int id : ids) {
    if (out.empty() || out.back() != id) out.push_back(id);
  }
  return out;
}

namespace {

template <typename Get>
void stack_impl(std::size_t n, Get get, Matrix* frames, std::vector<int>* targets) {
  Eigen::Index rows = 0;
  Eigen::Index cols = -1;
  for (std::size_t i = 0; i < n; ++i) {
    const Utterance& u = get(i);
    rows += u.features.rows();
    if (cols < 0) cols = u.features.cols();
    if (u.features.cols() != cols) throw Error("feature width differs across batch");
  }
  frames->resize(rows, cols < 0 ? 0 : cols);
  targets->clear();
  targets->reserve(static_cast<std::size_t>(rows));
  Eigen::Index at = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Utterance& u = get(i);
    frames->middleRows(at, u.features.rows()) = u.features;
    at += u.features.rows();
    auto t = u.frame_targets();
    targets->insert(targets->end(), t.begin(), t.end());
  }
}

}  // namespace

void stack_frames(std::span<const Utterance> utts, Matrix* frames,
                  std::vector<int>* targets) {
  stack_impl(utts.size(), [&](std::size_t i) -> const Utterance& { return utts[i]; },
             frames, targets);
}

void stack_frames(std::span<const Utterance* const> utts, Matrix* frames,
                  std::vector<int>* targets) {
  stack_impl(utts.size(), [&](std::size_t i) -> const Utterance& { return *utts[i]; },
             frames, targets);
}

}  // namespace chaingem
