// src/metrics.cc

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

#include "chaingem/metrics.h"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>

#include "io_util.h"

namespace chaingem {

std::size_t edit_distance(std::span<const int> reference, std::span<const int> hypothesis) {
  // Single-row DP over the hypothesis.
  std::vector<std::size_t> row(hypothesis.size() + 1);
  std::iota(row.begin(), row.end(), std::size_t{0});
  for (std::size_t i = 1; i <= reference.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= hypothesis.size(); ++j) {
      const std::size_t up = row[j];
      const std::size_t sub = diag + (reference[i - 1] == hypothesis[j - 1] ? 0 : 1);
      row[j] = std::min({up + 1, row[j - 1] + 1, sub});
      diag = up;
    }
  }
  return row.back();
}

double cer(std::span<const int> reference, std::span<const int> hypothesis) {
  if (reference.empty()) throw Error("CER needs a non-empty reference");
  return static_cast<double>(edit_distance(reference, hypothesis)) /
         static_cast<double>(reference.size());
}

double corpus_cer(const Decoder& decoder, std::span<const Utterance> utts) {
  if (utts.empty()) throw Error("corpus CER over an empty set");
  std::size_t edits = 0;
  std::size_t length = 0;
  for (const auto& u : utts) {
    if (u.labels.empty()) throw Error("utterance without reference labels");
    const LabelSeq hyp = decoder(u.features);
    edits += edit_distance(u.labels, hyp);
    length += u.labels.size();
  }
  return static_cast<double>(edits) / static_cast<double>(length);
}

double corpus_cer(const RecognizerModel& model, std::span<const Utterance> utts) {
  return corpus_cer([&](const Matrix& x) { return decode(model, x); }, utts);
}

void ErrorMatrix::validate() const {
  if (!phase_labels.empty() && phase_labels.size() != entries.size()) {
    throw Error("error matrix has " + std::to_string(phase_labels.size()) +
                " phase labels for " + std::to_string(entries.size()) + " rows");
  }
  for (const auto& row : entries) {
    if (row.size() != task_ids.size()) throw Error("error matrix is not rectangular");
    for (double v : row) {
      if (!std::isfinite(v) || v < 0.0) throw Error("error matrix entries must be finite and >= 0");
    }
  }
}

namespace {

std::vector<int> default_task_ids(std::vector<int> ids, std::size_t n) {
  if (ids.empty()) {
    ids.resize(n);
    std::iota(ids.begin(), ids.end(), 0);
  }
  if (ids.size() != n) throw Error("task id list does not match number of test sets");
  return ids;
}

}  // namespace

ErrorMatrix build_error_matrix(std::span<const Decoder> phases,
                               const std::vector<std::span<const Utterance>>& tests,
                               std::vector<int> task_ids) {
  if (phases.empty() || tests.empty()) throw Error("error matrix needs phases and tasks");
  ErrorMatrix r;
  r.task_ids = default_task_ids(std::move(task_ids), tests.size());
  for (std::size_t i = 0; i < phases.size(); ++i) {
    r.phase_labels.push_back("phase_" + std::to_string(i));
    std::vector<double> row;
    row.reserve(tests.size());
    for (const auto& t : tests) row.push_back(corpus_cer(phases[i], t));
    r.entries.push_back(std::move(row));
  }
  return r;
}

ErrorMatrix build_error_matrix(std::span<const RecognizerModel> snapshots,
                               const std::vector<std::span<const Utterance>>& tests,
                               std::vector<int> task_ids) {
  std::vector<Decoder> decoders;
  decoders.reserve(snapshots.size());
  for (const auto& m : snapshots) {
    decoders.emplace_back([&m](const Matrix& x) { return decode(m, x); });
  }
  return build_error_matrix(std::span<const Decoder>(decoders), tests, std::move(task_ids));
}

CLMetrics compute_metrics(const ErrorMatrix& r, std::span<const double> finetune_reference) {
  r.validate();
  const std::size_t t = r.num_tasks();
  if (t == 0 || r.num_phases() != t) {
    throw Error("metrics need one phase per task (got " + std::to_string(r.num_phases()) +
                " phases, " + std::to_string(t) + " tasks)");
  }
  if (finetune_reference.size() != t) {
    throw Error("fine-tune reference must have one entry per task");
  }
  const std::size_t last = t - 1;
  CLMetrics m;
  for (std::size_t j = 0; j < t; ++j) m.avg += r.at(last, j);
  m.avg /= static_cast<double>(t);
  if (t > 1) {
    for (std::size_t j = 0; j < last; ++j) m.bwt += r.at(last, j) - r.at(j, j);
    m.bwt /= static_cast<double>(last);
    for (std::size_t j = 1; j < t; ++j) {
      if (!std::isfinite(finetune_reference[j])) throw Error("non-finite fine-tune reference");
      m.fwt += r.at(j, j) - finetune_reference[j];
    }
    m.fwt /= static_cast<double>(last);
  }
  return m;
}

void write_error_matrix_csv(std::ostream& os, const ErrorMatrix& r) {
  r.validate();
  os << "phase";
  for (int id : r.task_ids) os << ",task_" << id;
  os << '\n';
  for (std::size_t i = 0; i < r.num_phases(); ++i) {
    os << (r.phase_labels.empty() ? "phase_" + std::to_string(i) : r.phase_labels[i]);
    for (double v : r.entries[i]) os << ',' << io::format_double(v);
    os << '\n';
  }
}

ErrorMatrix read_error_matrix_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw Error("empty error matrix CSV");
  auto head = io::split(line, ',');
  if (head.empty() || head[0] != "phase") throw Error("error matrix CSV must start with 'phase'");
  ErrorMatrix r;
  for (std::size_t c = 1; c < head.size(); ++c) {
    if (head[c].substr(0, 5) != "task_") throw Error("bad task column: " + std::string(head[c]));
    r.task_ids.push_back(static_cast<int>(io::parse_long(head[c].substr(5))));
  }
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto f = io::split(line, ',');
    if (f.size() != head.size()) throw Error("ragged error matrix row: " + line);
    r.phase_labels.emplace_back(f[0]);
    std::vector<double> row;
    for (std::size_t c = 1; c < f.size(); ++c) row.push_back(io::parse_double(f[c]));
    r.entries.push_back(std::move(row));
  }
  r.validate();
  return r;
}

}  // namespace chaingem
