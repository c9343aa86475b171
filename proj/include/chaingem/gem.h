// chaingem/gem.h

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

#ifndef CHAINGEM_GEM_H_
#define CHAINGEM_GEM_H_

// Gradient episodic memory.
//
// The new-task gradient g is replaced by the closest vector g~ (in L2) whose
// inner product with every stored-task gradient g_k is non-negative. With G the
// matrix whose rows are the g_k, the problem is solved in its dual form
//
//     minimize_v  1/2 v' (G G') v + (G g)' v    subject to v >= 0,
//
// and g~ = g + G' v. The dual has one variable per stored task, so it is tiny;
// it is solved by projected gradient descent (step 1/lambda_max) and finished
// with an exact solve on the active set.

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "chaingem/curve.h"
#include "chaingem/recognizer.h"
#include "chaingem/synthesizer.h"
#include "chaingem/utterance.h"

namespace chaingem {

struct MemorySample {
  Utterance utterance;
  /// True when the features were generated by the synthesizer.
  bool synthetic = false;
};

/// Bounded FIFO store of samples representing one task.
class EpisodicMemory {
 public:
  EpisodicMemory(int task_id, std::size_t capacity);

  int task_id() const { return task_id_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  bool full() const { return samples_.size() >= capacity_; }
  const std::deque<MemorySample>& samples() const { return samples_; }

  /// Appends, evicting the oldest sample when over capacity.
  void push(MemorySample sample);

 private:
  int task_id_;
  std::size_t capacity_;
  std::deque<MemorySample> samples_;
};

EpisodicMemory memory_insert(EpisodicMemory memory, MemorySample sample);

/// max(1, round(fraction * train_size)).
std::size_t memory_capacity(double memory_fraction, std::size_t train_size);

struct GemConfig {
  /// Step weight in theta <- theta - delta * g~.
  double delta = 0.3;
  double memory_fraction = 0.01;
  double qp_tolerance = 1e-9;
  int qp_max_iterations = 10000;

  void validate() const;
};

struct ProjectionResult {
  GradientVector projected;
  std::vector<double> duals;
  std::vector<bool> violated_before;
  /// <g, g_k> and <g~, g_k> per constraint.
  std::vector<double> dots_before;
  std::vector<double> dots_after;
  int iterations = 0;
  /// KKT residual of the returned dual solution.
  double residual = 0.0;
};

/// One gradient per memory, each over that memory's full contents. Throws
/// Error naming the task of an empty memory.
std::vector<GradientVector> reference_gradients(const RecognizerModel& model,
                                                std::span<const EpisodicMemory> memories,
                                                double smoothing);

/// Returns g itself, bitwise, when no constraint is violated.
ProjectionResult project(const GradientVector& g, std::span<const GradientVector> refs,
                         const GemConfig& config);

struct GemStepResult {
  RecognizerModel model;
  ProjectionResult projection;
};

GemStepResult gem_step(const RecognizerModel& model, std::span<const Utterance* const> batch,
                       std::span<const EpisodicMemory> memories, const GemConfig& config,
                       double smoothing);
GemStepResult gem_step(const RecognizerModel& model, std::span<const Utterance> batch,
                       std::span<const EpisodicMemory> memories, const GemConfig& config,
                       double smoothing);

struct ProjectionTraceRow {
  long step = 0;
  std::size_t constraints = 0;
  std::size_t violated_before = 0;
  double min_dot_before = 0.0;
  double min_dot_after = 0.0;
  std::vector<double> duals;
  int iterations = 0;
};

struct ContinualOptions {
  GemConfig gem;
  std::size_t batch_size = 16;
  double smoothing = 0.1;
  /// Fill the base memory with synthesizer output for incoming labels. When
  /// false the base memory must already hold samples.
  bool synthesize_replay = true;
  int frames_per_symbol = kDefaultFramesPerSymbol;
  /// Evaluate every this many steps, and once more at the end.
  long eval_every = 25;
  bool trace_projection = false;
};

struct ContinualResult {
  RecognizerModel asr;
  /// Input memories followed by the new task's memory.
  std::vector<EpisodicMemory> memories;
  Curve curve;
  std::vector<ProjectionTraceRow> trace;
  long steps = 0;
};

/// Learns one new task with GEM. memories[0] must be the base-task memory;
/// all given memories constrain every step. For each incoming batch the
/// labels are forwarded to the synthesizer and the pseudo-samples go into the
/// base memory (1:1, until full) while the real pairs go into the new task's
/// memory, then one gem_step is taken.
ContinualResult continual_learn(const RecognizerModel& asr, const SynthesizerModel& synth,
                                std::span<const Utterance> new_task_train, int new_task_id,
                                std::vector<EpisodicMemory> memories,
                                const ContinualOptions& options, int epochs,
                                std::uint64_t seed, std::span<const EvalTarget> eval = {});

/// Line records: task_id <TAB> labels <TAB> synthetic(0|1).
void write_memory_records(std::ostream& os, std::span<const EpisodicMemory> memories);
void write_projection_trace_csv(std::ostream& os, std::span<const ProjectionTraceRow> trace);

}  // namespace chaingem

#endif  // CHAINGEM_GEM_H_
