// src/gem.cc

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

#include "chaingem/gem.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "io_util.h"

namespace chaingem {

EpisodicMemory::EpisodicMemory(int task_id, std::size_t capacity)
    : task_id_(task_id), capacity_(capacity) {
  if (capacity == 0) throw ConfigError("episodic memory capacity must be positive");
}

void EpisodicMemory::push(MemorySample sample) {
  samples_.push_back(std::move(sample));
  while (samples_.size() > capacity_) samples_.pop_front();
}

EpisodicMemory memory_insert(EpisodicMemory memory, MemorySample sample) {
  memory.push(std::move(sample));
  return memory;
}

std::size_t memory_capacity(double memory_fraction, std::size_t train_size) {
  if (!(memory_fraction > 0.0 && memory_fraction <= 1.0)) {
    throw ConfigError("memory fraction must lie in (0, 1]");
  }
  const auto n = std::llround(memory_fraction * static_cast<double>(train_size));
  return static_cast<std::size_t>(std::max<long long>(1, n));
}

void GemConfig::validate() const {
  if (!(delta > 0.0) || !std::isfinite(delta)) throw ConfigError("GEM delta must be positive");
  if (!(memory_fraction > 0.0 && memory_fraction <= 1.0)) {
    throw ConfigError("memory fraction must lie in (0, 1]");
  }
  if (!(qp_tolerance > 0.0)) throw ConfigError("QP tolerance must be positive");
  if (qp_max_iterations < 1) throw ConfigError("QP iteration limit must be positive");
}

std::vector<GradientVector> reference_gradients(const RecognizerModel& model,
                                                std::span<const EpisodicMemory> memories,
                                                double smoothing) {
  std::vector<GradientVector> out;
  out.reserve(memories.size());
  std::vector<const Utterance*> ptrs;
  for (const auto& m : memories) {
    if (m.empty()) {
      throw Error("episodic memory for task " + std::to_string(m.task_id()) + " is empty");
    }
    ptrs.clear();
    for (const auto& s : m.samples()) ptrs.push_back(&s.utterance);
    out.push_back(gradient(model, std::span<const Utterance* const>(ptrs), smoothing));
  }
  return out;
}

namespace {

// Largest eigenvalue of a symmetric PSD matrix.
double largest_eigenvalue(const Eigen::MatrixXd& a) {
  const Eigen::Index m = a.rows();
  Eigen::VectorXd x = Eigen::VectorXd::Ones(m) / std::sqrt(static_cast<double>(m));
  double lambda = 0.0;
  for (int it = 0; it < 200; ++it) {
    Eigen::VectorXd y = a * x;
    const double norm = y.norm();
    if (norm == 0.0) return 0.0;
    const double next = x.dot(y);
    x = y / norm;
    if (std::abs(next - lambda) <= 1e-12 * std::abs(next)) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  // The Rayleigh quotient approaches lambda_max from below; the trace bounds it
  // from above.
  return std::min(lambda * (1.0 + 1e-3), a.trace());
}

// Complementarity residual: active duals need a zero gradient, inactive ones
// a non-negative gradient.
double kkt_residual(const Eigen::VectorXd& v, const Eigen::VectorXd& grad) {
  double r = 0.0;
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    r = std::max(r, v[k] > 0.0 ? std::abs(grad[k]) : std::max(0.0, -grad[k]));
  }
  return r;
}

// Exact minimizer restricted to the current support, or false if it leaves
// the feasible orthant.
bool polish(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& v,
            Eigen::VectorXd* out) {
  std::vector<Eigen::Index> support;
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    if (v[k] > 0.0) support.push_back(k);
  }
  if (support.empty()) return false;
  const auto s = static_cast<Eigen::Index>(support.size());
  Eigen::MatrixXd a_ss(s, s);
  Eigen::VectorXd b_s(s);
  for (Eigen::Index i = 0; i < s; ++i) {
    b_s[i] = b[support[i]];
    for (Eigen::Index j = 0; j < s; ++j) a_ss(i, j) = a(support[i], support[j]);
  }
  Eigen::VectorXd v_s = a_ss.completeOrthogonalDecomposition().solve(-b_s);
  if (!v_s.allFinite() || (v_s.array() < 0.0).any()) return false;
  *out = Eigen::VectorXd::Zero(v.size());
  for (Eigen::Index i = 0; i < s; ++i) (*out)[support[i]] = v_s[i];
  return true;
}

// Lawson-Hanson active-set iteration on min 1/2 v'Av + b'v, v >= 0.
Eigen::VectorXd active_set_solve(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double tol) {
  const Eigen::Index m = b.size();
  Eigen::VectorXd v = Eigen::VectorXd::Zero(m);
  std::vector<bool> free(static_cast<std::size_t>(m), false);
  const auto solve_free = [&] {
    Eigen::VectorXd z = Eigen::VectorXd::Zero(m);
    std::vector<Eigen::Index> idx;
    for (Eigen::Index k = 0; k < m; ++k) {
      if (free[static_cast<std::size_t>(k)]) idx.push_back(k);
    }
    const auto s = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd a_ss(s, s);
    Eigen::VectorXd b_s(s);
    for (Eigen::Index i = 0; i < s; ++i) {
      b_s[i] = b[idx[i]];
      for (Eigen::Index j = 0; j < s; ++j) a_ss(i, j) = a(idx[i], idx[j]);
    }
    const Eigen::VectorXd z_s = a_ss.completeOrthogonalDecomposition().solve(-b_s);
    for (Eigen::Index i = 0; i < s; ++i) z[idx[i]] = z_s[i];
    return z;
  };
  for (Eigen::Index outer = 0; outer < 3 * m + 3; ++outer) {
    const Eigen::VectorXd w = -(a * v + b);
    Eigen::Index best = -1;
    for (Eigen::Index k = 0; k < m; ++k) {
      if (!free[static_cast<std::size_t>(k)] && w[k] > tol && (best < 0 || w[k] > w[best])) {
        best = k;
      }
    }
    if (best < 0) break;
    free[static_cast<std::size_t>(best)] = true;
    for (Eigen::Index inner = 0; inner <= m; ++inner) {
      const Eigen::VectorXd z = solve_free();
      double alpha = 1.0;
      bool clipped = false;
      for (Eigen::Index k = 0; k < m; ++k) {
        if (free[static_cast<std::size_t>(k)] && z[k] <= 0.0) {
          alpha = std::min(alpha, v[k] / (v[k] - z[k]));
          clipped = true;
        }
      }
      if (!clipped) {
        v = z;
        break;
      }
      v += alpha * (z - v);
      for (Eigen::Index k = 0; k < m; ++k) {
        if (free[static_cast<std::size_t>(k)] && v[k] <= 0.0) {
          free[static_cast<std::size_t>(k)] = false;
          v[k] = 0.0;
        }
      }
    }
  }
  return v;
}

}  // namespace

ProjectionResult project(const GradientVector& g, std::span<const GradientVector> refs,
                         const GemConfig& config) {
  if (!g.values.allFinite()) throw Error("non-finite gradient passed to projection");
  const auto m = static_cast<Eigen::Index>(refs.size());
  const Eigen::Index n = g.size();

  ProjectionResult res;
  res.duals.assign(refs.size(), 0.0);
  res.violated_before.assign(refs.size(), false);
  if (m == 0) {
    res.projected = g;
    return res;
  }

  Eigen::MatrixXd gm(m, n);
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto& r = refs[static_cast<std::size_t>(k)];
    if (r.size() != n) throw Error("reference gradient length differs from g");
    if (!r.values.allFinite()) throw Error("non-finite reference gradient");
    gm.row(k) = r.values.transpose();
  }
  const Eigen::VectorXd b = gm * g.values;
  res.dots_before.assign(b.data(), b.data() + m);
  bool any_violated = false;
  for (Eigen::Index k = 0; k < m; ++k) {
    res.violated_before[static_cast<std::size_t>(k)] = b[k] < 0.0;
    any_violated = any_violated || b[k] < 0.0;
  }
  if (!any_violated) {
    res.projected = g;
    res.dots_after = res.dots_before;
    return res;
  }

  const Eigen::MatrixXd a = gm * gm.transpose();
  const double lipschitz = largest_eigenvalue(a);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(m);
  double residual = std::numeric_limits<double>::infinity();
  // Tolerance is absolute for unit-scale gradients and relative beyond that.
  const double tol = config.qp_tolerance * std::max(1.0, a.diagonal().maxCoeff());
  int it = 0;
  while (it < config.qp_max_iterations) {
    ++it;
    v = (v - (a * v + b) / lipschitz).cwiseMax(0.0);
    Eigen::VectorXd polished;
    if (polish(a, b, v, &polished)) {
      const double pr = kkt_residual(polished, a * polished + b);
      if (pr <= tol) {
        v = polished;
        residual = pr;
        break;
      }
    }
    residual = kkt_residual(v, a * v + b);
    if (residual <= tol) break;
  }
  if (residual > tol) {
    const Eigen::VectorXd exact = active_set_solve(a, b, tol);
    const double er = kkt_residual(exact, a * exact + b);
    if (er <= tol) {
      v = exact;
      residual = er;
    }
  }
  if (residual > tol) {
    throw QpConvergenceError("GEM dual QP did not converge in " +
                                 std::to_string(config.qp_max_iterations) +
                                 " iterations (residual " + io::format_double(residual) + ")",
                             residual);
  }

  res.projected = GradientVector(g.values + gm.transpose() * v);
  const Eigen::VectorXd after = gm * res.projected.values;
  res.dots_after.assign(after.data(), after.data() + m);
  for (Eigen::Index k = 0; k < m; ++k) res.duals[static_cast<std::size_t>(k)] = v[k];
  res.iterations = it;
  res.residual = residual;
  return res;
}

GemStepResult gem_step(const RecognizerModel& model, std::span<const Utterance* const> batch,
                       std::span<const EpisodicMemory> memories, const GemConfig& config,
                       double smoothing) {
  config.validate();
  const GradientVector g = gradient(model, batch, smoothing);
  const auto refs = reference_gradients(model, memories, smoothing);
  ProjectionResult p = project(g, refs, config);
  RecognizerModel next = sgd_step(model, p.projected, config.delta);
  return {std::move(next), std::move(p)};
}

GemStepResult gem_step(const RecognizerModel& model, std::span<const Utterance> batch,
                       std::span<const EpisodicMemory> memories, const GemConfig& config,
                       double smoothing) {
  std::vector<const Utterance*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& u : batch) ptrs.push_back(&u);
  return gem_step(model, std::span<const Utterance* const>(ptrs), memories, config, smoothing);
}

ContinualResult continual_learn(const RecognizerModel& asr, const SynthesizerModel& synth,
                                std::span<const Utterance> new_task_train, int new_task_id,
                                std::vector<EpisodicMemory> memories,
                                const ContinualOptions& options, int epochs,
                                std::uint64_t seed, std::span<const EvalTarget> eval) {
  options.gem.validate();
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (options.batch_size == 0) throw ConfigError("batch size must be positive");
  if (memories.empty()) throw Error("continual learning needs the base-task memory");
  if (new_task_train.empty()) throw Error("new task has no training data");

  ContinualResult out;
  out.asr = asr;
  const std::size_t n_old = memories.size();
  memories.emplace_back(new_task_id,
                        memory_capacity(options.gem.memory_fraction, new_task_train.size()));

  Rng rng(derive_seed(seed, "batch-order"));
  std::vector<std::size_t> order(new_task_train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<const Utterance*> batch;
  std::uint64_t replayed = 0;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) {
        const Utterance& u = new_task_train[order[i]];
        batch.push_back(&u);
        EpisodicMemory& base = memories.front();
        if (options.synthesize_replay && !base.full()) {
          Matrix x_hat = synthesize(synth, u.labels, derive_seed(seed, "replay", replayed++),
                                    true, options.frames_per_symbol);
          base.push({{u.labels, std::move(x_hat)}, true});
        }
        memories.back().push({u, false});
      }
      const std::span<const EpisodicMemory> old(memories.data(), n_old);
      GemStepResult step = gem_step(out.asr, std::span<const Utterance* const>(batch), old,
                                    options.gem, options.smoothing);
      out.asr = std::move(step.model);
      ++out.steps;
      if (options.trace_projection) {
        ProjectionTraceRow row;
        row.step = out.steps;
        row.constraints = step.projection.duals.size();
        row.violated_before = static_cast<std::size_t>(
            std::count(step.projection.violated_before.begin(),
                       step.projection.violated_before.end(), true));
        const auto& before = step.projection.dots_before;
        const auto& after = step.projection.dots_after;
        if (!before.empty()) {
          row.min_dot_before = *std::min_element(before.begin(), before.end());
          row.min_dot_after = *std::min_element(after.begin(), after.end());
        }
        row.duals = step.projection.duals;
        row.iterations = step.projection.iterations;
        out.trace.push_back(std::move(row));
      }
      if (options.eval_every > 0 && out.steps % options.eval_every == 0) {
        evaluate_into(out.asr, eval, out.steps, options.smoothing, &out.curve);
      }
    }
  }
  if (out.curve.empty() || out.curve.back().step != out.steps) {
    evaluate_into(out.asr, eval, out.steps, options.smoothing, &out.curve);
  }
  out.memories = std::move(memories);
  return out;
}

void write_memory_records(std::ostream& os, std::span<const EpisodicMemory> memories) {
  for (const auto& m : memories) {
    for (const auto& s : m.samples()) {
      os << m.task_id() << '\t';
      for (std::size_t i = 0; i < s.utterance.labels.size(); ++i) {
        os << (i ? " " : "") << s.utterance.labels[i];
      }
      os << '\t' << (s.synthetic ? 1 : 0) << '\n';
    }
  }
}

void write_projection_trace_csv(std::ostream& os, std::span<const ProjectionTraceRow> trace) {
  os << "step,constraints,violated_before,min_dot_before,min_dot_after,duals,iterations\n";
  for (const auto& r : trace) {
    os << r.step << ',' << r.constraints << ',' << r.violated_before << ','
       << io::format_double(r.min_dot_before) << ',' << io::format_double(r.min_dot_after)
       << ',';
    for (std::size_t i = 0; i < r.duals.size(); ++i) {
      os << (i ? ";" : "") << io::format_double(r.duals[i]);
    }
    os << ',' << r.iterations << '\n';
  }
}

}  // namespace chaingem
