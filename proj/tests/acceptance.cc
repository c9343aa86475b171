// tests/acceptance.cc

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

// Acceptance suite: prints one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "chaingem/baselines.h"
#include "chaingem/chain.h"
#include "chaingem/gem.h"
#include "chaingem/metrics.h"
#include "chaingem/tasks.h"
#include "oracles.h"

using namespace chaingem;

namespace {

constexpr int kSeeds = 5;

int failures = 0;
int unexpected = 0;
std::set<int> known_red;

void report(int id, bool pass, const std::string& detail) {
  const bool known = known_red.count(id) > 0;
  std::printf("criterion %2d: %s  %s%s\n", id, pass ? "PASS" : "FAIL", detail.c_str(),
              !pass && known ? "  [known red]" : "");
  std::fflush(stdout);
  if (!pass) {
    ++failures;
    if (!known) ++unexpected;
  }
}

std::string fmt(double x, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << x;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Vector random_vector(std::mt19937_64& rng, Eigen::Index n) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = nd(rng);
  return v;
}

std::vector<Utterance> random_batch(std::mt19937_64& rng, int d, int v, int n) {
  std::uniform_int_distribution<int> len(2, 6);
  std::vector<Utterance> out;
  for (int i = 0; i < n; ++i) out.push_back(oracle::random_utterance(rng, d, v, len(rng), 3));
  return out;
}

void projection_vs_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> dim(2, 8);
  std::uniform_int_distribution<int> cons(1, 3);
  double worst_feas = 0.0, worst_obj = 0.0, worst_dual = 0.0;
  for (int i = 0; i < 500; ++i) {
    const int n = dim(rng);
    const int m = cons(rng);
    const GradientVector g(random_vector(rng, n));
    std::vector<GradientVector> refs;
    std::vector<Eigen::VectorXd> raw;
    for (int k = 0; k < m; ++k) {
      refs.emplace_back(random_vector(rng, n));
      raw.push_back(refs.back().values);
    }
    const auto p = project(g, refs, {});
    const auto o = oracle::project_by_enumeration(g.values, raw);
    Vector rebuilt = g.values;
    for (int k = 0; k < m; ++k) {
      const auto& r = refs[static_cast<std::size_t>(k)].values;
      worst_feas = std::min(worst_feas, p.projected.values.dot(r));
      rebuilt += p.duals[static_cast<std::size_t>(k)] * r;
      if (p.duals[static_cast<std::size_t>(k)] < 0.0) worst_dual = 1e300;
    }
    const double obj = 0.5 * (p.projected.values - g.values).squaredNorm();
    worst_obj = std::max(worst_obj, std::abs(obj - 0.5 * o.distance * o.distance));
    worst_dual = std::max(worst_dual, (rebuilt - p.projected.values).norm());
  }
  const double secs = seconds_since(t0);
  report(1, worst_feas >= -1e-9 && worst_obj <= 1e-4 && worst_dual <= 1e-6 && secs < 10.0,
         "500 instances; min <g~,g_k> " + fmt(worst_feas) + ", max objective gap " +
             fmt(worst_obj) + ", max dual residual " + fmt(worst_dual) + ", " + fmt(secs, 3) +
             " s");
}

void projection_identity() {
  std::mt19937_64 rng(102);
  std::uniform_int_distribution<int> dim(2, 8);
  std::uniform_int_distribution<int> cons(1, 3);
  int identical = 0;
  for (int i = 0; i < 200; ++i) {
    const int n = dim(rng);
    const GradientVector g(random_vector(rng, n));
    std::vector<GradientVector> refs;
    for (int k = 0, m = cons(rng); k < m; ++k) {
      Vector r = random_vector(rng, n);
      if (r.dot(g.values) < 0.0) r = -r;
      refs.emplace_back(r);
    }
    if (project(g, refs, {}).projected.values == g.values) ++identical;
  }
  report(2, identical == 200, std::to_string(identical) + "/200 returned g bitwise");
}

void gradient_checks() {
  std::mt19937_64 rng(103);
  double worst_data = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    const RecognizerShape s{5, 7, 6};
    RecognizerModel m = init_model(s, rng());
    m.theta += 0.3 * random_vector(rng, m.theta.size());
    const auto batch = random_batch(rng, s.input_dim, s.output_dim, 3);
    const auto g = gradient(m, batch, 0.1);
    const auto f = [&](const Eigen::VectorXd& th) {
      return loss(RecognizerModel{s, th}, batch, 0.1).loss;
    };
    std::uniform_int_distribution<Eigen::Index> coord(0, m.theta.size() - 1);
    Eigen::VectorXd a(20), fd(20);
    for (int i = 0; i < 20; ++i) {
      const Eigen::Index c = coord(rng);
      a[i] = g.values[c];
      fd[i] = oracle::central_difference(f, m.theta, c, 1e-5);
    }
    worst_data = std::max(worst_data, (a - fd).norm() / std::max(fd.norm(), 1e-12));
  }
  double worst_penalty = 0.0;
  std::uniform_real_distribution<double> uf(0.0, 2.0);
  for (int rep = 0; rep < 50; ++rep) {
    const Eigen::Index n = 20;
    EwcState st;
    st.anchor_theta = random_vector(rng, n);
    st.fisher_diag = Vector(n);
    for (Eigen::Index i = 0; i < n; ++i) st.fisher_diag[i] = uf(rng);
    st.lambda = 1e4;
    const Vector theta = st.anchor_theta + 0.1 * random_vector(rng, n);
    const Vector g = ewc_penalty_gradient(st, theta);
    Vector fd(n);
    const auto f = [&](const Vector& t) { return ewc_penalty(st, t); };
    for (Eigen::Index i = 0; i < n; ++i) fd[i] = oracle::central_difference(f, theta, i, 1e-4);
    worst_penalty = std::max(worst_penalty, (g - fd).norm() / std::max(g.norm(), 1e-12));
  }
  report(3, worst_data < 1e-3 && worst_penalty < 1e-6,
         "max relative error: data term " + fmt(worst_data) + ", penalty term " +
             fmt(worst_penalty));
}

void cer_checks() {
  std::mt19937_64 rng(104);
  std::uniform_int_distribution<int> len(1, 20);
  std::uniform_int_distribution<int> sym(0, 5);
  int matches = 0;
  for (int i = 0; i < 1000; ++i) {
    LabelSeq a(static_cast<std::size_t>(len(rng)));
    LabelSeq b(static_cast<std::size_t>(len(rng) - 1));
    for (int& x : a) x = sym(rng);
    for (int& x : b) x = sym(rng);
    if (edit_distance(a, b) == oracle::edit_distance(a, b) &&
        cer(a, b) == static_cast<double>(oracle::edit_distance(a, b)) /
                         static_cast<double>(a.size())) {
      ++matches;
    }
  }
  const LabelSeq ref{1, 2, 3};
  const bool self = cer(ref, ref) == 0.0;
  const bool empty = cer(ref, LabelSeq{}) == 1.0;
  const double over = cer(ref, LabelSeq{4, 5, 6, 7, 8});
  report(4, matches == 1000 && self && empty && over > 1.0,
         std::to_string(matches) + "/1000 oracle matches; cer(x,x)=0 " + (self ? "yes" : "no") +
             ", cer(ref,empty)=1 " + (empty ? "yes" : "no") + ", long hypothesis CER " +
             fmt(over));
}

ErrorMatrix square(std::vector<std::vector<double>> rows) {
  ErrorMatrix r;
  for (std::size_t j = 0; j < rows.size(); ++j) r.task_ids.push_back(static_cast<int>(j));
  r.entries = std::move(rows);
  return r;
}

void metric_checks() {
  bool ok = true;
  const auto m2 = compute_metrics(square({{0.10, 0.50}, {0.15, 0.20}}), std::vector<double>{0, 0.25});
  ok = ok && std::abs(m2.avg - 0.175) < 1e-15 && std::abs(m2.bwt - 0.05) < 1e-15 &&
       std::abs(m2.fwt + 0.05) < 1e-15;
  const auto m3 = compute_metrics(square({{0.1, 0.5, 0.5}, {0.2, 0.3, 0.5}, {0.4, 0.35, 0.25}}),
                                  std::vector<double>{0, 0.4, 0.2});
  ok = ok && std::abs(m3.avg - 1.0 / 3.0) < 1e-15 && std::abs(m3.bwt - 0.175) < 1e-15 &&
       std::abs(m3.fwt + 0.025) < 1e-15;
  const auto mc = compute_metrics(square({{0.3, 0.3, 0.3}, {0.3, 0.3, 0.3}, {0.3, 0.3, 0.3}}),
                                  std::vector<double>{0.3, 0.3, 0.3});
  ok = ok && mc.bwt == 0.0;
  std::mt19937_64 rng(105);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<std::vector<double>> rows(3, std::vector<double>(3));
    std::vector<double> ref(3);
    for (auto& row : rows) {
      for (double& x : row) x = u(rng);
    }
    for (double& x : ref) x = u(rng);
    const double a = 0.1 + 5.0 * u(rng);
    auto rows2 = rows;
    for (auto& row : rows2) {
      for (double& x : row) x *= a;
    }
    auto ref2 = ref;
    for (double& x : ref2) x *= a;
    const auto p = compute_metrics(square(rows), ref);
    const auto q = compute_metrics(square(rows2), ref2);
    ok = ok && std::abs(q.avg - a * p.avg) < 1e-12 && std::abs(q.bwt - a * p.bwt) < 1e-12 &&
         std::abs(q.fwt - a * p.fwt) < 1e-12;
  }
  report(5, ok, "2x2 and 3x3 hand values, constant matrix BWT, scaling over 100 matrices");
}

void reductions() {
  std::mt19937_64 rng(106);
  const RecognizerShape s{6, 8, 5};
  const auto old_data = random_batch(rng, 6, 5, 12);
  const auto data = random_batch(rng, 6, 5, 30);
  const auto model = init_model(s, 7);
  TrainConfig cfg;
  const auto ewc = ewc_train(model, ewc_prepare(model, old_data, 0.1, 0.0), data, 3, cfg, 8);
  const bool ewc_ok = ewc.model.theta == fine_tune(model, data, 3, cfg, 8).model.theta;
  const auto step = gem_step(model, std::span<const Utterance>(data),
                             std::span<const EpisodicMemory>{}, GemConfig{}, 0.1);
  const bool gem_ok =
      step.model.theta == sgd_step(model, gradient(model, data, 0.1), GemConfig{}.delta).theta;
  const bool mt_ok =
      multitask_train(s, {std::span<const Utterance>(data)}, 3, cfg, 9).model.theta ==
      train_supervised(init_model(s, 9), data, 3, cfg, 9).model.theta;
  report(6, ewc_ok && gem_ok && mt_ok,
         std::string("ewc(lambda=0)==fine_tune ") + (ewc_ok ? "yes" : "no") +
             ", gem_step(no memories)==sgd_step " + (gem_ok ? "yes" : "no") +
             ", multitask(one task)==train_supervised " + (mt_ok ? "yes" : "no"));
}

void noise_calibration() {
  std::mt19937_64 rng(107);
  double worst = 0.0;
  for (double target : {-5.0, 0.0, 10.0}) {
    for (int rep = 0; rep < 20; ++rep) {
      std::uniform_int_distribution<int> len(70, 90);
      const Utterance u = oracle::random_utterance(rng, 16, 10, len(rng), 3);
      const auto r = add_noise_detailed(u.features, target, rng());
      const double measured =
          10.0 * std::log10(u.features.squaredNorm() / r.noise.squaredNorm());
      worst = std::max(worst, std::abs(measured - target));
    }
  }
  report(7, worst <= 0.5, "max |empirical SNR - target| " + fmt(worst) + " dB over 60 utterances");
}

// ---- desk-scale experiments ------------------------------------------------

struct SeedRun {
  Stage1Report s1;
  Stage2Report s2;
  Stage3Result gem;
  CLMetrics ewc;
  CLMetrics supervised;
  CLMetrics finetune;
};

CLMetrics metrics_of(const ErrorMatrix& r, const ErrorMatrix& reference) {
  std::vector<double> ft(r.num_tasks(), 0.0);
  for (std::size_t j = 1; j < ft.size(); ++j) ft[j] = reference.at(j, j);
  return compute_metrics(r, ft);
}

double final_cer(const ErrorMatrix& r, std::size_t task) {
  return r.at(r.num_phases() - 1, task);
}

SeedRun run_seed(std::uint64_t seed) {
  PipelineConfig c;
  c.seed = seed;
  const World w = make_world(c);
  const auto s1 = run_stage1(c, w);
  const auto s2 = run_stage2(c, w, s1.asr, s1.synth);
  SeedRun out{s1.report, s2.report, run_stage3(c, w, s2.asr, s2.synth), {}, {}, {}};
  out.finetune = metrics_of(out.gem.reference_errors, out.gem.reference_errors);

  PipelineConfig e = c;
  e.method = Method::kEwc;
  const auto ewc = run_stage3(e, w, s2.asr, s2.synth);
  out.ewc = ewc.metrics;

  // GEM with every base label and real base-task replay.
  PipelineConfig sup = c;
  sup.labeled_fraction = 1.0;
  sup.stages = {true, false, true};
  sup.stage3.base_replay = BaseReplay::kReal;
  const World ws = make_world(sup);
  const auto sup1 = run_stage1(sup, ws);
  out.supervised = run_stage3(sup, ws, sup1.asr, sup1.synth).metrics;
  return out;
}

std::vector<double> mean_final_cers(double fraction) {
  std::vector<double> mean(2, 0.0);
  for (int s = 0; s < kSeeds; ++s) {
    PipelineConfig c;
    c.seed = static_cast<std::uint64_t>(s);
    c.labeled_fraction = fraction;
    const World w = make_world(c);
    const auto s1 = run_stage1(c, w);
    const auto s2 = run_stage2(c, w, s1.asr, s1.synth);
    const auto r = run_stage3(c, w, s2.asr, s2.synth);
    for (std::size_t j = 0; j < 2; ++j) mean[j] += final_cer(r.errors, j) / kSeeds;
  }
  return mean;
}

std::string list(const std::vector<double>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? " " : "") + fmt(xs[i], 3);
  return s;
}

void experiments() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<SeedRun> runs;
  for (int s = 0; s < kSeeds; ++s) runs.push_back(run_seed(static_cast<std::uint64_t>(s)));

  // 8: forgetting under fine-tuning.
  int forgot = 0;
  std::vector<double> before, after;
  for (const auto& r : runs) {
    const auto& ref = r.gem.reference_errors;
    before.push_back(ref.at(0, 0));
    after.push_back(final_cer(ref, 0));
    if (final_cer(ref, 0) > ref.at(0, 0)) ++forgot;
  }
  report(8, forgot >= 4,
         std::to_string(forgot) + "/5 seeds; base CER pretrained [" + list(before) +
             "] -> fine-tuned [" + list(after) + "]");

  // 9: GEM against fine-tuning on equal data.
  int better = 0;
  std::vector<double> gem_base, ft_base, ratio;
  for (const auto& r : runs) {
    const double gb = final_cer(r.gem.errors, 0);
    const double fb = final_cer(r.gem.reference_errors, 0);
    const double gn = final_cer(r.gem.errors, 1);
    const double fn = final_cer(r.gem.reference_errors, 1);
    gem_base.push_back(gb);
    ft_base.push_back(fb);
    ratio.push_back(fn > 0.0 ? gn / fn : (gn > 0.0 ? INFINITY : 1.0));
    if (gb < fb && gn <= 1.25 * fn) ++better;
  }
  report(9, better >= 4,
         std::to_string(better) + "/5 seeds; base CER gem [" + list(gem_base) + "] vs fine-tune [" +
             list(ft_base) + "], noisy CER ratio gem/fine-tune [" + list(ratio) + "]");

  // 10: stage 2 on a 30/70 split.
  int helped = 0;
  std::vector<double> d1, d2;
  for (const auto& r : runs) {
    d1.push_back(r.s2.dev_cer_before);
    d2.push_back(r.s2.dev_cer_after);
    if (r.s2.dev_cer_after <= r.s2.dev_cer_before) ++helped;
  }
  report(10, helped >= 4,
         std::to_string(helped) + "/5 seeds; dev CER stage 1 [" + list(d1) + "] -> stage 2 [" +
             list(d2) + "]");

  // 11: average relative reduction against fine-tuning.
  double gem_sum = 0.0, ft_sum = 0.0;
  for (const auto& r : runs) {
    for (std::size_t j = 0; j < 2; ++j) {
      gem_sum += final_cer(r.gem.errors, j);
      ft_sum += final_cer(r.gem.reference_errors, j);
    }
  }
  const double reduction = ft_sum > 0.0 ? 1.0 - gem_sum / ft_sum : 0.0;
  report(11, reduction >= 0.25,
         "reduction " + fmt(reduction, 3) + " (mean CER gem " + fmt(gem_sum / (2 * kSeeds), 3) +
             ", fine-tune " + fmt(ft_sum / (2 * kSeeds), 3) + ")");

  // 12: labeled-fraction trend.
  std::vector<double> base_means{0.0}, noisy_means{0.0};
  for (const auto& r : runs) {
    base_means[0] += final_cer(r.gem.errors, 0) / kSeeds;
    noisy_means[0] += final_cer(r.gem.errors, 1) / kSeeds;
  }
  for (double f : {0.5, 0.7}) {
    const auto m = mean_final_cers(f);
    base_means.push_back(m[0]);
    noisy_means.push_back(m[1]);
  }
  const auto non_increasing = [](const std::vector<double>& xs) {
    for (std::size_t i = 1; i < xs.size(); ++i) {
      if (xs[i] > xs[i - 1]) return false;
    }
    return true;
  };
  report(12, non_increasing(base_means) && non_increasing(noisy_means),
         "mean final CER at fractions 0.3/0.5/0.7: base [" + list(base_means) + "], noisy [" +
             list(noisy_means) + "]");

  // 13: cross-condition gap.
  int gap = 0;
  std::vector<double> clean, cross;
  for (const auto& r : runs) {
    clean.push_back(r.s1.test_cer);
    cross.push_back(r.s1.cross_test_cer.at(0));
    if (r.s1.cross_test_cer.at(0) >= 3.0 * r.s1.test_cer) ++gap;
  }
  report(13, gap == kSeeds,
         std::to_string(gap) + "/5 seeds; stage-1 test CER clean [" + list(clean) + "] vs SNR 0 [" +
             list(cross) + "]");

  // 14: BWT ordering.
  int ordered = 0, ewc_below = 0;
  std::vector<double> b_sup, b_gem, b_ft, b_ewc;
  for (const auto& r : runs) {
    b_sup.push_back(r.supervised.bwt);
    b_gem.push_back(r.gem.metrics.bwt);
    b_ft.push_back(r.finetune.bwt);
    b_ewc.push_back(r.ewc.bwt);
    if (r.supervised.bwt <= r.gem.metrics.bwt && r.gem.metrics.bwt < r.finetune.bwt) ++ordered;
    if (r.ewc.bwt < r.finetune.bwt) ++ewc_below;
  }
  report(14, ordered >= 4 && ewc_below >= 3,
         "ordering " + std::to_string(ordered) + "/5, ewc below fine-tune " +
             std::to_string(ewc_below) + "/5; BWT gem-supervised [" + list(b_sup) +
             "], chain-gem [" + list(b_gem) + "], fine-tune [" + list(b_ft) + "], ewc [" +
             list(b_ewc) + "]");

  std::printf("experiments took %.1f s\n", seconds_since(t0));
}

}  // namespace

// Usage: chaingem_acceptance [--known-red N[,N...]]
// The exit status is non-zero when any criterion fails that is not listed as
// known red. Every criterion is still evaluated and printed.
int main(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--known-red" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string item;
      while (std::getline(ss, item, ',')) known_red.insert(std::stoi(item));
    } else {
      std::fprintf(stderr, "usage: %s [--known-red N[,N...]]\n", argv[0]);
      return 2;
    }
  }
  projection_vs_oracle();
  projection_identity();
  gradient_checks();
  cer_checks();
  metric_checks();
  reductions();
  noise_calibration();
  experiments();
  std::printf("%d of 14 criteria failed (%d not listed as known red)\n", failures, unexpected);
  return unexpected == 0 ? 0 : 1;
}
