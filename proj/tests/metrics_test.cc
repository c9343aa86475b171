// tests/metrics_test.cc

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

#include <random>
#include <sstream>

#include "chaingem/curve.h"
#include "chaingem/metrics.h"
#include "doctest.h"
#include "oracles.h"

using namespace chaingem;

namespace {

ErrorMatrix square(std::vector<std::vector<double>> rows) {
  ErrorMatrix r;
  for (std::size_t j = 0; j < rows.size(); ++j) r.task_ids.push_back(static_cast<int>(j));
  r.entries = std::move(rows);
  return r;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("edit distance matches the full-table oracle on 1000 random pairs") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> len(0, 15);
  std::uniform_int_distribution<int> sym(0, 4);
  for (int i = 0; i < 1000; ++i) {
    LabelSeq a(static_cast<std::size_t>(len(rng)));
    LabelSeq b(static_cast<std::size_t>(len(rng)));
    for (int& x : a) x = sym(rng);
    for (int& x : b) x = sym(rng);
    REQUIRE(edit_distance(a, b) == oracle::edit_distance(a, b));
    if (!a.empty()) {
      CHECK(cer(a, b) == static_cast<double>(oracle::edit_distance(a, b)) /
                             static_cast<double>(a.size()));
    }
  }
}

TEST_CASE("cer special cases") {
  const LabelSeq abc{0, 1, 2};
  CHECK(cer(abc, LabelSeq{0, 9, 2}) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(cer(abc, abc) == 0.0);
  CHECK(cer(abc, LabelSeq{}) == 1.0);
  CHECK(cer(LabelSeq{1}, LabelSeq{2, 3, 4}) == 3.0);
  CHECK(cer(abc, LabelSeq{5, 5, 5, 5, 5}) > 1.0);
  CHECK_THROWS(cer(LabelSeq{}, abc));
}

TEST_CASE("corpus cer pools edits over total length") {
  std::vector<Utterance> utts(2);
  utts[0].labels = {0, 1, 2, 3};
  utts[0].features = Matrix::Zero(12, 1);
  utts[1].labels = {0, 1, 2, 3, 4, 5};
  utts[1].features = Matrix::Ones(18, 1);
  // Scripted decoder: one error on the first, two on the second.
  const Decoder dec = [](const Matrix& x) {
    return x(0, 0) == 0.0 ? LabelSeq{0, 1, 2} : LabelSeq{0, 1, 7, 3, 4};
  };
  CHECK(corpus_cer(dec, utts) == doctest::Approx(3.0 / 10.0).epsilon(1e-15));
  CHECK_THROWS(corpus_cer(dec, std::span<const Utterance>{}));
}

TEST_CASE("error matrix from scripted decoders") {
  std::vector<Utterance> t0(1), t1(1);
  t0[0] = {{0, 1}, Matrix::Zero(6, 1)};
  t1[0] = {{2, 3, 4, 5}, Matrix::Ones(12, 1)};
  // Phase 0 is perfect on task 0 and drops a symbol of task 1; phase 1 gets
  // task 0 wrong completely and task 1 right.
  std::vector<Decoder> phases{
      [](const Matrix& x) { return x(0, 0) == 0.0 ? LabelSeq{0, 1} : LabelSeq{2, 3, 4}; },
      [](const Matrix& x) { return x(0, 0) == 0.0 ? LabelSeq{7, 7} : LabelSeq{2, 3, 4, 5}; }};
  const auto r = build_error_matrix(std::span<const Decoder>(phases), {t0, t1});
  REQUIRE(r.num_phases() == 2);
  REQUIRE(r.num_tasks() == 2);
  CHECK(r.at(0, 0) == 0.0);
  CHECK(r.at(0, 1) == 0.25);
  CHECK(r.at(1, 0) == 1.0);
  CHECK(r.at(1, 1) == 0.0);
  CHECK(r.task_ids == std::vector<int>{0, 1});
}

TEST_CASE("two-task metrics") {
  // The upper-right entry is not used by any metric.
  const auto r = square({{0.10, 0.90}, {0.15, 0.20}});
  const std::vector<double> ref{0.0, 0.25};
  const auto m = compute_metrics(r, ref);
  CHECK(m.avg == doctest::Approx(0.175).epsilon(1e-15));
  CHECK(m.bwt == doctest::Approx(0.05).epsilon(1e-14));
  CHECK(m.fwt == doctest::Approx(-0.05).epsilon(1e-14));
  const auto r2 = square({{0.10, 0.0}, {0.15, 0.20}});
  const auto m2 = compute_metrics(r2, ref);
  CHECK(m2.avg == m.avg);
  CHECK(m2.bwt == m.bwt);
}

TEST_CASE("three-task metrics") {
  const auto r = square({{0.1, 0.5, 0.5}, {0.2, 0.3, 0.5}, {0.4, 0.35, 0.25}});
  const std::vector<double> ref{0.0, 0.4, 0.2};
  const auto m = compute_metrics(r, ref);
  // avg (0.4 + 0.35 + 0.25) / 3; bwt ((0.4-0.1) + (0.35-0.3)) / 2;
  // fwt ((0.3-0.4) + (0.25-0.2)) / 2.
  CHECK(m.avg == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(m.bwt == doctest::Approx(0.175).epsilon(1e-14));
  CHECK(m.fwt == doctest::Approx(-0.025).epsilon(1e-13));
}

TEST_CASE("constant matrices and positive scaling") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 1; t <= 5; ++t) {
    const double c = u(rng);
    const auto m = compute_metrics(square(std::vector<std::vector<double>>(
                                       static_cast<std::size_t>(t),
                                       std::vector<double>(static_cast<std::size_t>(t), c))),
                                   std::vector<double>(static_cast<std::size_t>(t), c));
    CHECK(m.bwt == 0.0);
    CHECK(m.fwt == 0.0);
    CHECK(m.avg == doctest::Approx(c).epsilon(1e-14));

    std::vector<std::vector<double>> rows(static_cast<std::size_t>(t));
    std::vector<double> ref(static_cast<std::size_t>(t));
    for (auto& row : rows) {
      for (int j = 0; j < t; ++j) row.push_back(u(rng));
    }
    for (double& x : ref) x = u(rng);
    const double a = 0.5 + 2.0 * u(rng);
    auto scaled = rows;
    for (auto& row : scaled) {
      for (double& x : row) x *= a;
    }
    auto ref_scaled = ref;
    for (double& x : ref_scaled) x *= a;
    const auto m1 = compute_metrics(square(rows), ref);
    const auto m2 = compute_metrics(square(scaled), ref_scaled);
    CHECK(m2.avg == doctest::Approx(a * m1.avg).epsilon(1e-12));
    CHECK(m2.bwt == doctest::Approx(a * m1.bwt).epsilon(1e-12).scale(1.0));
    CHECK(m2.fwt == doctest::Approx(a * m1.fwt).epsilon(1e-12).scale(1.0));
  }
}

TEST_CASE("metrics reject malformed inputs") {
  const auto r = square({{0.1, 0.2}, {0.3, 0.4}});
  CHECK_THROWS(compute_metrics(r, std::vector<double>{0.1}));
  ErrorMatrix ragged = r;
  ragged.entries[1].pop_back();
  CHECK_THROWS(compute_metrics(ragged, std::vector<double>{0.1, 0.2}));
  ErrorMatrix neg = r;
  neg.entries[0][0] = -0.1;
  CHECK_THROWS(neg.validate());
  ErrorMatrix extra = r;
  extra.entries.push_back({0.1, 0.1});
  CHECK_THROWS(compute_metrics(extra, std::vector<double>{0.1, 0.2}));
}

TEST_CASE("error matrix CSV round-trips exactly") {
  ErrorMatrix r = square({{0.1, 1.0 / 3.0}, {0.123456789012345678, 1.084}});
  r.task_ids = {0, 1};
  r.phase_labels = {"after_task_0", "after_task_1"};
  std::stringstream ss;
  write_error_matrix_csv(ss, r);
  CHECK(ss.str().rfind("phase,task_0,task_1\n", 0) == 0);
  const auto back = read_error_matrix_csv(ss);
  CHECK(back.entries == r.entries);
  CHECK(back.phase_labels == r.phase_labels);
  CHECK(back.task_ids == r.task_ids);
  std::stringstream bad("phase,task_0\nx,0.1,0.2\n");
  CHECK_THROWS(read_error_matrix_csv(bad));
}

TEST_CASE("curve CSV round-trips with the fixed header") {
  const Curve c{{0, 0, "dev", 0.5, 1.25}, {25, 1, "test", 1.0 / 3.0, 0.1}};
  std::stringstream ss;
  write_curve_csv(ss, c);
  std::string first;
  std::getline(std::stringstream(ss.str()), first);
  CHECK(first == "step,task_id,split,cer,loss");
  CHECK(read_curve_csv(ss) == c);
}

}  // TEST_SUITE
