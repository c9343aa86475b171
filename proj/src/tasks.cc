// src/tasks.cc

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

#include "chaingem/tasks.h"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "io_util.h"

namespace chaingem {

void TaskSpec::validate() const {
  if (n_utterances < 1) throw ConfigError("task needs at least one utterance");
  if (length_min < 1 || length_max < length_min) {
    throw ConfigError("invalid label length range [" + std::to_string(length_min) + ", " +
                      std::to_string(length_max) + "]");
  }
  if (snr_db && !std::isfinite(*snr_db)) throw ConfigError("SNR must be finite");
  if (!(channel_mix >= 0.0 && channel_mix <= 1.0)) {
    throw ConfigError("channel mix must lie in [0, 1]");
  }
  if (frames_per_symbol < 1) throw ConfigError("frames per symbol must be positive");
}

SynthesizerModel make_prototypes(const SymbolAlphabet& alphabet, int feature_dim, double scale,
                                 double emission_sigma, std::uint64_t seed) {
  if (feature_dim < 1) throw ConfigError("feature dimension must be positive");
  if (!(scale > 0.0) || !(emission_sigma >= 0.0)) {
    throw ConfigError("prototype scale must be > 0 and emission sigma >= 0");
  }
  SynthesizerModel s;
  s.prototypes.resize(alphabet.size, feature_dim);
  Rng rng(derive_seed(seed, "prototypes"));
  std::normal_distribution<double> n(0.0, scale);
  for (Eigen::Index i = 0; i < s.prototypes.size(); ++i) s.prototypes.data()[i] = n(rng);
  s.emission_sigma = emission_sigma;
  s.counts.assign(static_cast<std::size_t>(alphabet.size), 0);
  return s;
}

SynthesizerModel apply_channel(const SynthesizerModel& proto, double mix, std::uint64_t seed) {
  if (!(mix >= 0.0 && mix <= 1.0)) throw ConfigError("channel mix must lie in [0, 1]");
  const int v = proto.alphabet_size();
  std::vector<int> cycle(static_cast<std::size_t>(v));
  std::iota(cycle.begin(), cycle.end(), 0);
  Rng rng(derive_seed(seed, "channel"));
  std::shuffle(cycle.begin(), cycle.end(), rng);
  SynthesizerModel out = proto;
  for (int i = 0; i < v; ++i) {
    const int sym = cycle[static_cast<std::size_t>(i)];
    const int partner = cycle[static_cast<std::size_t>((i + 1) % v)];
    out.prototypes.row(sym) =
        (1.0 - mix) * proto.prototypes.row(sym) + mix * proto.prototypes.row(partner);
  }
  return out;
}

LabelSeq sample_labels(const SymbolAlphabet& alphabet, int min_len, int max_len, Rng& rng) {
  if (min_len < 1 || max_len < min_len) throw ConfigError("invalid label length range");
  std::uniform_int_distribution<int> len(min_len, max_len);
  std::uniform_int_distribution<int> first(0, alphabet.size - 1);
  std::uniform_int_distribution<int> next(0, alphabet.size - 2);
  const int n = len(rng);
  LabelSeq y;
  y.reserve(static_cast<std::size_t>(n));
  y.push_back(first(rng));
  while (static_cast<int>(y.size()) < n) {
    // Uniform over the symbols that differ from the previous one.
    int c = next(rng);
    if (c >= y.back()) ++c;
    y.push_back(c);
  }
  return y;
}

std::vector<LabelSeq> sample_label_sequences(const SymbolAlphabet& alphabet, std::size_t n,
                                             int min_len, int max_len, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "labels"));
  std::vector<LabelSeq> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_labels(alphabet, min_len, max_len, rng));
  return out;
}

NoiseResult add_noise_detailed(const Eigen::Ref<const Matrix>& x, double snr_db,
                               std::uint64_t seed) {
  if (x.size() == 0) throw Error("cannot add noise to an empty frame matrix");
  if (!std::isfinite(snr_db)) throw Error("SNR must be finite");
  const double signal_power = x.squaredNorm() / static_cast<double>(x.size());
  if (!(signal_power > 0.0)) throw Error("signal power is zero; SNR is undefined");
  const double sigma = std::sqrt(signal_power / std::pow(10.0, snr_db / 10.0));
  NoiseResult r;
  r.noise.resize(x.rows(), x.cols());
  Rng rng(derive_seed(seed, "white-noise"));
  std::normal_distribution<double> n(0.0, sigma);
  for (Eigen::Index i = 0; i < r.noise.size(); ++i) r.noise.data()[i] = n(rng);
  r.noisy = x + r.noise;
  return r;
}

Matrix add_noise(const Eigen::Ref<const Matrix>& x, double snr_db, std::uint64_t seed) {
  return add_noise_detailed(x, snr_db, seed).noisy;
}

Splits split_dataset(UtteranceList utterances, const SplitRatios& ratios, std::uint64_t seed) {
  const double parts[3] = {ratios.train, ratios.dev, ratios.test};
  for (double p : parts) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ConfigError("split ratios must be >= 0");
  }
  if (std::abs(ratios.train + ratios.dev + ratios.test - 1.0) > 1e-9) {
    throw ConfigError("split ratios must sum to 1");
  }
  if (!(ratios.train > 0.0)) throw ConfigError("train ratio must be positive");
  const std::size_t nonzero = static_cast<std::size_t>(std::count_if(
      std::begin(parts), std::end(parts), [](double p) { return p > 0.0; }));
  const std::size_t n = utterances.size();
  if (n < nonzero) {
    throw Error("cannot split " + std::to_string(n) + " utterances into " +
                std::to_string(nonzero) + " parts");
  }
  auto size_of = [n](double r) {
    return static_cast<std::size_t>(std::llround(r * static_cast<double>(n)));
  };
  std::size_t n_dev = size_of(ratios.dev);
  std::size_t n_test = size_of(ratios.test);
  // Every configured part gets at least one item; train keeps at least one.
  if (ratios.dev > 0.0) n_dev = std::max<std::size_t>(n_dev, 1);
  if (ratios.test > 0.0) n_test = std::max<std::size_t>(n_test, 1);
  while (n_dev + n_test >= n) {
    if (n_dev >= n_test && n_dev > 1) {
      --n_dev;
    } else if (n_test > 1) {
      --n_test;
    } else {
      break;
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "split"));
  std::shuffle(order.begin(), order.end(), rng);

  Splits s;
  const std::size_t n_train = n - n_dev - n_test;
  for (std::size_t i = 0; i < n; ++i) {
    Utterance& u = utterances[order[i]];
    if (i < n_train) {
      s.train.push_back(std::move(u));
    } else if (i < n_train + n_dev) {
      s.dev.push_back(std::move(u));
    } else {
      s.test.push_back(std::move(u));
    }
  }
  return s;
}

LabeledSplit split_labeled_unlabeled(const UtteranceList& train, double labeled_fraction,
                                     std::uint64_t seed) {
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) {
    throw ConfigError("labeled fraction must lie in (0, 1]");
  }
  const std::size_t n = train.size();
  const auto n_lab = static_cast<std::size_t>(
      std::llround(labeled_fraction * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "labeled-split"));
  std::shuffle(order.begin(), order.end(), rng);
  // Each part keeps the input order.
  std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_lab));
  std::sort(order.begin() + static_cast<std::ptrdiff_t>(n_lab), order.end());
  LabeledSplit out;
  for (std::size_t i = 0; i < n; ++i) {
    const Utterance& u = train[order[i]];
    if (i < n_lab) {
      out.labeled.push_back(u);
    } else {
      out.unlabeled.push_back(u.features);
    }
  }
  return out;
}

TaskDataset make_task(const TaskSpec& spec, const SymbolAlphabet& alphabet,
                      const SynthesizerModel& proto, const SplitRatios& ratios) {
  spec.validate();
  proto.validate();
  if (proto.alphabet_size() < alphabet.size) {
    throw ConfigError("prototype emitter covers " + std::to_string(proto.alphabet_size()) +
                      " symbols, alphabet has " + std::to_string(alphabet.size));
  }
  const SynthesizerModel emitter =
      spec.channel_mix > 0.0 ? apply_channel(proto, spec.channel_mix, spec.seed) : proto;
  const auto labels =
      sample_label_sequences(alphabet, static_cast<std::size_t>(spec.n_utterances),
                             spec.length_min, spec.length_max, spec.seed);
  UtteranceList utts;
  utts.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Matrix x = synthesize(emitter, labels[i], derive_seed(spec.seed, "emission", i), true,
                          spec.frames_per_symbol);
    if (spec.snr_db) x = add_noise(x, *spec.snr_db, derive_seed(spec.seed, "noise", i));
    utts.push_back({labels[i], std::move(x)});
  }
  Splits s = split_dataset(std::move(utts), ratios, spec.seed);
  return {spec, std::move(s.train), std::move(s.dev), std::move(s.test)};
}

namespace {

void write_split(std::ostream& os, int task_id, const char* split, const UtteranceList& utts) {
  for (const auto& u : utts) {
    os << task_id << '\t' << split << '\t';
    for (std::size_t i = 0; i < u.labels.size(); ++i) os << (i ? " " : "") << u.labels[i];
    os << '\t' << u.features.rows() << ' ' << u.features.cols();
    for (Eigen::Index i = 0; i < u.features.size(); ++i) {
      os << ' ' << io::format_double(u.features.data()[i]);
    }
    os << '\n';
  }
}

}  // namespace

void write_dataset_records(std::ostream& os, const TaskDataset& data) {
  write_split(os, data.spec.task_id, "train", data.train);
  write_split(os, data.spec.task_id, "dev", data.dev);
  write_split(os, data.spec.task_id, "test", data.test);
}

TaskDataset read_dataset_records(std::istream& is) {
  TaskDataset out;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto f = io::split(line, '\t');
    if (f.size() != 4) throw Error("malformed dataset record");
    const int task_id = static_cast<int>(io::parse_long(f[0]));
    if (first) {
      out.spec.task_id = task_id;
      first = false;
    } else if (task_id != out.spec.task_id) {
      throw Error("dataset records mix task ids");
    }
    Utterance u;
    if (!f[2].empty()) {
      for (auto tok : io::split(f[2], ' ')) u.labels.push_back(static_cast<int>(io::parse_long(tok)));
    }
    auto vals = io::split(f[3], ' ');
    if (vals.size() < 2) throw Error("malformed feature block");
    const auto rows = io::parse_long(vals[0]);
    const auto cols = io::parse_long(vals[1]);
    if (rows < 0 || cols < 0 || vals.size() != static_cast<std::size_t>(rows * cols + 2)) {
      throw Error("feature block size mismatch");
    }
    u.features.resize(rows, cols);
    for (long i = 0; i < rows * cols; ++i) {
      u.features.data()[i] = io::parse_double(vals[static_cast<std::size_t>(i + 2)]);
    }
    if (f[1] == "train") {
      out.train.push_back(std::move(u));
    } else if (f[1] == "dev") {
      out.dev.push_back(std::move(u));
    } else if (f[1] == "test") {
      out.test.push_back(std::move(u));
    } else {
      throw Error("unknown split '" + std::string(f[1]) + "'");
    }
  }
  return out;
}

}  // namespace chaingem
