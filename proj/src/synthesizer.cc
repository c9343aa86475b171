// src/synthesizer.cc

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

#include "chaingem/synthesizer.h"

#include <cmath>
#include <fstream>
#include <string>

#include "io_util.h"

namespace chaingem {

namespace {

constexpr char kSynthMagic[] = "CGTTS001";

}  // namespace

void SynthesizerModel::validate() const {
  if (prototypes.rows() < 2 || prototypes.cols() < 1) {
    throw Error("synthesizer needs at least 2 symbols and 1 feature dimension");
  }
  if (!prototypes.allFinite()) throw Error("synthesizer prototypes must be finite");
  if (!(emission_sigma >= 0.0) || !std::isfinite(emission_sigma)) {
    throw Error("emission sigma must be finite and >= 0");
  }
  if (!counts.empty() && counts.size() != static_cast<std::size_t>(prototypes.rows())) {
    throw Error("synthesizer counts do not match alphabet size");
  }
  for (long c : counts) {
    if (c < 0) throw Error("synthesizer counts must be >= 0");
  }
}

SynthesizerModel fit_synthesizer(std::span<const Utterance> pairs, int alphabet_size) {
  if (alphabet_size < 2) throw ConfigError("alphabet needs at least 2 symbols");
  if (pairs.empty()) throw Error("cannot fit a synthesizer without labeled pairs");
  const int d = pairs.front().feature_dim();

  SynthesizerModel s;
  s.prototypes = Matrix::Zero(alphabet_size, d);
  s.counts.assign(static_cast<std::size_t>(alphabet_size), 0);
  for (const auto& u : pairs) {
    if (u.feature_dim() != d) throw Error("feature width differs across pairs");
    const int k = u.frames_per_symbol();
    for (std::size_t t = 0; t < u.labels.size(); ++t) {
      const int v = u.labels[t];
      if (v < 0 || v >= alphabet_size) throw Error("label out of range: " + std::to_string(v));
      s.prototypes.row(v) += u.features.middleRows(static_cast<Eigen::Index>(t) * k, k)
                                 .colwise()
                                 .sum();
      s.counts[static_cast<std::size_t>(v)] += k;
    }
  }

  std::string missing;
  for (int v = 0; v < alphabet_size; ++v) {
    if (s.counts[static_cast<std::size_t>(v)] == 0) {
      missing += (missing.empty() ? "" : ", ") + std::to_string(v);
    }
  }
  if (!missing.empty()) throw Error("symbols never observed: " + missing);

  for (int v = 0; v < alphabet_size; ++v) {
    s.prototypes.row(v) /= static_cast<double>(s.counts[static_cast<std::size_t>(v)]);
  }

  double sq = 0.0;
  long frames = 0;
  for (const auto& u : pairs) {
    const int k = u.frames_per_symbol();
    for (std::size_t t = 0; t < u.labels.size(); ++t) {
      const auto block = u.features.middleRows(static_cast<Eigen::Index>(t) * k, k);
      sq += (block.rowwise() - s.prototypes.row(u.labels[t])).squaredNorm();
      frames += k;
    }
  }
  s.emission_sigma = std::sqrt(sq / (static_cast<double>(frames) * d));
  return s;
}

Matrix synthesize(const SynthesizerModel& synth, std::span<const int> labels,
                  std::uint64_t seed, bool with_noise, int frames_per_symbol) {
  if (labels.empty()) throw Error("cannot synthesize an empty label sequence");
  if (frames_per_symbol < 1) throw ConfigError("frames per symbol must be positive");
  const int k = frames_per_symbol;
  Matrix x(static_cast<Eigen::Index>(labels.size()) * k, synth.feature_dim());
  for (std::size_t t = 0; t < labels.size(); ++t) {
    const int v = labels[t];
    if (v < 0 || v >= synth.alphabet_size()) {
      throw Error("label out of range: " + std::to_string(v));
    }
    x.middleRows(static_cast<Eigen::Index>(t) * k, k).rowwise() = synth.prototypes.row(v);
  }
  if (with_noise && synth.emission_sigma > 0.0) {
    Rng rng(derive_seed(seed, "synthesize"));
    std::normal_distribution<double> n(0.0, synth.emission_sigma);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] += n(rng);
  }
  return x;
}

RefineResult refine_semi_supervised(const RecognizerModel& asr, const SynthesizerModel& synth,
                                    std::span<const Utterance> labeled,
                                    std::span<const Matrix> unlabeled_features,
                                    std::span<const LabelSeq> text_only_labels, int rounds,
                                    const RefineConfig& config, std::uint64_t seed,
                                    std::span<const EvalTarget> eval) {
  if (unlabeled_features.empty() && text_only_labels.empty()) {
    throw Error("semi-supervised refinement needs unlabeled speech or text");
  }
  if (rounds < 0) throw ConfigError("rounds must be non-negative");
  if (!(config.confidence >= 0.0 && config.confidence <= 1.0)) {
    throw ConfigError("confidence threshold must lie in [0, 1]");
  }
  config.train.validate();

  RefineResult out{asr, synth, {}, {}};
  const int k = config.frames_per_symbol;
  const int v = synth.alphabet_size();

  for (int round = 1; round <= rounds; ++round) {
    RefineRoundStats stats;
    stats.round = round;

    // (a) recognizer -> synthesizer.
    UtteranceList pool(labeled.begin(), labeled.end());
    for (const Matrix& x : unlabeled_features) {
      const Matrix probs = forward(out.asr, x);
      const double conf = probs.rowwise().maxCoeff().mean();
      if (conf < config.confidence) {
        ++stats.skipped_confidence;
        continue;
      }
      LabelSeq hyp = decode_probs(probs);
      if (static_cast<Eigen::Index>(hyp.size()) * k != x.rows()) {
        ++stats.skipped_length;
        continue;
      }
      pool.push_back({std::move(hyp), x});
      ++stats.accepted;
    }
    if (!pool.empty()) out.synth = fit_synthesizer(pool, v);

    // (b) synthesizer -> recognizer.
    if (!text_only_labels.empty()) {
      UtteranceList synthetic;
      synthetic.reserve(text_only_labels.size());
      for (std::size_t j = 0; j < text_only_labels.size(); ++j) {
        const auto s = derive_seed(seed, "refine-synthesize",
                                   static_cast<std::uint64_t>(round) * 1000003ULL + j);
        synthetic.push_back(
            {text_only_labels[j], synthesize(out.synth, text_only_labels[j], s, true, k)});
      }
      stats.synthetic_pairs = synthetic.size();
      out.asr = train_supervised(out.asr, synthetic, 1, config.train,
                                 derive_seed(seed, "refine-train", static_cast<std::uint64_t>(round)))
                    .model;
    }
    out.rounds.push_back(stats);
    evaluate_into(out.asr, eval, round, config.train.smoothing, &out.curve);
  }
  return out;
}

void save_synthesizer(std::ostream& os, const SynthesizerModel& synth) {
  synth.validate();
  os.write(kSynthMagic, 8);
  io::write_le<std::int32_t>(os, synth.alphabet_size());
  io::write_le<std::int32_t>(os, synth.feature_dim());
  io::write_le<double>(os, synth.emission_sigma);
  for (Eigen::Index i = 0; i < synth.prototypes.size(); ++i) {
    io::write_le<double>(os, synth.prototypes.data()[i]);
  }
  for (int v = 0; v < synth.alphabet_size(); ++v) {
    const long c = synth.counts.empty() ? 0 : synth.counts[static_cast<std::size_t>(v)];
    io::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(c));
  }
  if (!os) throw Error("failed writing synthesizer checkpoint");
}

SynthesizerModel load_synthesizer(std::istream& is) {
  io::expect_magic(is, std::string_view(kSynthMagic, 8));
  const auto v = io::read_le<std::int32_t>(is);
  const auto d = io::read_le<std::int32_t>(is);
  if (v < 2 || d < 1) throw Error("bad synthesizer checkpoint dimensions");
  SynthesizerModel s;
  s.emission_sigma = io::read_le<double>(is);
  s.prototypes.resize(v, d);
  for (Eigen::Index i = 0; i < s.prototypes.size(); ++i) {
    s.prototypes.data()[i] = io::read_le<double>(is);
  }
  s.counts.resize(static_cast<std::size_t>(v));
  for (auto& c : s.counts) c = static_cast<long>(io::read_le<std::uint64_t>(is));
  s.validate();
  return s;
}

void save_synthesizer(const std::string& path, const SynthesizerModel& synth) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path);
  save_synthesizer(os, synth);
}

SynthesizerModel load_synthesizer(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  return load_synthesizer(is);
}

}  // namespace chaingem
