// Copyright 2026 The arflow Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "arflow/analysis.hpp"
#include "arflow/corpus.hpp"
#include "arflow/random.hpp"
#include "model_fixtures.hpp"

namespace arflow {
namespace {

Waveform sine(double hz, double seconds, double amp = 0.5) {
  Waveform w;
  const auto n = static_cast<std::size_t>(seconds * kSampleRate);
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) w.samples[i] = static_cast<float>(amp * std::sin(2 * M_PI * hz * i / kSampleRate));
  return w;
}

Waveform chirp(double f_start, double f_end, double seconds) {
  Waveform w;
  const auto n = static_cast<std::size_t>(seconds * kSampleRate);
  w.samples.resize(n);
  double phase = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double f = f_start + (f_end - f_start) * static_cast<double>(i) / static_cast<double>(n);
    phase += 2 * M_PI * f / kSampleRate;
    w.samples[i] = static_cast<float>(0.5 * std::sin(phase));
  }
  return w;
}

std::string temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "arflow_analysis_test" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

TEST(Yin, SineMedianWithinTwoHertz) {
  const auto c = yin_f0(sine(220.0, 1.0));
  EXPECT_NEAR(c.median_voiced(), 220.0, 2.0);
  EXPECT_GT(c.voiced_fraction(), 0.9);
  for (double f : c.voiced()) {
    EXPECT_GE(f, 80.0);
    EXPECT_LE(f, 400.0);
  }
}

TEST(Yin, WhiteNoiseMostlyUnvoiced) {
  Rng rng(3);
  Waveform w;
  w.samples.resize(kSampleRate);
  for (auto& s : w.samples) s = static_cast<float>(0.3 * rng.normal());
  EXPECT_LE(yin_f0(w).voiced_fraction(), 0.1);
}

TEST(Yin, BelowRangeSineIsUnvoiced) {
  const auto c = yin_f0(sine(50.0, 1.0));
  EXPECT_EQ(c.voiced().size(), 0u);
}

TEST(Yin, ShiftByOneHopAgrees) {
  auto w = chirp(150.0, 250.0, 1.0);
  Waveform shifted = w;
  shifted.samples.insert(shifted.samples.begin(), 256, 0.0f);
  const auto a = yin_f0(w), b = yin_f0(shifted);
  int compared = 0;
  // Skip the edges, where reflect padding differs.
  for (std::int64_t t = 4; t + 4 < a.frames(); ++t) {
    const double fa = a.f0_hz[static_cast<std::size_t>(t)], fb = b.f0_hz[static_cast<std::size_t>(t + 1)];
    if (fa > 0 && fb > 0) {
      EXPECT_NEAR(fa, fb, 1.0) << "frame " << t;
      ++compared;
    }
  }
  EXPECT_GT(compared, 50);
}

TEST(Yin, RejectsBadRangeAndShortInput) {
  YinConfig cfg;
  cfg.f_min = 400;
  cfg.f_max = 80;
  EXPECT_THROW(yin_f0(sine(220, 1.0), cfg), AnalysisError);
  EXPECT_THROW(yin_f0(sine(220, 0.01)), AnalysisError);
}

TEST(Yin, FramesAlignWithMel) {
  const auto w = sine(220.0, 0.5);
  EXPECT_EQ(yin_f0(w).frames(), mel_spectrogram(w).frames);
}

TEST(Yin, GriffinLimOfToneKeepsPitch) {
  const auto mel = mel_spectrogram(sine(440.0, 0.5));
  const auto audio = griffin_lim(mel, 32).audio;
  YinConfig cfg;
  cfg.f_max = 600;
  EXPECT_NEAR(yin_f0(audio, cfg).median_voiced(), 440.0, 10.0);
}

TEST(Durations, SingleSampleAndIdentical) {
  const auto one = duration_stats(std::vector<std::int64_t>{100}, 256.0 / 22050.0);
  EXPECT_NEAR(one.mean, 1.161, 1e-3);
  EXPECT_EQ(one.variance, 0.0);
  const auto same = duration_stats(std::vector<std::int64_t>{40, 40, 40}, 0.01);
  EXPECT_EQ(same.variance, 0.0);
  const auto spread = duration_stats(std::vector<std::int64_t>{10, 30}, 0.01);
  EXPECT_NEAR(spread.variance, 0.01, 1e-12);
  EXPECT_THROW(duration_stats(std::vector<std::int64_t>{}, 0.01), AnalysisError);
}

TEST(F0Rank, ConstantToneHasZeroVarianceAndChirpRanksFirst) {
  const auto tone = yin_f0(sine(200.0, 1.0));
  EXPECT_LT(f0_variance(tone), 0.05);
  Rng rng(1);
  Waveform noise;
  noise.samples.resize(kSampleRate);
  for (auto& s : noise.samples) s = static_cast<float>(0.3 * rng.normal());
  Waveform silence;
  silence.samples.assign(kSampleRate, 0.0f);
  std::vector<std::pair<std::string, F0Contour>> items = {
      {"silent", yin_f0(silence)}, {"tone", tone}, {"chirp", yin_f0(chirp(100.0, 300.0, 1.0))}};
  const auto ranked = f0_variance_rank(items);
  ASSERT_EQ(ranked.size(), 3u);
  EXPECT_EQ(ranked[0].id, "chirp");
  EXPECT_EQ(ranked[1].id, "tone");
  EXPECT_EQ(ranked[2].id, "silent");
  EXPECT_EQ(ranked[2].f0_variance, 0.0);
  EXPECT_EQ(top_f0_variance(items, 30).size(), 3u);
  EXPECT_EQ(top_f0_variance(items, 2).size(), 2u);
}

TEST(F0Contours, AcrossSampleVariance) {
  F0Contour a, b;
  a.f0_hz = {100, 110, 0, 120};
  b.f0_hz = {100, 110, 0, 120, 130};
  EXPECT_EQ(f0_contour_variance({a, b}), 0.0);
  b.f0_hz = {104, 110, 200, 120};
  // frame 0: var(100,104)=4; frames 1,3: 0; frame 2 has one voiced value.
  EXPECT_NEAR(f0_contour_variance({a, b}), 4.0 / 3.0, 1e-12);
}

TEST(Assignments, SingleComponentIsExactlyOne) {
  auto cfg = testing::tiny_config(4, 1);
  cfg.prior = PriorSpec{PriorKind::kMixture, 1.0, 1, MixtureMode::kFixed};
  FlowModel<double> model(cfg, 5);
  testing::randomize(model, 6);
  Rng rng(2);
  auto mel = testing::random_mel(rng, 7, 4, 1.0);
  const auto report = assignment_report(model, {{&mel, testing::random_tokens(rng, 5, 0), 0},
                                                {&mel, testing::random_tokens(rng, 4, 1), 1}});
  ASSERT_EQ(report.mean.size(), 2u);
  for (const auto& row : report.mean) EXPECT_EQ(row[0], 1.0);
}

TEST(Assignments, RowsAreProbabilityVectors) {
  auto cfg = testing::tiny_config(4, 2);
  cfg.prior = PriorSpec{PriorKind::kMixture, 1.0, 3, MixtureMode::kFixed};
  FlowModel<double> model(cfg, 5);
  testing::randomize(model, 8);
  Rng rng(4);
  std::vector<MelSpectrogram> mels;
  for (int i = 0; i < 4; ++i) mels.push_back(testing::random_mel(rng, 5 + i, 4, 1.0));
  std::vector<LabeledUtterance> utts;
  for (int i = 0; i < 4; ++i) utts.push_back({&mels[static_cast<std::size_t>(i)], testing::random_tokens(rng, 4, i % 2), i % 2});
  const auto report = assignment_report(model, utts);
  for (std::size_t r = 0; r < report.mean.size(); ++r) {
    EXPECT_NEAR(std::accumulate(report.mean[r].begin(), report.mean[r].end(), 0.0), 1.0, 1e-6);
    EXPECT_EQ(report.counts[r], 2);
  }
  cfg.prior = PriorSpec{};
  FlowModel<double> spherical(cfg, 5);
  EXPECT_THROW(assignment_report(spherical, utts), AnalysisError);
}

TEST(Reports, CsvAndSvgWriters) {
  const auto dir = temp_dir("reports");
  F0Contour c;
  c.f0_hz = {0, 120.5};
  c.harmonicity = {0.9, 0.1};
  write_f0_csv(dir + "/f0.csv", {{"s0", c}});
  write_durations_csv(dir + "/durations.csv", {{"s0", 1.5, 0.5}});
  AssignmentReport rep{{0}, {{0.25, 0.75}}, {1}};
  write_assignments_csv(dir + "/assignments.csv", rep);
  write_scatter_svg(dir + "/plot.svg", "t", "x", "y", {{"a", {{0, 1}, {1, 2}}}});
  auto slurp = [](const std::string& p) {
    std::ifstream in(p);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(slurp(dir + "/f0.csv"), "sample_id,frame,f0_hz,harmonicity\ns0,0,0,0.9\ns0,1,120.5,0.1\n");
  EXPECT_EQ(slurp(dir + "/durations.csv"), "sample_id,seconds,sigma2\ns0,1.5,0.5\n");
  EXPECT_EQ(slurp(dir + "/assignments.csv"), "speaker,component,mean_responsibility\n0,0,0.25\n0,1,0.75\n");
  EXPECT_NE(slurp(dir + "/plot.svg").find("<circle"), std::string::npos);
  EXPECT_EQ(rep.dominant(0), 1);
}

TEST(ToyCorpus, DeterministicAndManifestSized) {
  ToyCorpusSpec spec;
  spec.n_utterances = 6;
  const auto a = synthesize_toy_corpus(spec), b = synthesize_toy_corpus(spec);
  ASSERT_EQ(a.size(), 6u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].text, b[i].text);
    EXPECT_EQ(a[i].wave.samples, b[i].wave.samples);
  }
  const auto dir = temp_dir("toy");
  const auto entries = write_toy_corpus(spec, dir);
  const auto manifest = load_manifest(dir + "/manifest.txt");
  EXPECT_EQ(entries.size(), 6u);
  EXPECT_EQ(manifest.size(), 6u);
  const auto dir2 = temp_dir("toy2");
  write_toy_corpus(spec, dir2);
  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(slurp(dir + "/wavs/toy_0003.wav"), slurp(dir2 + "/wavs/toy_0003.wav"));
  EXPECT_EQ(slurp(dir + "/manifest.txt"), slurp(dir2 + "/manifest.txt"));
}

TEST(ToyCorpus, SpeakerMedianF0NearBase) {
  ToyCorpusSpec spec;
  spec.n_utterances = 15;
  spec.n_speakers = 3;
  std::vector<F0Contour> pooled(3);
  for (const auto& u : synthesize_toy_corpus(spec)) {
    const auto c = yin_f0(u.wave);
    EXPECT_GT(c.voiced_fraction(), 0.3) << u.id;
    auto& p = pooled[static_cast<std::size_t>(u.speaker)].f0_hz;
    p.insert(p.end(), c.f0_hz.begin(), c.f0_hz.end());
  }
  for (int s = 0; s < 3; ++s) EXPECT_NEAR(pooled[static_cast<std::size_t>(s)].median_voiced(), toy_speaker_f0(s), 5.0) << s;
}

}  // namespace
}  // namespace arflow
