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
#include "arflow/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "arflow/random.hpp"

namespace arflow {

namespace {

constexpr std::array<double, kMaxToySpeakers> kBaseF0 = {120.0, 220.0, 300.0};
constexpr std::array<double, kMaxToySpeakers> kFormantScale = {1.0, 1.15, 1.3};
constexpr std::array<double, kMaxToySpeakers> kTilt = {0.8, 1.0, 1.2};
// Voice quality: aspiration noise level and frame-to-frame amplitude shimmer.
constexpr std::array<double, kMaxToySpeakers> kBreath = {0.0, 1.0, 0.5};
constexpr std::array<double, kMaxToySpeakers> kShimmer = {0.03, 0.25, 0.12};
constexpr int kHop = 256;

const std::array<const char*, 24> kWords = {"ma",   "no",   "li",   "sa",   "tek",  "mu",   "rana", "kilo",
                                            "pemo", "sito", "lure", "nema", "tapi", "molo", "kesa", "rimu",
                                            "sun",  "pal",  "nori", "tuma", "lesi", "kam",  "opa",  "eni"};

enum class Kind { kVowel, kVoiced, kNoise, kSilence };

struct Gesture {
  Kind kind;
  int frames;
  double semitones;
  double f1, f2, f3;
  double gain;
};

Gesture gesture_for(char c) {
  switch (c) {
    case 'a': return {Kind::kVowel, 6, 0.0, 730, 1090, 2440, 1.0};
    case 'e': return {Kind::kVowel, 6, 1.0, 530, 1840, 2480, 1.0};
    case 'i': return {Kind::kVowel, 5, 2.0, 270, 2290, 3010, 0.9};
    case 'o': return {Kind::kVowel, 6, -1.0, 570, 840, 2410, 1.0};
    case 'u': return {Kind::kVowel, 5, -2.0, 300, 870, 2240, 0.9};
    case 'm': return {Kind::kVoiced, 3, 0.0, 250, 1000, 2200, 0.45};
    case 'n': return {Kind::kVoiced, 3, 0.0, 250, 1400, 2500, 0.45};
    case 'l': return {Kind::kVoiced, 3, 0.5, 360, 1300, 2900, 0.55};
    case 'r': return {Kind::kVoiced, 3, -0.5, 420, 1250, 1600, 0.55};
    case 's': return {Kind::kNoise, 4, 0.0, 5000, 7000, 0, 0.25};
    case 't': return {Kind::kNoise, 2, 0.0, 3500, 5000, 0, 0.3};
    case 'k': return {Kind::kNoise, 2, 0.0, 1800, 3000, 0, 0.3};
    case 'p': return {Kind::kNoise, 2, 0.0, 800, 1500, 0, 0.3};
    case ' ': return {Kind::kSilence, 2, 0.0, 0, 0, 0, 0.0};
    case '.': return {Kind::kSilence, 10, 0.0, 0, 0, 0, 0.0};
    default: return {Kind::kSilence, 1, 0.0, 0, 0, 0, 0.0};
  }
}

double resonance(double f, double center, double bandwidth) {
  const double u = (f - center) / bandwidth;
  return std::exp(-0.5 * u * u);
}

}  // namespace

double toy_speaker_f0(std::int64_t speaker) {
  if (speaker < 0 || speaker >= kMaxToySpeakers) throw std::out_of_range("toy speaker out of range");
  return kBaseF0[static_cast<std::size_t>(speaker)];
}

Waveform render_toy_utterance(const std::string& text, std::int64_t speaker, std::uint64_t seed) {
  const double base = toy_speaker_f0(speaker);
  const double fscale = kFormantScale[static_cast<std::size_t>(speaker)];
  const double tilt = kTilt[static_cast<std::size_t>(speaker)];
  const double breath = kBreath[static_cast<std::size_t>(speaker)];
  const double shimmer = kShimmer[static_cast<std::size_t>(speaker)];
  Rng rng(seed);

  std::vector<Gesture> gestures;
  for (char c : text) {
    Gesture g = gesture_for(c);
    if (g.kind != Kind::kSilence || c == ' ') {
      g.frames = std::max(1, g.frames + static_cast<int>(rng.below(3)) - 1);
      g.semitones += 0.3 * rng.normal();
      g.gain *= 1.0 + 0.1 * rng.normal();
    }
    gestures.push_back(g);
  }
  const double shift = 0.4 * rng.normal();

  // Per-frame targets, then per-sample linear interpolation.
  struct Target {
    double f0, f1, f2, f3, voiced, noise, gain, amp;
  };
  std::vector<Target> frames;
  for (const auto& g : gestures) {
    for (int i = 0; i < g.frames; ++i) {
      Target t{};
      t.f0 = g.semitones;
      t.f1 = g.f1 * fscale;
      t.f2 = g.f2 * fscale;
      t.f3 = g.f3 * fscale;
      t.voiced = g.kind == Kind::kVowel || g.kind == Kind::kVoiced ? g.gain : 0.0;
      t.noise = g.kind == Kind::kNoise ? g.gain : 0.0;
      t.gain = g.gain;
      t.amp = std::max(0.2, 1.0 + shimmer * rng.normal());
      frames.push_back(t);
    }
  }
  const auto n_frames = static_cast<std::int64_t>(frames.size());
  // Carry formants through silences so transitions stay smooth.
  for (std::int64_t i = 1; i < n_frames; ++i) {
    auto& t = frames[static_cast<std::size_t>(i)];
    if (t.f1 == 0.0) t.f1 = frames[static_cast<std::size_t>(i - 1)].f1, t.f2 = frames[static_cast<std::size_t>(i - 1)].f2,
                     t.f3 = frames[static_cast<std::size_t>(i - 1)].f3;
  }
  for (std::int64_t i = n_frames - 2; i >= 0; --i) {
    auto& t = frames[static_cast<std::size_t>(i)];
    if (t.f1 == 0.0) t.f1 = frames[static_cast<std::size_t>(i + 1)].f1, t.f2 = frames[static_cast<std::size_t>(i + 1)].f2,
                     t.f3 = frames[static_cast<std::size_t>(i + 1)].f3;
  }

  const std::int64_t n = n_frames * kHop;
  Waveform wave;
  wave.sample_rate = kSampleRate;
  wave.samples.assign(static_cast<std::size_t>(n), 0.0f);
  const double sr = kSampleRate;
  double phase = 0.0;
  double lp = 0.0, prev_noise = 0.0;
  std::vector<double> harm;
  for (std::int64_t s = 0; s < n; ++s) {
    const double pos = (static_cast<double>(s) + 0.5) / kHop - 0.5;
    const auto i0 = static_cast<std::int64_t>(std::clamp(std::floor(pos), 0.0, static_cast<double>(n_frames - 1)));
    const auto i1 = std::min(i0 + 1, n_frames - 1);
    const double w = std::clamp(pos - static_cast<double>(i0), 0.0, 1.0);
    const auto& a = frames[static_cast<std::size_t>(i0)];
    const auto& b = frames[static_cast<std::size_t>(i1)];
    auto mix = [w](double x, double y) { return (1.0 - w) * x + w * y; };
    const double progress = static_cast<double>(s) / static_cast<double>(n);
    const double semis = mix(a.f0, b.f0) + shift + (0.5 - progress) * 1.5;
    const double f0 = base * std::pow(2.0, semis / 12.0);
    const double f1 = mix(a.f1, b.f1), f2 = mix(a.f2, b.f2), f3 = mix(a.f3, b.f3);
    const double voiced = mix(a.voiced, b.voiced), noise = mix(a.noise, b.noise), amp = mix(a.amp, b.amp);

    phase += 2.0 * M_PI * f0 / sr;
    if (phase > 2.0 * M_PI) phase -= 2.0 * M_PI;
    double v = 0.0;
    if (voiced > 1e-6) {
      // The spectral envelope moves slowly; refresh it every 16 samples.
      if (s % 16 == 0 || harm.empty()) {
        harm.clear();
        for (int k = 1; k * f0 < 7000.0; ++k) {
          const double fk = k * f0;
          harm.push_back(resonance(fk, f1, 90.0) + 0.6 * resonance(fk, f2, 120.0) + 0.3 * resonance(fk, f3, 160.0) +
                         0.05 / std::pow(static_cast<double>(k), tilt));
        }
      }
      for (std::size_t k = 0; k < harm.size() && (k + 1) * f0 < 7000.0; ++k) v += harm[k] * std::sin((k + 1) * phase);
      v *= 0.12 * voiced * amp;
    }
    double e = rng.normal();
    double burst = 0.0;
    if (noise > 1e-6) {
      // Crude spectral shaping: high formants get a differenced signal.
      const double hp = e - prev_noise;
      lp += 0.3 * (e - lp);
      burst = noise * 0.08 * (f1 > 3000.0 ? hp : lp + 0.5 * hp);
    }
    const double aspiration = breath * voiced * amp * 0.02 * (e - prev_noise);
    prev_noise = e;
    wave.samples[static_cast<std::size_t>(s)] = static_cast<float>(v + burst + aspiration + 2e-4 * e);
  }
  return wave;
}

std::vector<ToyUtterance> synthesize_toy_corpus(const ToyCorpusSpec& spec) {
  if (spec.n_utterances <= 0) throw std::invalid_argument("toy corpus needs at least one utterance");
  if (spec.n_speakers < 1 || spec.n_speakers > kMaxToySpeakers) throw std::invalid_argument("toy corpus supports 1-3 speakers");
  if (spec.min_words < 1 || spec.max_words < spec.min_words) throw std::invalid_argument("bad toy word range");
  Rng rng(spec.seed);
  std::vector<ToyUtterance> out;
  for (int u = 0; u < spec.n_utterances; ++u) {
    ToyUtterance utt;
    std::ostringstream id;
    id << "toy_" << std::setw(4) << std::setfill('0') << u;
    utt.id = id.str();
    utt.speaker = u % spec.n_speakers;
    const int words = spec.min_words + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_words - spec.min_words + 1)));
    for (int w = 0; w < words; ++w) {
      if (w) utt.text += ' ';
      utt.text += kWords[rng.below(kWords.size())];
    }
    utt.text += '.';
    utt.wave = render_toy_utterance(utt.text, utt.speaker, rng.next_u64());
    out.push_back(std::move(utt));
  }
  return out;
}

std::vector<ManifestEntry> write_toy_corpus(const ToyCorpusSpec& spec, const std::string& out_dir) {
  namespace fs = std::filesystem;
  const fs::path root = fs::absolute(out_dir);
  fs::create_directories(root / "wavs");
  std::vector<ManifestEntry> entries;
  std::ofstream manifest(root / "manifest.txt");
  if (!manifest) throw std::runtime_error("cannot write " + (root / "manifest.txt").string());
  std::size_t line = 0;
  for (const auto& utt : synthesize_toy_corpus(spec)) {
    const fs::path wav = root / "wavs" / (utt.id + ".wav");
    write_wav(utt.wave, wav.string());
    manifest << "wavs/" << utt.id << ".wav|" << utt.text << '|' << utt.speaker << '\n';
    entries.push_back({wav.string(), utt.text, utt.speaker, ++line});
  }
  return entries;
}

}  // namespace arflow
