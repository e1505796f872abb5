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
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "arflow/audio.hpp"
#include "arflow/text.hpp"

namespace arflow {

/// Synthetic speech-like corpus: pseudo-words over a small alphabet, each
/// letter rendered as a short gesture (duration, pitch offset, formants) with
/// seeded jitter. Speakers differ in base F0 and formant scale.
struct ToyCorpusSpec {
  int n_utterances = 200;
  int n_speakers = 2;
  int min_words = 3;
  int max_words = 8;
  std::uint64_t seed = 1234;
};

struct ToyUtterance {
  std::string id;
  std::string text;
  std::int64_t speaker = 0;
  Waveform wave;
};

constexpr int kMaxToySpeakers = 3;
double toy_speaker_f0(std::int64_t speaker);

std::vector<ToyUtterance> synthesize_toy_corpus(const ToyCorpusSpec& spec);

/// Writes `wavs/<id>.wav` and `manifest.txt` under out_dir and returns the
/// manifest entries (absolute paths).
std::vector<ManifestEntry> write_toy_corpus(const ToyCorpusSpec& spec, const std::string& out_dir);

/// Renders one utterance; exposed for tests.
Waveform render_toy_utterance(const std::string& text, std::int64_t speaker, std::uint64_t seed);

}  // namespace arflow
