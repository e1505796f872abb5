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
// Small models and random inputs shared by unit and acceptance tests.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "arflow/model.hpp"
#include "arflow/random.hpp"
#include "arflow/text.hpp"

namespace arflow::testing {

inline ModelConfig tiny_config(std::int64_t n_mel, std::int64_t n_flows) {
  ModelConfig c;
  c.n_mel = n_mel;
  c.features.n_mels = n_mel;
  c.n_symbols = Vocabulary().size();
  c.n_speakers = 2;
  c.speaker_dim = 3;
  c.text_dim = 4;
  c.n_flows = n_flows;
  c.prenet_dim = 5;
  c.attention_dim = 4;
  c.lstm_dim = 6;
  c.mel_encoder_dim = 5;
  return c;
}

/// Overwrites every parameter with N(0, scale^2) values; the final coupling
/// projections get `out_scale` so log s stays moderate.
template <typename T>
void randomize(FlowModel<T>& model, std::uint64_t seed, double scale = 0.5, double out_scale = 0.1) {
  Rng rng(seed);
  for (auto& p : model.parameters()) {
    const bool out = p.name.find(".out_") != std::string::npos;
    for (auto& v : p.tensor.mutable_data()) v = static_cast<T>(rng.normal() * (out ? out_scale : scale));
  }
}

inline TokenSequence random_tokens(Rng& rng, std::int64_t len, std::int64_t speaker = 0) {
  TokenSequence t;
  const auto v = static_cast<std::uint64_t>(Vocabulary().size());
  for (std::int64_t i = 0; i < len; ++i) t.ids.push_back(static_cast<std::int64_t>(rng.below(v)));
  t.speaker = speaker;
  t.text = "random";
  return t;
}

inline MelSpectrogram random_mel(Rng& rng, std::int64_t frames, std::int64_t channels, double scale = 1.0) {
  MelSpectrogram m;
  m.frames = frames;
  m.channels = channels;
  m.values.resize(static_cast<std::size_t>(frames * channels));
  for (auto& v : m.values) v = rng.normal() * scale;
  return m;
}

template <typename T>
Batch<T> single_batch(const MelSpectrogram& mel, const TokenSequence& tokens) {
  return make_batch<T>({&mel}, {tokens});
}

}  // namespace arflow::testing
