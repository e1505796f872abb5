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

#include <stdexcept>
#include <string>
#include <vector>

namespace arflow {

inline constexpr int kSampleRate = 22050;

/// Mono samples in [-1, 1].
struct Waveform {
  std::vector<float> samples;
  int sample_rate = kSampleRate;

  double seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

class AudioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class WavEncoding { kPcm16, kFloat32 };

/// Reads RIFF/WAVE with 16-bit PCM or 32-bit float samples. Multi-channel
/// input is averaged to mono; other rates are resampled to `target_rate`
/// (pass 0 to keep the file's rate).
Waveform load_wav(const std::string& path, int target_rate = kSampleRate);
void write_wav(const Waveform& wave, const std::string& path, WavEncoding encoding = WavEncoding::kPcm16);

/// Band-limited resampling with a Hann-windowed sinc kernel (16 zero
/// crossings, cutoff at the lower Nyquist rate). Output length is
/// floor(n * target / source).
Waveform resample(const Waveform& wave, int target_rate);

}  // namespace arflow
