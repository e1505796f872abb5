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

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "arflow/audio.hpp"

namespace arflow {

/// Feature settings. Defaults: 22050 Hz, FFT/window 1024, hop 256, 80 Slaney
/// mel filters over [0, sr/2], natural log of magnitude clamped at 1e-5.
struct MelConfig {
  int sample_rate = kSampleRate;
  int n_fft = 1024;
  int win_length = 1024;
  int hop_length = 256;
  int n_mels = 80;
  double fmin = 0.0;
  double fmax = 11025.0;
  double log_floor = 1e-5;

  double hop_seconds() const { return static_cast<double>(hop_length) / sample_rate; }
  int n_bins() const { return n_fft / 2 + 1; }
  /// Stable identity string for caches and checkpoints.
  std::string fingerprint() const;
  bool operator==(const MelConfig&) const = default;
};

/// T x D log-mel energies, row-major (frame-major).
struct MelSpectrogram {
  std::vector<double> values;
  std::int64_t frames = 0;
  std::int64_t channels = 0;
  double hop_seconds = 256.0 / kSampleRate;

  double at(std::int64_t t, std::int64_t d) const { return values[static_cast<std::size_t>(t * channels + d)]; }
  double seconds() const { return static_cast<double>(frames) * hop_seconds; }
};

class FeatureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Complex STFT, [frames x (n_fft/2 + 1)], periodic Hann window, centered
/// frames with reflect padding of n_fft/2 on both sides.
struct Spectrogram {
  std::vector<std::complex<double>> bins;
  std::int64_t frames = 0;
  std::int64_t n_bins = 0;
};

Spectrogram stft(const std::vector<float>& signal, const MelConfig& cfg);
/// Number of frames for a signal of `samples` length: 1 + floor(samples / hop).
std::int64_t stft_frame_count(std::int64_t samples, const MelConfig& cfg);

/// Slaney-normalized triangular filterbank, [n_mels x n_bins] row-major.
std::vector<double> mel_filterbank(const MelConfig& cfg);
/// Center frequency in Hz of each mel filter.
std::vector<double> mel_center_frequencies(const MelConfig& cfg);
double hz_to_mel_slaney(double hz);
double mel_to_hz_slaney(double mel);

/// Requires at least n_fft samples.
MelSpectrogram mel_spectrogram(const Waveform& wave, const MelConfig& cfg = {});

struct GriffinLimResult {
  Waveform audio;                 // peak-normalized to 0.95 when non-silent
  double raw_peak = 0.0;          // peak before normalization
  std::vector<double> residuals;  // spectral convergence after each iteration
};

/// Inverts a log-mel spectrogram: exp, pseudo-inverse of the filterbank
/// (clamped non-negative), then iterative phase reconstruction from a
/// seeded random initial phase.
GriffinLimResult griffin_lim(const MelSpectrogram& mel, int iterations, const MelConfig& cfg = {},
                             std::uint64_t seed = 0);

}  // namespace arflow
