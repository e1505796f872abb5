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
#include "arflow/mel.hpp"

#include <fftw3.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <mutex>
#include <sstream>

#include "arflow/random.hpp"

namespace arflow {

namespace {

// FFTW planning is not thread-safe; execution with new-array calls is.
std::mutex g_plan_mutex;

class RealFft {
 public:
  explicit RealFft(int n) : n_(n) {
    in_ = fftw_alloc_real(static_cast<std::size_t>(n));
    out_ = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
    std::lock_guard<std::mutex> lock(g_plan_mutex);
    forward_ = fftw_plan_dft_r2c_1d(n, in_, out_, FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_c2r_1d(n, out_, in_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    std::lock_guard<std::mutex> lock(g_plan_mutex);
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  void forward(const double* frame, std::complex<double>* spectrum) {
    std::copy_n(frame, n_, in_);
    fftw_execute(forward_);
    for (int k = 0; k <= n_ / 2; ++k) spectrum[k] = {out_[k][0], out_[k][1]};
  }
  // Unnormalized inverse (FFTW convention): result is n times the true inverse.
  void inverse(const std::complex<double>* spectrum, double* frame) {
    for (int k = 0; k <= n_ / 2; ++k) {
      out_[k][0] = spectrum[k].real();
      out_[k][1] = spectrum[k].imag();
    }
    fftw_execute(inverse_);
    std::copy_n(in_, n_, frame);
  }

 private:
  int n_;
  double* in_;
  fftw_complex* out_;
  fftw_plan forward_;
  fftw_plan inverse_;
};

std::vector<double> hann_window(const MelConfig& cfg) {
  // Periodic Hann of win_length, zero-padded to n_fft and centered.
  std::vector<double> w(static_cast<std::size_t>(cfg.n_fft), 0.0);
  const int offset = (cfg.n_fft - cfg.win_length) / 2;
  for (int i = 0; i < cfg.win_length; ++i) {
    w[static_cast<std::size_t>(offset + i)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / cfg.win_length);
  }
  return w;
}

std::vector<double> reflect_pad(const std::vector<float>& x, int pad) {
  const auto n = static_cast<std::int64_t>(x.size());
  if (n <= pad) throw FeatureError("signal too short for reflect padding");
  std::vector<double> out(static_cast<std::size_t>(n + 2 * pad));
  for (std::int64_t i = 0; i < n + 2 * pad; ++i) {
    std::int64_t src = i - pad;
    if (src < 0) src = -src;
    if (src >= n) src = 2 * (n - 1) - src;
    out[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(src)];
  }
  return out;
}

// Frames an already padded signal.
Spectrogram stft_padded(const std::vector<double>& padded, std::int64_t frames, const MelConfig& cfg,
                        const std::vector<double>& window, RealFft& fft) {
  Spectrogram s;
  s.frames = frames;
  s.n_bins = cfg.n_bins();
  s.bins.resize(static_cast<std::size_t>(frames * s.n_bins));
  std::vector<double> frame(static_cast<std::size_t>(cfg.n_fft));
  for (std::int64_t t = 0; t < frames; ++t) {
    const double* src = padded.data() + t * cfg.hop_length;
    for (int i = 0; i < cfg.n_fft; ++i) frame[i] = src[i] * window[i];
    fft.forward(frame.data(), s.bins.data() + t * s.n_bins);
  }
  return s;
}

// Least-squares overlap-add inverse onto the padded signal domain.
std::vector<double> istft_padded(const Spectrogram& s, const MelConfig& cfg, const std::vector<double>& window,
                                 RealFft& fft) {
  const std::int64_t length = (s.frames - 1) * cfg.hop_length + cfg.n_fft;
  std::vector<double> out(static_cast<std::size_t>(length), 0.0);
  std::vector<double> wsum(out.size(), 0.0);
  std::vector<double> frame(static_cast<std::size_t>(cfg.n_fft));
  for (std::int64_t t = 0; t < s.frames; ++t) {
    fft.inverse(s.bins.data() + t * s.n_bins, frame.data());
    for (int i = 0; i < cfg.n_fft; ++i) {
      const auto k = static_cast<std::size_t>(t * cfg.hop_length + i);
      out[k] += frame[i] / cfg.n_fft * window[i];
      wsum[k] += window[i] * window[i];
    }
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (wsum[k] > 1e-10) out[k] /= wsum[k];
  }
  return out;
}

void validate(const MelConfig& cfg) {
  if (cfg.n_fft < 2 || cfg.win_length < 1 || cfg.win_length > cfg.n_fft || cfg.hop_length < 1 || cfg.n_mels < 1 ||
      cfg.fmin < 0 || cfg.fmax <= cfg.fmin || cfg.log_floor <= 0) {
    throw FeatureError("invalid mel configuration " + cfg.fingerprint());
  }
}

}  // namespace

std::string MelConfig::fingerprint() const {
  std::ostringstream os;
  os << "sr=" << sample_rate << ";n_fft=" << n_fft << ";win=" << win_length << ";hop=" << hop_length
     << ";mels=" << n_mels << ";fmin=" << fmin << ";fmax=" << fmax << ";floor=" << log_floor
     << ";scale=slaney;norm=slaney;log=ln-magnitude;pad=reflect";
  return os.str();
}

std::int64_t stft_frame_count(std::int64_t samples, const MelConfig& cfg) {
  return 1 + samples / cfg.hop_length;
}

Spectrogram stft(const std::vector<float>& signal, const MelConfig& cfg) {
  validate(cfg);
  const auto padded = reflect_pad(signal, cfg.n_fft / 2);
  const std::int64_t frames = 1 + (static_cast<std::int64_t>(padded.size()) - cfg.n_fft) / cfg.hop_length;
  RealFft fft(cfg.n_fft);
  return stft_padded(padded, frames, cfg, hann_window(cfg), fft);
}

double hz_to_mel_slaney(double hz) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  constexpr double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  if (hz >= min_log_hz) return min_log_mel + std::log(hz / min_log_hz) / logstep;
  return hz / f_sp;
}

double mel_to_hz_slaney(double mel) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  constexpr double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  if (mel >= min_log_mel) return min_log_hz * std::exp(logstep * (mel - min_log_mel));
  return f_sp * mel;
}

namespace {
std::vector<double> mel_edges(const MelConfig& cfg) {
  const double lo = hz_to_mel_slaney(cfg.fmin);
  const double hi = hz_to_mel_slaney(cfg.fmax);
  std::vector<double> edges(static_cast<std::size_t>(cfg.n_mels + 2));
  for (int i = 0; i < cfg.n_mels + 2; ++i) {
    edges[i] = mel_to_hz_slaney(lo + (hi - lo) * i / (cfg.n_mels + 1));
  }
  return edges;
}
}  // namespace

std::vector<double> mel_center_frequencies(const MelConfig& cfg) {
  const auto edges = mel_edges(cfg);
  return {edges.begin() + 1, edges.end() - 1};
}

std::vector<double> mel_filterbank(const MelConfig& cfg) {
  validate(cfg);
  const int n_bins = cfg.n_bins();
  const auto edges = mel_edges(cfg);
  std::vector<double> weights(static_cast<std::size_t>(cfg.n_mels * n_bins), 0.0);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double lower_w = edges[m + 1] - edges[m];
    const double upper_w = edges[m + 2] - edges[m + 1];
    const double enorm = 2.0 / (edges[m + 2] - edges[m]);
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.n_fft;
      const double lower = (f - edges[m]) / lower_w;
      const double upper = (edges[m + 2] - f) / upper_w;
      weights[static_cast<std::size_t>(m * n_bins + k)] = std::max(0.0, std::min(lower, upper)) * enorm;
    }
  }
  return weights;
}

MelSpectrogram mel_spectrogram(const Waveform& wave, const MelConfig& cfg) {
  validate(cfg);
  if (wave.sample_rate != cfg.sample_rate) {
    throw FeatureError("mel_spectrogram: waveform rate " + std::to_string(wave.sample_rate) + " differs from " +
                       std::to_string(cfg.sample_rate));
  }
  if (static_cast<int>(wave.samples.size()) < cfg.n_fft) {
    throw FeatureError("mel_spectrogram: need at least " + std::to_string(cfg.n_fft) + " samples, got " +
                       std::to_string(wave.samples.size()));
  }
  const auto spec = stft(wave.samples, cfg);
  const auto fb = mel_filterbank(cfg);
  MelSpectrogram mel;
  mel.frames = spec.frames;
  mel.channels = cfg.n_mels;
  mel.hop_seconds = cfg.hop_seconds();
  mel.values.resize(static_cast<std::size_t>(mel.frames * mel.channels));
  std::vector<double> mag(static_cast<std::size_t>(spec.n_bins));
  for (std::int64_t t = 0; t < spec.frames; ++t) {
    for (std::int64_t k = 0; k < spec.n_bins; ++k) mag[k] = std::abs(spec.bins[t * spec.n_bins + k]);
    for (int m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      const double* row = fb.data() + static_cast<std::size_t>(m) * spec.n_bins;
      for (std::int64_t k = 0; k < spec.n_bins; ++k) e += row[k] * mag[k];
      mel.values[static_cast<std::size_t>(t * cfg.n_mels + m)] = std::log(std::max(e, cfg.log_floor));
    }
  }
  return mel;
}

GriffinLimResult griffin_lim(const MelSpectrogram& mel, int iterations, const MelConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  if (iterations < 1) throw FeatureError("griffin_lim: iterations must be >= 1");
  if (mel.channels != cfg.n_mels || mel.frames < 1) throw FeatureError("griffin_lim: mel shape does not match config");
  for (double v : mel.values) {
    if (!std::isfinite(v)) throw FeatureError("griffin_lim: non-finite mel value");
  }
  const int n_bins = cfg.n_bins();
  const auto fb = mel_filterbank(cfg);
  Eigen::MatrixXd basis(cfg.n_mels, n_bins);
  for (int m = 0; m < cfg.n_mels; ++m)
    for (int k = 0; k < n_bins; ++k) basis(m, k) = fb[static_cast<std::size_t>(m * n_bins + k)];
  const Eigen::MatrixXd pinv = basis.completeOrthogonalDecomposition().pseudoInverse();

  Eigen::MatrixXd mel_lin(cfg.n_mels, mel.frames);
  for (std::int64_t t = 0; t < mel.frames; ++t)
    for (int m = 0; m < cfg.n_mels; ++m) mel_lin(m, t) = std::exp(mel.at(t, m));
  const Eigen::MatrixXd target = (pinv * mel_lin).cwiseMax(0.0);  // [n_bins x frames]
  const double target_norm = std::max(target.norm(), 1e-300);

  const auto window = hann_window(cfg);
  RealFft fft(cfg.n_fft);
  Rng rng(seed);
  Spectrogram spec;
  spec.frames = mel.frames;
  spec.n_bins = n_bins;
  spec.bins.resize(static_cast<std::size_t>(mel.frames * n_bins));
  for (std::int64_t t = 0; t < mel.frames; ++t)
    for (int k = 0; k < n_bins; ++k) {
      spec.bins[t * n_bins + k] = std::polar(target(k, t), 2.0 * M_PI * rng.uniform());
    }

  GriffinLimResult result;
  std::vector<double> signal;
  for (int it = 0; it < iterations; ++it) {
    signal = istft_padded(spec, cfg, window, fft);
    auto rebuilt = stft_padded(signal, mel.frames, cfg, window, fft);
    double err = 0.0;
    for (std::int64_t t = 0; t < mel.frames; ++t)
      for (int k = 0; k < n_bins; ++k) {
        const auto c = rebuilt.bins[t * n_bins + k];
        const double mag = std::abs(c);
        const double d = target(k, t) - mag;
        err += d * d;
        const auto phase = mag > 0 ? c / mag : std::complex<double>(1.0, 0.0);
        spec.bins[t * n_bins + k] = target(k, t) * phase;
      }
    result.residuals.push_back(std::sqrt(err) / target_norm);
  }
  signal = istft_padded(spec, cfg, window, fft);

  // Crop the centering pad.
  const std::int64_t pad = cfg.n_fft / 2;
  const std::int64_t length = std::max<std::int64_t>((mel.frames - 1) * cfg.hop_length, 1);
  result.audio.sample_rate = cfg.sample_rate;
  result.audio.samples.resize(static_cast<std::size_t>(length));
  double peak = 0.0;
  for (std::int64_t i = 0; i < length; ++i) {
    const std::int64_t k = std::min<std::int64_t>(i + pad, static_cast<std::int64_t>(signal.size()) - 1);
    peak = std::max(peak, std::abs(signal[static_cast<std::size_t>(k)]));
  }
  result.raw_peak = peak;
  const double gain = peak > 0.0 ? 0.95 / peak : 1.0;
  for (std::int64_t i = 0; i < length; ++i) {
    const std::int64_t k = std::min<std::int64_t>(i + pad, static_cast<std::int64_t>(signal.size()) - 1);
    result.audio.samples[static_cast<std::size_t>(i)] = static_cast<float>(signal[static_cast<std::size_t>(k)] * gain);
  }
  return result;
}

}  // namespace arflow
