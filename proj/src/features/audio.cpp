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
#include "arflow/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace arflow {

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}
void put_u16(std::ostream& out, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  return std::sin(M_PI * x) / (M_PI * x);
}

}  // namespace

Waveform load_wav(const std::string& path, int target_rate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AudioError("cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw AudioError("'" + path + "': malformed RIFF header");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    if (pos + 8 + size > bytes.size()) {
      // Tolerate a data chunk whose declared size runs past the file end.
      if (std::memcmp(chunk, "data", 4) != 0) throw AudioError("'" + path + "': truncated chunk");
    }
    const std::size_t avail = std::min<std::size_t>(size, bytes.size() - pos - 8);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) throw AudioError("'" + path + "': malformed fmt chunk");
      format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = read_u32(chunk + 12);
      bits = read_u16(chunk + 22);
      if (format == 0xFFFE && avail >= 40) format = read_u16(chunk + 32);  // WAVE_FORMAT_EXTENSIBLE subformat
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = avail;
    }
    pos += 8 + size + (size & 1u);
  }
  if (channels == 0 || rate == 0) throw AudioError("'" + path + "': missing fmt chunk");
  if (!data) throw AudioError("'" + path + "': missing data chunk");
  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32) {
    throw AudioError("'" + path + "': unsupported codec (format " + std::to_string(format) + ", " +
                     std::to_string(bits) + " bits); expected 16-bit PCM or 32-bit float");
  }
  const std::size_t bytes_per = bits / 8;
  const std::size_t frames = data_size / (bytes_per * channels);
  Waveform wave;
  wave.sample_rate = static_cast<int>(rate);
  wave.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + (i * channels + c) * bytes_per;
      if (pcm16) {
        acc += static_cast<std::int16_t>(read_u16(p)) / 32768.0;
      } else {
        const std::uint32_t u = read_u32(p);
        float f;
        std::memcpy(&f, &u, 4);
        acc += f;
      }
    }
    wave.samples[i] = static_cast<float>(std::clamp(acc / channels, -1.0, 1.0));
  }
  if (target_rate > 0 && wave.sample_rate != target_rate) return resample(wave, target_rate);
  return wave;
}

void write_wav(const Waveform& wave, const std::string& path, WavEncoding encoding) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw AudioError("cannot open '" + path + "' for writing");
  const bool pcm = encoding == WavEncoding::kPcm16;
  const std::uint16_t bits = pcm ? 16 : 32;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(wave.samples.size() * (bits / 8));
  out.write("RIFF", 4);
  put_u32(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(out, 16);
  put_u16(out, pcm ? 1 : 3);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(wave.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(wave.sample_rate) * (bits / 8));
  put_u16(out, bits / 8);
  put_u16(out, bits);
  out.write("data", 4);
  put_u32(out, data_bytes);
  for (float s : wave.samples) {
    const float c = std::clamp(s, -1.0f, 1.0f);
    if (pcm) {
      put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32767.0f))));
    } else {
      std::uint32_t u;
      std::memcpy(&u, &c, 4);
      put_u32(out, u);
    }
  }
  if (!out) throw AudioError("failed writing '" + path + "'");
}

Waveform resample(const Waveform& wave, int target_rate) {
  if (target_rate <= 0) throw AudioError("resample: target rate must be positive");
  if (wave.sample_rate == target_rate) return wave;
  const double ratio = static_cast<double>(target_rate) / wave.sample_rate;
  const double cutoff = std::min(1.0, ratio);
  constexpr double kZeroCrossings = 16.0;
  const double half_width = kZeroCrossings / cutoff;
  const auto n_in = static_cast<std::int64_t>(wave.samples.size());
  const auto n_out = static_cast<std::int64_t>(std::floor(static_cast<double>(n_in) * ratio));
  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(static_cast<std::size_t>(std::max<std::int64_t>(n_out, 0)));
  for (std::int64_t i = 0; i < n_out; ++i) {
    const double center = static_cast<double>(i) / ratio;
    const auto lo = static_cast<std::int64_t>(std::ceil(center - half_width));
    const auto hi = static_cast<std::int64_t>(std::floor(center + half_width));
    double acc = 0.0;
    for (std::int64_t k = std::max<std::int64_t>(lo, 0); k <= std::min(hi, n_in - 1); ++k) {
      const double d = center - static_cast<double>(k);
      const double window = 0.5 + 0.5 * std::cos(M_PI * d / half_width);
      acc += wave.samples[static_cast<std::size_t>(k)] * cutoff * sinc(cutoff * d) * window;
    }
    out.samples[static_cast<std::size_t>(i)] = static_cast<float>(std::clamp(acc, -1.0, 1.0));
  }
  return out;
}

}  // namespace arflow
