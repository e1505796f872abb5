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
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include "arflow/audio.hpp"
#include "arflow/tensor_io.hpp"
#include "arflow/training.hpp"

namespace arflow {

namespace fs = std::filesystem;

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

template <typename V>
void shuffle_with(std::vector<V>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace

Corpus split_corpus(std::vector<Utterance> utterances, std::int64_t validation_count, std::uint64_t seed) {
  if (utterances.empty()) throw TrainingError("corpus is empty");
  if (validation_count < 1) throw TrainingError("validation_count must be >= 1");
  if (static_cast<std::int64_t>(utterances.size()) <= validation_count) {
    throw TrainingError("corpus has " + std::to_string(utterances.size()) + " utterances; need more than " +
                        std::to_string(validation_count) + " for the validation split");
  }
  std::vector<std::size_t> order(utterances.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  shuffle_with(order, rng);
  const auto nv = static_cast<std::size_t>(validation_count);
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(nv));
  std::vector<std::size_t> tr(order.begin() + static_cast<std::ptrdiff_t>(nv), order.end());
  std::sort(val.begin(), val.end());
  std::sort(tr.begin(), tr.end());
  Corpus c;
  for (auto i : val) c.validation.push_back(std::move(utterances[i]));
  for (auto i : tr) c.train.push_back(std::move(utterances[i]));
  return c;
}

MelCache::MelCache(std::string directory) : dir_(std::move(directory)) {}

MelCache MelCache::from_environment() {
  const char* env = std::getenv("ARFLOW_CACHE_DIR");
  return MelCache(env ? env : "");
}

std::string MelCache::key(const std::string& audio_path, const MelConfig& config) const {
  std::error_code ec;
  const auto abs = fs::absolute(audio_path, ec).lexically_normal().string();
  std::ostringstream s;
  s << abs << '|' << fs::file_size(audio_path, ec) << '|';
  s << fs::last_write_time(audio_path, ec).time_since_epoch().count() << '|' << config.fingerprint();
  std::ostringstream hex;
  hex << std::hex << std::setw(16) << std::setfill('0') << fnv1a(s.str());
  return hex.str();
}

MelSpectrogram MelCache::load(const std::string& audio_path, const MelConfig& config) const {
  fs::path cached;
  if (!dir_.empty()) {
    cached = fs::path(dir_) / (key(audio_path, config) + ".mel");
    if (fs::exists(cached)) {
      try {
        const auto t = load_tensor_file<double>(cached.string());
        if (t.rank() == 2 && t.dim(1) == config.n_mels) {
          MelSpectrogram m;
          m.values.assign(t.data().begin(), t.data().end());
          m.frames = t.dim(0);
          m.channels = t.dim(1);
          m.hop_seconds = config.hop_seconds();
          return m;
        }
      } catch (const FormatError&) {
        // Recompute below and overwrite the broken entry.
      }
    }
  }
  auto mel = mel_spectrogram(load_wav(audio_path, config.sample_rate), config);
  if (!dir_.empty()) {
    fs::create_directories(dir_);
    const auto tmp = cached.string() + ".tmp";
    save_tensor_file(tmp, Tensor<double>({mel.frames, mel.channels}, mel.values));
    fs::rename(tmp, cached);
  }
  return mel;
}

std::vector<Utterance> prepare_utterances(const std::vector<ManifestEntry>& entries, const Vocabulary& vocab,
                                          const MelConfig& features, const MelCache& cache,
                                          const TokenizeOptions& options) {
  std::vector<Utterance> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    Utterance u;
    u.id = fs::path(e.path).stem().string();
    try {
      u.tokens = tokenize(e.text, vocab, options, e.speaker);
      u.mel = cache.load(e.path, features);
    } catch (const std::exception& ex) {
      throw TrainingError("manifest line " + std::to_string(e.line) + " (" + e.path + "): " + ex.what());
    }
    out.push_back(std::move(u));
  }
  return out;
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<Utterance>& utterances, std::int64_t batch_size,
                                                   Rng& rng) {
  if (batch_size < 1) throw TrainingError("batch_size must be >= 1");
  std::vector<std::size_t> order(utterances.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle_with(order, rng);
  const auto bs = static_cast<std::size_t>(batch_size);
  const std::size_t bucket = bs * 4;
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += bucket) {
    const auto end = std::min(order.size(), start + bucket);
    std::stable_sort(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t a, std::size_t b) { return utterances[a].mel.frames < utterances[b].mel.frames; });
    for (std::size_t i = start; i < end; i += bs) {
      batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                           order.begin() + static_cast<std::ptrdiff_t>(std::min(end, i + bs)));
    }
  }
  shuffle_with(batches, rng);
  return batches;
}

template <typename T>
Batch<T> batch_of(const std::vector<Utterance>& utterances, const std::vector<std::size_t>& indices) {
  std::vector<const MelSpectrogram*> mels;
  std::vector<TokenSequence> tokens;
  std::vector<std::string> ids;
  for (auto i : indices) {
    const auto& u = utterances.at(i);
    mels.push_back(&u.mel);
    tokens.push_back(u.tokens);
    ids.push_back(u.id);
  }
  return make_batch<T>(mels, tokens, ids);
}

template Batch<float> batch_of<float>(const std::vector<Utterance>&, const std::vector<std::size_t>&);
template Batch<double> batch_of<double>(const std::vector<Utterance>&, const std::vector<std::size_t>&);

GaussianBaseline GaussianBaseline::fit(const std::vector<Utterance>& utterances) {
  if (utterances.empty()) throw TrainingError("gaussian baseline: no utterances");
  const auto d = utterances[0].mel.channels;
  GaussianBaseline g;
  g.mean.assign(static_cast<std::size_t>(d), 0.0);
  g.variance.assign(static_cast<std::size_t>(d), 0.0);
  double n = 0.0;
  for (const auto& u : utterances) {
    for (std::int64_t t = 0; t < u.mel.frames; ++t)
      for (std::int64_t j = 0; j < d; ++j) g.mean[static_cast<std::size_t>(j)] += u.mel.at(t, j);
    n += static_cast<double>(u.mel.frames);
  }
  for (auto& m : g.mean) m /= n;
  for (const auto& u : utterances) {
    for (std::int64_t t = 0; t < u.mel.frames; ++t)
      for (std::int64_t j = 0; j < d; ++j) {
        const double e = u.mel.at(t, j) - g.mean[static_cast<std::size_t>(j)];
        g.variance[static_cast<std::size_t>(j)] += e * e;
      }
  }
  for (auto& v : g.variance) v = std::max(v / n, 1e-12);
  return g;
}

double GaussianBaseline::nll(const std::vector<Utterance>& utterances) const {
  double total = 0.0, n = 0.0;
  for (const auto& u : utterances) {
    for (std::int64_t t = 0; t < u.mel.frames; ++t)
      for (std::int64_t j = 0; j < u.mel.channels; ++j) {
        const double v = variance[static_cast<std::size_t>(j)];
        const double e = u.mel.at(t, j) - mean[static_cast<std::size_t>(j)];
        total += 0.5 * std::log(2.0 * M_PI * v) + 0.5 * e * e / v;
      }
    n += static_cast<double>(u.mel.frames * u.mel.channels);
  }
  return total / n;
}

}  // namespace arflow
