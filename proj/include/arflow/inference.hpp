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
#include <optional>
#include <string>
#include <vector>

#include "arflow/mel.hpp"
#include "arflow/model.hpp"
#include "arflow/random.hpp"
#include "arflow/text.hpp"

namespace arflow {

class InferenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SamplingSpec {
  double sigma2 = 0.5;
  std::int64_t frames = 0;  // 0: open-ended, stopped by the gate
  std::uint64_t seed = 0;
  double gate_threshold = 0.5;
  std::int64_t max_frames = 2000;

  void validate() const;
};

/// What produced a synthesis; written next to every output.
struct Provenance {
  std::string mode;
  std::uint64_t seed = 0;
  double sigma2 = 0.0;
  std::optional<double> lambda;
  std::optional<std::string> strategy;
  std::optional<std::int64_t> component;
  std::optional<std::int64_t> offset_dim;
  std::optional<double> offset;
  std::int64_t speaker = 0;
  std::string text;
  std::int64_t frames = 0;
  bool gate_fired = false;

  std::string to_json() const;
};

struct Synthesis {
  MelSpectrogram mel;
  std::vector<double> z;  // frames x D, the latent actually consumed
  std::vector<std::vector<double>> alignments;  // per step, frames x L, step order
  std::vector<double> gate_probs;
  Provenance provenance;

  std::int64_t frames() const { return mel.frames; }
};

/// z = sqrt(sigma2) * eps, eps drawn frame by frame from Rng(seed).
class GaussianLatent {
 public:
  GaussianLatent(std::int64_t dim, double sigma2, std::uint64_t seed);
  void fill(std::span<double> frame);
  std::vector<double> draw(std::int64_t frames);

 private:
  std::int64_t dim_;
  double scale_;
  Rng rng_;
};

template <typename T>
Synthesis sample_prior(const FlowModel<T>& model, const TokenSequence& tokens, const SamplingSpec& spec);

/// Inverse pass over a given latent (frames x D). With use_gate the
/// synthesis may stop before the latent runs out.
template <typename T>
Synthesis synthesize_latent(const FlowModel<T>& model, const TokenSequence& tokens, const std::vector<double>& z,
                            bool use_gate, double gate_threshold = 0.5);

/// z_i = (1 - l_i) z_a + l_i z_b with l_i = i / (steps - 1). The shorter
/// latent is padded with fresh N(0, pad_sigma2) frames drawn from `seed`.
/// Uses the gate when the model has one, so syntheses may end early.
template <typename T>
std::vector<Synthesis> interpolate(const FlowModel<T>& model, const TokenSequence& tokens, std::vector<double> z_a,
                                   std::vector<double> z_b, std::int64_t steps, double pad_sigma2 = 0.5,
                                   std::uint64_t seed = 0);

struct EvidenceSample {
  std::string id;
  const MelSpectrogram* mel = nullptr;
  std::optional<TokenSequence> tokens;  // empty: tokenization failed, skipped
};

struct Evidence {
  std::vector<std::vector<double>> z;  // per sequence, T_i x D
  std::vector<std::int64_t> frames;
  std::vector<std::string> ids;
  std::vector<double> mean;      // D, pooled over all frames
  std::vector<double> variance;  // D, pooled, > 0
  std::int64_t speaker = 0;      // id used during harvesting
  std::int64_t dim = 0;
  std::vector<std::string> warnings;

  void save(const std::string& path) const;
  static Evidence load(const std::string& path);
};

/// Forward pass per sample with `speaker` substituted for the source speaker.
template <typename T>
Evidence harvest_evidence(const FlowModel<T>& model, const std::vector<EvidenceSample>& samples, std::int64_t speaker);

enum class PosteriorStrategy { kGaussian, kReplay };
std::string to_string(PosteriorStrategy s);
PosteriorStrategy parse_posterior_strategy(const std::string& s);

/// T frames of z_e repeated end to end, truncated to T.
std::vector<double> tile_latent(const std::vector<double>& z_e, std::int64_t dim, std::int64_t frames);

/// (a) kGaussian: z ~ N(lambda * mu_e, sigma2 I).
/// (b) kReplay: z = (1 - lambda) * sqrt(sigma2) eps + lambda * tile(z_e[index]).
/// With spec.frames == 0 generation is gate-terminated.
template <typename T>
Synthesis sample_posterior(const FlowModel<T>& model, const Evidence& evidence, double lambda,
                           const TokenSequence& tokens, const SamplingSpec& spec,
                           PosteriorStrategy strategy = PosteriorStrategy::kGaussian, std::size_t replay_index = 0);

struct TransferOptions {
  /// Speaker for the forward pass over the source; defaults to the source's own.
  std::optional<std::int64_t> forward_speaker;
};

/// Forward over the source records z and every step's attention; the inverse
/// pass replays both with the target speaker. Output length equals the source.
template <typename T>
Synthesis transfer_with_alignment(const FlowModel<T>& model, const MelSpectrogram& source_mel,
                                  const TokenSequence& source_tokens, std::int64_t target_speaker,
                                  const TransferOptions& options = {});

struct MixtureSelection {
  std::optional<std::int64_t> component;  // a single component, or
  std::vector<double> weights;           // per-frame component draws with these weights
  std::optional<std::int64_t> offset_dim;
  double offset = 0.0;
};

/// z_t ~ N(mu_k + offset e_d, Sigma_k). Predicted-mixture models need a
/// reference mel to produce the mixture.
template <typename T>
Synthesis sample_mixture(const FlowModel<T>& model, const TokenSequence& tokens, const MixtureSelection& selection,
                         const SamplingSpec& spec, const MelSpectrogram* reference = nullptr);

/// Writes <stem>.mel, <stem>.alignments.csv, <stem>.provenance.json and, with
/// griffin_lim_iters > 0, <stem>.wav.
void write_synthesis(const Synthesis& s, const std::string& directory, const std::string& stem,
                     int griffin_lim_iters = 0, const MelConfig& features = {});

}  // namespace arflow
