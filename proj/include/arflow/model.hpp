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
// Text- and speaker-conditioned autoregressive flow over mel frames.
//
// Steps are indexed in the data-to-latent direction: step 0 consumes the
// mel-spectrogram and step K-1 produces z. Step K-1 is never time-reversed
// and carries the gate; going toward the data side the reversal flag
// alternates. A reversed step flips each utterance over its own length,
// applies the coupling, and flips back, so every step maps natural-order
// frames to natural-order frames.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "arflow/adam.hpp"
#include "arflow/mel.hpp"
#include "arflow/tensor.hpp"
#include "arflow/tensor_io.hpp"
#include "arflow/text.hpp"

namespace arflow {

enum class PriorKind { kSpherical, kMixture };
enum class MixtureMode { kFixed, kPredicted };

struct PriorSpec {
  PriorKind kind = PriorKind::kSpherical;
  double sigma2 = 1.0;  // spherical variance
  std::int64_t components = 1;
  MixtureMode mode = MixtureMode::kFixed;

  bool is_mixture() const { return kind == PriorKind::kMixture; }
  bool operator==(const PriorSpec&) const = default;
};

/// Concrete diagonal-covariance mixture. means and variances are K x D.
struct MixtureParams {
  std::vector<double> weights;
  std::vector<double> means;
  std::vector<double> variances;
  std::int64_t components = 0;
  std::int64_t dim = 0;

  /// Throws std::invalid_argument unless weights sum to 1 and variances > 0.
  void validate() const;
  double mean(std::int64_t k, std::int64_t d) const { return means[static_cast<std::size_t>(k * dim + d)]; }
  double variance(std::int64_t k, std::int64_t d) const { return variances[static_cast<std::size_t>(k * dim + d)]; }
};

struct ModelConfig {
  std::int64_t n_mel = 80;
  std::int64_t n_symbols = 0;
  std::int64_t n_speakers = 1;
  std::int64_t speaker_dim = 16;
  std::int64_t text_dim = 64;  // even; the bidirectional layer uses text_dim / 2 per direction
  std::int64_t n_flows = 1;
  std::int64_t prenet_dim = 64;
  std::int64_t attention_dim = 64;
  std::int64_t lstm_dim = 128;
  std::int64_t mel_encoder_dim = 64;
  bool use_speaker = true;
  bool use_gate = true;
  PriorSpec prior;
  MelConfig features;

  std::int64_t context_dim() const { return text_dim + speaker_dim; }
  /// Row of the speaker table used when speaker conditioning is off.
  std::int64_t dummy_speaker() const { return n_speakers; }
  /// Reversal flag of step k in a K-step model.
  static bool step_reversed(std::int64_t k, std::int64_t n_flows) { return (n_flows - 1 - k) % 2 == 1; }
  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite or out-of-range scale terms.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Open-ended generation ran past the frame cap.
class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
struct LstmParams {
  Tensor<T> w_ih;  // [in, 4H]
  Tensor<T> b;     // [4H]
  Tensor<T> w_hh;  // [H, 4H]
};

template <typename T>
struct TextEncoderParams {
  Tensor<T> embedding;  // [V, E]
  std::vector<Tensor<T>> conv_w;  // 3 x [5E, E]
  std::vector<Tensor<T>> conv_b;  // 3 x [E]
  LstmParams<T> forward;
  LstmParams<T> backward;
};

template <typename T>
struct CouplingStep {
  bool reverse = false;
  Tensor<T> pre_w, pre_b;      // [D, P], [P]
  LstmParams<T> lstm1;         // P -> H
  Tensor<T> query_w, key_w;    // [H, A], [C, A]
  Tensor<T> attn_v;            // [A]
  LstmParams<T> lstm2;         // H + C -> H
  Tensor<T> out_w, out_b;      // [H, 2D], [2D]; zero at init
};

template <typename T>
struct GateParams {
  Tensor<T> w;  // [H + C, 1]
  Tensor<T> b;  // [1]
};

template <typename T>
struct MixturePriorParams {
  Tensor<T> logits;   // [K]
  Tensor<T> means;    // [K, D]
  Tensor<T> raw_var;  // [K, D]; variance = softplus(raw) + 1e-3
};

template <typename T>
struct MelEncoderParams {
  LstmParams<T> lstm;      // D -> M
  Tensor<T> weight_w, weight_b;  // [M, K], [K]
  Tensor<T> mean_w, mean_b;      // [M, K*D], [K*D]
  Tensor<T> var_w, var_b;        // [M, K*D], [K*D]
};

inline constexpr double kVarianceFloor = 1e-3;
inline constexpr double kMaxLogScale = 50.0;
inline constexpr double kInstanceNormEps = 1e-7;

/// Padded batch of utterances. mels is [B, T, D]; frames beyond lengths[b]
/// are zero and masked everywhere.
template <typename T>
struct Batch {
  Tensor<T> mels;
  std::vector<std::int64_t> lengths;
  std::vector<TokenSequence> tokens;
  std::vector<std::string> ids;

  std::int64_t size() const { return static_cast<std::int64_t>(lengths.size()); }
  std::int64_t max_frames() const { return mels.dim(1); }
  std::int64_t valid_frames() const;
};

template <typename T>
Batch<T> make_batch(const std::vector<const MelSpectrogram*>& mels, const std::vector<TokenSequence>& tokens,
                    const std::vector<std::string>& ids = {});

template <typename T>
struct ForwardOptions {
  /// Additive attention log-prior, [B, T, L] in natural frame order.
  const std::vector<T>* attention_log_prior = nullptr;
};

template <typename T>
struct ForwardResult {
  Tensor<T> z;                          // [B, T, D]
  Tensor<T> logdet;                     // [B], masked sum over all steps
  std::vector<Tensor<T>> step_logdets;  // per step, [B]
  Tensor<T> gate_logits;                // [B, T], undefined without a gate
  std::vector<Tensor<T>> alignments;    // per step, [B, T, L] in the step's own frame order
  std::vector<std::int64_t> text_lengths;
};

template <typename T>
struct InverseRequest {
  TokenSequence tokens;
  /// Finite latent, frames x D row-major. Leave empty for open-ended generation.
  std::vector<T> z;
  /// Open-ended latent source: fills frame t of z.
  std::function<void(std::int64_t t, std::span<T> frame)> sample;
  bool use_gate = false;
  double gate_threshold = 0.5;
  std::int64_t max_frames = 2000;
  /// Per step [frames x L] weights in the step's own frame order; bypasses attention.
  const std::vector<std::vector<T>>* replay_alignments = nullptr;
};

template <typename T>
struct InverseResult {
  std::vector<T> x;  // frames x D
  std::vector<T> z;  // the latent frames actually consumed
  std::int64_t frames = 0;
  std::vector<std::vector<T>> alignments;  // per step, [frames x L]
  std::vector<T> gate_probs;               // per frame, empty without a gate
  bool gate_fired = false;

  MelSpectrogram mel(double hop_seconds) const;
};

template <typename T>
class FlowModel {
 public:
  explicit FlowModel(ModelConfig config, std::uint64_t seed = 0);

  const ModelConfig& config() const { return config_; }
  std::int64_t n_flows() const { return static_cast<std::int64_t>(steps.size()); }

  /// All trainable tensors with stable names.
  ParameterList<T> parameters() const;
  std::vector<NamedTensor<T>> state() const;
  /// Copies values by name; shapes must match and every parameter must be present.
  void load_state(const std::vector<NamedTensor<T>>& tensors);
  template <typename U>
  FlowModel<U> cast() const;

  /// [L, E + S] token encodings with the speaker row concatenated.
  Tensor<T> encode_text(const TokenSequence& tokens) const;

  ForwardResult<T> forward(const Batch<T>& batch, const ForwardOptions<T>& options = {}) const;

  /// Per-utterance log p(z) [B] under the model's prior, masked to valid
  /// frames. `mels` is only read by the predicted mixture.
  Tensor<T> prior_logp(const Tensor<T>& z, std::span<const std::int64_t> lengths, const Tensor<T>& mels) const;

  /// Mixture parameters as tensors with a batch axis: logits [B, K],
  /// means [B, K, D], variances [B, K, D].
  struct MixtureTensors {
    Tensor<T> logits, means, variances;
  };
  MixtureTensors mixture_tensors(const Tensor<T>& mels, std::span<const std::int64_t> lengths) const;

  /// Global mixture (fixed mode).
  MixtureParams mixture() const;
  /// Mixture emitted by the mel encoder (predicted mode).
  MixtureParams predict_mixture(const MelSpectrogram& mel) const;

  /// Sequential z -> x pass for one utterance.
  InverseResult<T> inverse(const InverseRequest<T>& request) const;

  TextEncoderParams<T> encoder;
  Tensor<T> speakers;  // [n_speakers + 1, S]
  std::vector<CouplingStep<T>> steps;
  GateParams<T> gate;
  MixturePriorParams<T> mixture_prior;
  MelEncoderParams<T> mel_encoder;

  /// New identity-initialized coupling step (used by extend_flows).
  CouplingStep<T> make_step(bool reverse, std::uint64_t seed) const;
  /// Updates config().n_flows / n_speakers after structural edits.
  void sync_config();

 private:
  ModelConfig config_;
};

extern template class FlowModel<float>;
extern template class FlowModel<double>;

template <typename T>
template <typename U>
FlowModel<U> FlowModel<T>::cast() const {
  FlowModel<U> out(config_, 0);
  std::vector<NamedTensor<U>> converted;
  for (const auto& nt : state()) converted.push_back({nt.name, nt.tensor.template cast<U>()});
  out.load_state(converted);
  return out;
}

/// Frame mask [B, T, width] of ones on valid frames.
template <typename T>
Tensor<T> frame_mask(std::span<const std::int64_t> lengths, std::int64_t frames, std::int64_t width);

/// Spherical Gaussian log-density per utterance, [B].
template <typename T>
Tensor<T> spherical_logp(const Tensor<T>& z, std::span<const std::int64_t> lengths, double sigma2);

/// Per-frame mixture log-density [B, T] (unmasked).
template <typename T>
Tensor<T> mixture_frame_logp(const Tensor<T>& z, const Tensor<T>& logits, const Tensor<T>& means,
                             const Tensor<T>& variances);

/// log p(z) for a T x D latent under a spherical prior or a mixture.
double prior_logp(std::span<const double> z, std::int64_t dim, double sigma2);
double prior_logp(std::span<const double> z, const MixtureParams& mixture);
/// Component posteriors for one latent frame, computed in log space.
std::vector<double> responsibilities(std::span<const double> z_frame, const MixtureParams& mixture);

/// Diagonal attention prior [B, T, L] (beta-binomial over token positions
/// centered on the proportional frame position), natural frame order.
template <typename T>
std::vector<T> diagonal_attention_prior(std::span<const std::int64_t> frame_lengths,
                                        std::span<const std::int64_t> text_lengths, std::int64_t max_frames,
                                        std::int64_t max_text, double scale = 1.0);

/// Checkpoint: "ARFLOWCK" magic, u32 version, u64 header length, JSON
/// header (config, vocabulary, feature settings, metadata), named tensors.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
  ModelConfig config;
  std::vector<std::string> vocabulary;
  std::string metadata_json = "{}";
};

template <typename T>
void save_checkpoint(const std::string& path, const FlowModel<T>& model, const std::string& metadata_json = "{}");
CheckpointInfo read_checkpoint_info(const std::string& path);
template <typename T>
FlowModel<T> load_checkpoint(const std::string& path, std::string* metadata_json = nullptr);

}  // namespace arflow
