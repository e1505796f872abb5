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
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "arflow/mel.hpp"
#include "arflow/model.hpp"
#include "arflow/random.hpp"
#include "arflow/text.hpp"

namespace arflow {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-6;
  std::int64_t batch_size = 8;
  std::int64_t max_epochs = 100;
  double anneal_factor = 0.5;
  std::int64_t patience = 10;
  double lr_floor = 1e-6;
  double sigma2 = 1.0;  // spherical training prior
  bool gate_loss = true;
  double gate_pos_weight = 1.0;  // weight of the end-of-utterance frame in the gate BCE
  std::uint64_t seed = 0;
  std::int64_t validation_count = 20;
  /// Epochs during which attention gets a diagonal log-prior (0 = never).
  std::int64_t attention_prior_epochs = 0;
  double attention_prior_scale = 1.0;
  /// Guided-attention penalty weight: attention mass at (t, l) costs
  /// 1 - exp(-(l/L - t/T)^2 / (2 w^2)). Training only; 0 disables it.
  double guided_attention = 0.0;
  double guided_width = 0.2;
  /// Global gradient-norm clip (0 = off).
  double grad_clip = 0.0;
  /// Wall-clock budget; training stops after the epoch that crosses it (0 = none).
  double max_seconds = 0.0;
  /// Extra NLL improvement (nats/dim) that counts as progress for annealing.
  double min_improvement = 1e-4;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

/// One prepared utterance: cached mel plus tokens.
struct Utterance {
  std::string id;
  MelSpectrogram mel;
  TokenSequence tokens;
};

struct Corpus {
  std::vector<Utterance> train;
  std::vector<Utterance> validation;
  std::size_t size() const { return train.size() + validation.size(); }
};

/// Deterministic split: a seeded shuffle, the first `validation_count` go to
/// validation. Throws unless at least one training item remains.
Corpus split_corpus(std::vector<Utterance> utterances, std::int64_t validation_count, std::uint64_t seed);

/// Mel features keyed by (absolute path, file size, mtime, feature settings).
/// An empty directory disables caching.
class MelCache {
 public:
  explicit MelCache(std::string directory = {});
  /// Directory from ARFLOW_CACHE_DIR, or no caching when unset.
  static MelCache from_environment();
  MelSpectrogram load(const std::string& audio_path, const MelConfig& config) const;
  std::string key(const std::string& audio_path, const MelConfig& config) const;
  const std::string& directory() const { return dir_; }

 private:
  std::string dir_;
};

/// Loads audio, computes (or fetches) mels and tokenizes each manifest entry.
std::vector<Utterance> prepare_utterances(const std::vector<ManifestEntry>& entries, const Vocabulary& vocab,
                                          const MelConfig& features, const MelCache& cache,
                                          const TokenizeOptions& options = {});

struct LossOptions {
  double sigma2 = 1.0;
  bool gate = false;
  double gate_pos_weight = 1.0;
  /// Weight of the guided-attention penalty (0 = off) and its width.
  double guided_attention = 0.0;
  double guided_width = 0.2;
};

template <typename T>
struct LossTerms {
  Tensor<T> objective;   // nll (+ gate bce), scalar, differentiable
  double nll = 0.0;      // nats per unmasked element
  double gate_bce = 0.0; // per valid frame, 0 when off
  double attention_penalty = 0.0;  // per valid frame and step, 0 when off
  std::int64_t elements = 0;
  std::vector<double> utterance_nll;  // -(log p(z) + logdet) per utterance, nats
};

/// -(log p(z) + logdet) / (valid frames * D). The spherical prior uses
/// options.sigma2; a mixture prior comes from the model. Throws
/// TrainingError naming the utterance when a term is not finite.
template <typename T>
LossTerms<T> nll_loss(const FlowModel<T>& model, const Batch<T>& batch, const LossOptions& options = {},
                      const ForwardOptions<T>& forward_options = {});

/// Length-sorted batches; order shuffled within buckets and across batches.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<Utterance>& utterances, std::int64_t batch_size,
                                                   Rng& rng);

template <typename T>
Batch<T> batch_of(const std::vector<Utterance>& utterances, const std::vector<std::size_t>& indices);

/// Mean NLL in nats/dim over all elements of the set.
template <typename T>
double evaluate_nll(const FlowModel<T>& model, const std::vector<Utterance>& utterances, double sigma2,
                    std::int64_t batch_size = 8);

/// Best-validation tracking with patience-based annealing.
class PlateauScheduler {
 public:
  PlateauScheduler(double initial_lr, double factor, std::int64_t patience, double floor, double min_improvement = 0.0);
  /// Records a validation loss; returns true when the rate was annealed.
  bool observe(double validation_loss);
  double learning_rate() const { return lr_; }
  double best() const { return best_; }
  std::int64_t anneal_count() const { return anneals_; }

 private:
  double lr_, factor_, floor_, min_improvement_;
  std::int64_t patience_, waited_ = 0, anneals_ = 0;
  double best_;
};

struct EpochLog {
  std::int64_t epoch = 0;
  double train_nll = 0.0;
  double val_nll = 0.0;
  double gate_bce = 0.0;
  double learning_rate = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;  // row 0 is the untrained model
  double initial_val_nll = 0.0;
  double best_val_nll = 0.0;
  std::int64_t best_epoch = 0;
  std::int64_t steps = 0;
  bool budget_exhausted = false;
};

struct TrainOutputs {
  std::string directory;  // empty: nothing written
  std::string metadata_json = "{}";
  std::function<void(const EpochLog&)> on_epoch;
};

/// Runs epochs until max_epochs or the time budget. With an output
/// directory: train_log.csv, train_config.json, best.ckpt, latest.ckpt.
/// The model ends holding the best-validation parameters.
template <typename T>
TrainResult train(const TrainConfig& config, const Corpus& corpus, FlowModel<T>& model,
                  const TrainOutputs& outputs = {});

/// Prepends identity-initialized steps so the model has new_K steps; the
/// existing steps keep their reversal flags and parameters.
template <typename T>
void extend_flows(FlowModel<T>& model, std::int64_t new_k, std::uint64_t seed = 0);

/// Grows the speaker table by n_new rows set to the mean of the existing
/// speakers plus uniform noise in [-1e-3, 1e-3].
template <typename T>
void add_speaker(FlowModel<T>& model, std::int64_t n_new, std::uint64_t seed = 0);

/// Closed-form per-channel Gaussian fit over all training frames.
struct GaussianBaseline {
  std::vector<double> mean, variance;
  static GaussianBaseline fit(const std::vector<Utterance>& utterances);
  double nll(const std::vector<Utterance>& utterances) const;  // nats/dim
};

/// Data-dependent init of a fixed mixture prior: k-means over per-utterance
/// latent means, then component means and variances from the member frames.
template <typename T>
void init_mixture_from_data(FlowModel<T>& model, const std::vector<Utterance>& utterances, std::uint64_t seed = 0);

}  // namespace arflow
