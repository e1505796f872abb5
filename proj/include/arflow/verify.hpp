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

// Acceptance suite: invariant checks on random models plus scaled-down
// trend checks on the built-in toy corpus.

#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "arflow/model.hpp"
#include "arflow/training.hpp"

namespace arflow {

struct CheckResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  /// Training budgets for the toy models.
  double train_seconds = 420.0;
  double mixture_seconds = 240.0;
  /// Trained toy checkpoints; empty: train from scratch.
  std::string checkpoint;
  std::string mixture_checkpoint;
  /// Where freshly trained models and logs go; empty: nothing written.
  std::string output_dir;
  /// Criterion ids to run; empty: all.
  std::set<int> only;
  std::function<void(const std::string&)> progress;
};

/// Criterion names, indexed by id - 1.
const std::vector<std::string>& acceptance_names();

CheckResult check_invertibility(std::uint64_t seed);
CheckResult check_logdet(std::uint64_t seed);
CheckResult check_gradients(std::uint64_t seed);
CheckResult check_likelihood_identity(std::uint64_t seed);
CheckResult check_yin();

/// Toy corpus split into train and validation with the default vocabulary.
Corpus toy_training_corpus(std::uint64_t seed = 1);
/// Training settings used for the toy models.
TrainConfig toy_train_config(double max_seconds, std::uint64_t seed);

CheckResult check_variation(const FlowModel<float>& model, const Corpus& corpus, std::uint64_t seed);
CheckResult check_interpolation(const FlowModel<float>& model, const Corpus& corpus, std::uint64_t seed);
CheckResult check_posterior(const FlowModel<float>& model, const Corpus& corpus, std::uint64_t seed);
CheckResult check_mixture(const FlowModel<float>& model, const Corpus& corpus);
CheckResult check_extend_flows(const FlowModel<float>& model, const Corpus& corpus, std::uint64_t seed);

/// Runs the selected criteria in order; `on_result` sees each as it finishes.
std::vector<CheckResult> run_acceptance(const VerifyOptions& options,
                                        const std::function<void(const CheckResult&)>& on_result = {});

std::string format_result(const CheckResult& r);

}  // namespace arflow
