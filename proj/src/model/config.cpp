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
#include <cmath>

#include "arflow/model.hpp"
#include "json.hpp"

namespace arflow {

using nlohmann::json;

void MixtureParams::validate() const {
  if (components < 1 || dim < 1) throw std::invalid_argument("mixture: need K >= 1 and D >= 1");
  const auto kd = static_cast<std::size_t>(components * dim);
  if (weights.size() != static_cast<std::size_t>(components) || means.size() != kd || variances.size() != kd) {
    throw std::invalid_argument("mixture: parameter sizes do not match K=" + std::to_string(components) +
                                ", D=" + std::to_string(dim));
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("mixture: negative weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-6) throw std::invalid_argument("mixture: weights sum to " + std::to_string(total));
  for (double v : variances) {
    if (!(v > 0.0)) throw std::invalid_argument("mixture: covariance entries must be positive");
  }
}

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ModelError("model config: " + what);
  };
  need(n_mel >= 1, "n_mel must be >= 1");
  need(n_symbols >= 1, "n_symbols must be >= 1");
  need(n_speakers >= 1, "n_speakers must be >= 1");
  need(speaker_dim >= 0, "speaker_dim must be >= 0");
  need(text_dim >= 2 && text_dim % 2 == 0, "text_dim must be even and >= 2");
  need(n_flows >= 0, "n_flows must be >= 0");
  need(prenet_dim >= 1 && attention_dim >= 1 && lstm_dim >= 1 && mel_encoder_dim >= 1, "layer sizes must be >= 1");
  need(prior.sigma2 > 0.0, "training prior variance must be > 0");
  need(!prior.is_mixture() || prior.components >= 1, "mixture needs >= 1 component");
  need(features.n_mels == n_mel, "feature n_mels differs from n_mel");
}

std::string ModelConfig::to_json() const {
  json j;
  j["n_mel"] = n_mel;
  j["n_symbols"] = n_symbols;
  j["n_speakers"] = n_speakers;
  j["speaker_dim"] = speaker_dim;
  j["text_dim"] = text_dim;
  j["n_flows"] = n_flows;
  j["prenet_dim"] = prenet_dim;
  j["attention_dim"] = attention_dim;
  j["lstm_dim"] = lstm_dim;
  j["mel_encoder_dim"] = mel_encoder_dim;
  j["use_speaker"] = use_speaker;
  j["use_gate"] = use_gate;
  j["prior"] = {{"kind", prior.is_mixture() ? "mixture" : "spherical"},
                {"sigma2", prior.sigma2},
                {"components", prior.components},
                {"mode", prior.mode == MixtureMode::kFixed ? "fixed" : "predicted"}};
  j["features"] = {{"sample_rate", features.sample_rate}, {"n_fft", features.n_fft},
                   {"win_length", features.win_length},   {"hop_length", features.hop_length},
                   {"n_mels", features.n_mels},           {"fmin", features.fmin},
                   {"fmax", features.fmax},               {"log_floor", features.log_floor},
                   {"fingerprint", features.fingerprint()}};
  return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  ModelConfig c;
  try {
    const json j = json::parse(text);
    c.n_mel = j.value("n_mel", c.n_mel);
    c.n_symbols = j.value("n_symbols", c.n_symbols);
    c.n_speakers = j.value("n_speakers", c.n_speakers);
    c.speaker_dim = j.value("speaker_dim", c.speaker_dim);
    c.text_dim = j.value("text_dim", c.text_dim);
    c.n_flows = j.value("n_flows", c.n_flows);
    c.prenet_dim = j.value("prenet_dim", c.prenet_dim);
    c.attention_dim = j.value("attention_dim", c.attention_dim);
    c.lstm_dim = j.value("lstm_dim", c.lstm_dim);
    c.mel_encoder_dim = j.value("mel_encoder_dim", c.mel_encoder_dim);
    c.use_speaker = j.value("use_speaker", c.use_speaker);
    c.use_gate = j.value("use_gate", c.use_gate);
    if (j.contains("prior")) {
      const auto& p = j["prior"];
      const std::string kind = p.value("kind", "spherical");
      if (kind != "spherical" && kind != "mixture") throw ModelError("unknown prior kind '" + kind + "'");
      c.prior.kind = kind == "mixture" ? PriorKind::kMixture : PriorKind::kSpherical;
      c.prior.sigma2 = p.value("sigma2", c.prior.sigma2);
      c.prior.components = p.value("components", c.prior.components);
      const std::string mode = p.value("mode", "fixed");
      if (mode != "fixed" && mode != "predicted") throw ModelError("unknown mixture mode '" + mode + "'");
      c.prior.mode = mode == "fixed" ? MixtureMode::kFixed : MixtureMode::kPredicted;
    }
    if (j.contains("features")) {
      const auto& f = j["features"];
      c.features.sample_rate = f.value("sample_rate", c.features.sample_rate);
      c.features.n_fft = f.value("n_fft", c.features.n_fft);
      c.features.win_length = f.value("win_length", c.features.win_length);
      c.features.hop_length = f.value("hop_length", c.features.hop_length);
      c.features.n_mels = f.value("n_mels", c.features.n_mels);
      c.features.fmin = f.value("fmin", c.features.fmin);
      c.features.fmax = f.value("fmax", c.features.fmax);
      c.features.log_floor = f.value("log_floor", c.features.log_floor);
    }
  } catch (const json::exception& e) {
    throw ModelError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace arflow
