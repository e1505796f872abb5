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

#include "arflow/training.hpp"
#include "json.hpp"

namespace arflow {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw TrainingError("train config: " + msg); };
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be >= 0");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (max_epochs < 0) fail("max_epochs must be >= 0");
  if (!(anneal_factor > 0.0 && anneal_factor <= 1.0)) fail("anneal_factor must be in (0, 1]");
  if (patience < 1) fail("patience must be >= 1");
  if (!(lr_floor >= 0.0)) fail("lr_floor must be >= 0");
  if (!(sigma2 > 0.0)) fail("sigma2 must be > 0");
  if (!(gate_pos_weight > 0.0)) fail("gate_pos_weight must be > 0");
  if (validation_count < 1) fail("validation_count must be >= 1");
  if (attention_prior_epochs < 0) fail("attention_prior_epochs must be >= 0");
  if (!(attention_prior_scale > 0.0)) fail("attention_prior_scale must be > 0");
  if (!(guided_attention >= 0.0)) fail("guided_attention must be >= 0");
  if (!(guided_width > 0.0)) fail("guided_width must be > 0");
  if (!(grad_clip >= 0.0)) fail("grad_clip must be >= 0");
  if (!(max_seconds >= 0.0)) fail("max_seconds must be >= 0");
}

std::string TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["learning_rate"] = learning_rate;
  j["weight_decay"] = weight_decay;
  j["batch_size"] = batch_size;
  j["max_epochs"] = max_epochs;
  j["anneal_factor"] = anneal_factor;
  j["patience"] = patience;
  j["lr_floor"] = lr_floor;
  j["sigma2"] = sigma2;
  j["gate_loss"] = gate_loss;
  j["gate_pos_weight"] = gate_pos_weight;
  j["seed"] = seed;
  j["validation_count"] = validation_count;
  j["attention_prior_epochs"] = attention_prior_epochs;
  j["attention_prior_scale"] = attention_prior_scale;
  j["guided_attention"] = guided_attention;
  j["guided_width"] = guided_width;
  j["grad_clip"] = grad_clip;
  j["max_seconds"] = max_seconds;
  j["min_improvement"] = min_improvement;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw TrainingError(std::string("train config: ") + e.what());
  }
  if (!j.is_object()) throw TrainingError("train config: expected a JSON object");
  TrainConfig c;
  static const char* known[] = {"learning_rate", "weight_decay",     "batch_size",           "max_epochs",
                                "anneal_factor", "patience",         "lr_floor",             "sigma2",
                                "gate_loss",     "gate_pos_weight",  "seed",                 "validation_count",
                                "attention_prior_epochs", "attention_prior_scale", "guided_attention", "guided_width",
                                "grad_clip",     "max_seconds", "min_improvement"};
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw TrainingError("train config: unknown field '" + key + "'");
  }
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.anneal_factor = j.value("anneal_factor", c.anneal_factor);
    c.patience = j.value("patience", c.patience);
    c.lr_floor = j.value("lr_floor", c.lr_floor);
    c.sigma2 = j.value("sigma2", c.sigma2);
    c.gate_loss = j.value("gate_loss", c.gate_loss);
    c.gate_pos_weight = j.value("gate_pos_weight", c.gate_pos_weight);
    c.seed = j.value("seed", c.seed);
    c.validation_count = j.value("validation_count", c.validation_count);
    c.attention_prior_epochs = j.value("attention_prior_epochs", c.attention_prior_epochs);
    c.attention_prior_scale = j.value("attention_prior_scale", c.attention_prior_scale);
    c.guided_attention = j.value("guided_attention", c.guided_attention);
    c.guided_width = j.value("guided_width", c.guided_width);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.max_seconds = j.value("max_seconds", c.max_seconds);
    c.min_improvement = j.value("min_improvement", c.min_improvement);
  } catch (const nlohmann::json::exception& e) {
    throw TrainingError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace arflow
