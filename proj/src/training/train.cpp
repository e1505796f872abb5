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
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>

#include "arflow/adam.hpp"
#include "arflow/ops.hpp"
#include "arflow/training.hpp"

namespace arflow {

namespace fs = std::filesystem;

namespace {

std::string join_ids(const std::vector<std::string>& ids) {
  std::string s;
  for (const auto& id : ids) s += (s.empty() ? "" : ", ") + id;
  return s;
}

template <typename T>
void clip_gradients(const ParameterList<T>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (T g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (!(norm > max_norm)) return;  // also skips NaN; the optimizer reports it
  const auto factor = static_cast<T>(max_norm / norm);
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    auto tensor = p.tensor;
    for (auto& g : tensor.mutable_grad()) g *= factor;
  }
}

}  // namespace

template <typename T>
LossTerms<T> nll_loss(const FlowModel<T>& model, const Batch<T>& batch, const LossOptions& options,
                      const ForwardOptions<T>& forward_options) {
  const auto& cfg = model.config();
  ForwardResult<T> fwd;
  try {
    fwd = model.forward(batch, forward_options);
  } catch (const NumericError& e) {
    throw TrainingError(std::string(e.what()) + " in batch [" + join_ids(batch.ids) + "]");
  }
  const Tensor<T> logp = cfg.prior.is_mixture() ? model.prior_logp(fwd.z, batch.lengths, batch.mels)
                                                : spherical_logp(fwd.z, batch.lengths, options.sigma2);
  const auto per = add(logp, fwd.logdet);
  LossTerms<T> terms;
  for (std::int64_t b = 0; b < batch.size(); ++b) {
    const double v = -static_cast<double>(per.data()[static_cast<std::size_t>(b)]);
    if (!std::isfinite(v)) throw TrainingError("non-finite loss for utterance " + batch.ids[static_cast<std::size_t>(b)]);
    terms.utterance_nll.push_back(v);
  }
  const std::int64_t valid = batch.valid_frames();
  terms.elements = valid * cfg.n_mel;
  auto nll = scale(neg(sum(per)), static_cast<T>(1.0 / static_cast<double>(terms.elements)));
  terms.nll = static_cast<double>(nll.item());
  terms.objective = nll;
  if (options.guided_attention > 0.0) {
    const auto frames = batch.max_frames();
    const auto max_text = fwd.alignments.empty() ? 0 : fwd.alignments[0].dim(2);
    Tensor<T> penalty;
    for (std::size_t k = 0; k < fwd.alignments.size(); ++k) {
      const bool reversed = model.steps[k].reverse;
      std::vector<T> w(static_cast<std::size_t>(batch.size() * frames * max_text), T(0));
      for (std::int64_t b = 0; b < batch.size(); ++b) {
        const auto len = batch.lengths[static_cast<std::size_t>(b)];
        const auto tl = fwd.text_lengths[static_cast<std::size_t>(b)];
        for (std::int64_t t = 0; t < len; ++t) {
          const auto natural = reversed ? len - 1 - t : t;
          const double pos = static_cast<double>(natural) / static_cast<double>(len);
          for (std::int64_t l = 0; l < tl; ++l) {
            const double e = static_cast<double>(l) / static_cast<double>(tl) - pos;
            w[static_cast<std::size_t>((b * frames + t) * max_text + l)] =
                static_cast<T>(1.0 - std::exp(-e * e / (2.0 * options.guided_width * options.guided_width)));
          }
        }
      }
      auto term = sum(mul(fwd.alignments[k], Tensor<T>(fwd.alignments[k].shape(), std::move(w))));
      penalty = penalty.defined() ? add(penalty, term) : term;
    }
    if (penalty.defined()) {
      penalty = scale(penalty, static_cast<T>(1.0 / static_cast<double>(valid * static_cast<std::int64_t>(fwd.alignments.size()))));
      terms.attention_penalty = static_cast<double>(penalty.item());
      terms.objective = add(terms.objective, scale(penalty, static_cast<T>(options.guided_attention)));
    }
  }
  if (options.gate && cfg.use_gate) {
    const auto frames = batch.max_frames();
    std::vector<T> targets(static_cast<std::size_t>(batch.size() * frames), T(0)), weights(targets.size(), T(0));
    for (std::int64_t b = 0; b < batch.size(); ++b) {
      const auto len = batch.lengths[static_cast<std::size_t>(b)];
      for (std::int64_t t = 0; t < len; ++t) weights[static_cast<std::size_t>(b * frames + t)] = T(1);
      targets[static_cast<std::size_t>(b * frames + len - 1)] = T(1);
      weights[static_cast<std::size_t>(b * frames + len - 1)] = static_cast<T>(options.gate_pos_weight);
    }
    auto bce = scale(bce_with_logits(fwd.gate_logits, std::span<const T>(targets), std::span<const T>(weights)),
                     static_cast<T>(1.0 / static_cast<double>(valid)));
    terms.gate_bce = static_cast<double>(bce.item());
    if (!std::isfinite(terms.gate_bce)) throw TrainingError("non-finite gate loss in batch [" + join_ids(batch.ids) + "]");
    terms.objective = add(terms.objective, bce);
  }
  return terms;
}

template <typename T>
double evaluate_nll(const FlowModel<T>& model, const std::vector<Utterance>& utterances, double sigma2,
                    std::int64_t batch_size) {
  if (utterances.empty()) throw TrainingError("evaluate_nll: no utterances");
  NoGradGuard guard;
  std::vector<std::size_t> order(utterances.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return utterances[a].mel.frames < utterances[b].mel.frames; });
  double total = 0.0;
  std::int64_t elements = 0;
  LossOptions opts;
  opts.sigma2 = sigma2;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                       order.begin() + static_cast<std::ptrdiff_t>(
                                                           std::min(order.size(), start + static_cast<std::size_t>(batch_size))));
    const auto terms = nll_loss(model, batch_of<T>(utterances, idx), opts);
    for (double v : terms.utterance_nll) total += v;
    elements += terms.elements;
  }
  return total / static_cast<double>(elements);
}

PlateauScheduler::PlateauScheduler(double initial_lr, double factor, std::int64_t patience, double floor,
                                   double min_improvement)
    : lr_(initial_lr),
      factor_(factor),
      floor_(floor),
      min_improvement_(min_improvement),
      patience_(patience),
      best_(std::numeric_limits<double>::infinity()) {
  if (patience < 1) throw TrainingError("patience must be >= 1");
  if (!(factor > 0.0 && factor <= 1.0)) throw TrainingError("anneal factor must be in (0, 1]");
}

bool PlateauScheduler::observe(double validation_loss) {
  if (validation_loss < best_ - min_improvement_) {
    best_ = validation_loss;
    waited_ = 0;
    return false;
  }
  best_ = std::min(best_, validation_loss);
  if (++waited_ < patience_) return false;
  waited_ = 0;
  const double next = std::max(floor_, lr_ * factor_);
  if (next == lr_) return false;
  lr_ = next;
  ++anneals_;
  return true;
}

template <typename T>
TrainResult train(const TrainConfig& config, const Corpus& corpus, FlowModel<T>& model, const TrainOutputs& outputs) {
  config.validate();
  if (corpus.train.empty()) throw TrainingError("training corpus is empty");
  if (corpus.validation.empty()) throw TrainingError("validation split is empty");
  const auto& mc = model.config();
  for (const auto* set : {&corpus.train, &corpus.validation}) {
    for (const auto& u : *set) {
      if (u.mel.channels != mc.n_mel) {
        throw TrainingError("utterance " + u.id + " has " + std::to_string(u.mel.channels) + " mel channels, model expects " +
                            std::to_string(mc.n_mel));
      }
      if (mc.use_speaker && (u.tokens.speaker < 0 || u.tokens.speaker >= mc.n_speakers)) {
        throw TrainingError("utterance " + u.id + " has speaker " + std::to_string(u.tokens.speaker) +
                            " outside the speaker table");
      }
    }
  }
  std::ofstream log_csv;
  if (!outputs.directory.empty()) {
    fs::create_directories(outputs.directory);
    std::ofstream(fs::path(outputs.directory) / "train_config.json") << config.to_json() << '\n';
    log_csv.open(fs::path(outputs.directory) / "train_log.csv");
    if (!log_csv) throw TrainingError("cannot write training log in " + outputs.directory);
    log_csv << "epoch,train_nll,val_nll,gate_bce,learning_rate,seconds\n" << std::setprecision(10);
  }
  const auto started = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count(); };
  auto emit = [&](const EpochLog& row) {
    if (log_csv.is_open()) {
      log_csv << row.epoch << ',' << row.train_nll << ',' << row.val_nll << ',' << row.gate_bce << ','
              << row.learning_rate << ',' << row.seconds << '\n';
      log_csv.flush();
    }
    if (outputs.on_epoch) outputs.on_epoch(row);
  };

  TrainResult result;
  Rng rng(config.seed);
  AdamOptions adam_opts;
  adam_opts.learning_rate = config.learning_rate;
  adam_opts.weight_decay = config.weight_decay;
  Adam<T> opt(model.parameters(), adam_opts);
  PlateauScheduler sched(config.learning_rate, config.anneal_factor, config.patience, config.lr_floor,
                         config.min_improvement);
  LossOptions loss_opts;
  loss_opts.sigma2 = config.sigma2;
  loss_opts.gate = config.gate_loss;
  loss_opts.gate_pos_weight = config.gate_pos_weight;
  loss_opts.guided_attention = config.guided_attention;
  loss_opts.guided_width = config.guided_width;

  EpochLog row0;
  row0.train_nll = evaluate_nll(model, corpus.train, config.sigma2, config.batch_size);
  row0.val_nll = evaluate_nll(model, corpus.validation, config.sigma2, config.batch_size);
  row0.learning_rate = config.learning_rate;
  row0.seconds = elapsed();
  result.log.push_back(row0);
  result.initial_val_nll = row0.val_nll;
  result.best_val_nll = row0.val_nll;
  emit(row0);

  std::vector<NamedTensor<T>> best_state;
  for (const auto& nt : model.state()) best_state.push_back({nt.name, nt.tensor.clone()});
  auto save = [&](const std::string& name) {
    if (!outputs.directory.empty()) save_checkpoint((fs::path(outputs.directory) / name).string(), model, outputs.metadata_json);
  };
  if (!outputs.directory.empty()) save("best.ckpt");

  for (std::int64_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const bool with_prior = epoch <= config.attention_prior_epochs;
    double nll_sum = 0.0, gate_sum = 0.0;
    std::int64_t elements = 0, frames = 0;
    for (const auto& idx : make_batches(corpus.train, config.batch_size, rng)) {
      const auto batch = batch_of<T>(corpus.train, idx);
      std::vector<T> prior;
      ForwardOptions<T> fo;
      if (with_prior) {
        std::vector<std::int64_t> text_lengths;
        std::int64_t max_text = 0;
        for (const auto& t : batch.tokens) {
          text_lengths.push_back(static_cast<std::int64_t>(t.size()));
          max_text = std::max(max_text, text_lengths.back());
        }
        prior = diagonal_attention_prior<T>(batch.lengths, text_lengths, batch.max_frames(), max_text,
                                            config.attention_prior_scale);
        fo.attention_log_prior = &prior;
      }
      const auto terms = nll_loss(model, batch, loss_opts, fo);
      opt.zero_grad();
      terms.objective.backward();
      if (config.grad_clip > 0.0) clip_gradients(opt.parameters(), config.grad_clip);
      try {
        opt.step();
      } catch (const NonFiniteGradient& e) {
        throw TrainingError(std::string(e.what()) + " in batch [" + join_ids(batch.ids) + "]");
      }
      ++result.steps;
      nll_sum += terms.nll * static_cast<double>(terms.elements);
      gate_sum += terms.gate_bce * static_cast<double>(batch.valid_frames());
      elements += terms.elements;
      frames += batch.valid_frames();
    }
    EpochLog row;
    row.epoch = epoch;
    row.train_nll = nll_sum / static_cast<double>(elements);
    row.gate_bce = gate_sum / static_cast<double>(frames);
    row.val_nll = evaluate_nll(model, corpus.validation, config.sigma2, config.batch_size);
    row.learning_rate = opt.learning_rate();
    if (row.val_nll < result.best_val_nll) {
      result.best_val_nll = row.val_nll;
      result.best_epoch = epoch;
      const auto current = model.state();
      for (std::size_t i = 0; i < best_state.size(); ++i) {
        const auto src = current[i].tensor.data();
        std::copy(src.begin(), src.end(), best_state[i].tensor.mutable_data().begin());
      }
      save("best.ckpt");
    }
    if (sched.observe(row.val_nll)) opt.set_learning_rate(sched.learning_rate());
    save("latest.ckpt");
    row.seconds = elapsed();
    result.log.push_back(row);
    emit(row);
    if (config.max_seconds > 0.0 && row.seconds >= config.max_seconds) {
      result.budget_exhausted = epoch < config.max_epochs;
      break;
    }
  }
  model.load_state(best_state);
  return result;
}

template <typename T>
void extend_flows(FlowModel<T>& model, std::int64_t new_k, std::uint64_t seed) {
  const auto k = model.n_flows();
  if (new_k <= k) {
    throw ModelError("extend_flows: new step count " + std::to_string(new_k) + " must exceed " + std::to_string(k));
  }
  Rng rng(seed);
  std::vector<CouplingStep<T>> added;
  for (std::int64_t i = 0; i < new_k - k; ++i) added.push_back(model.make_step(ModelConfig::step_reversed(i, new_k), rng.next_u64()));
  model.steps.insert(model.steps.begin(), added.begin(), added.end());
  model.sync_config();
}

template <typename T>
void add_speaker(FlowModel<T>& model, std::int64_t n_new, std::uint64_t seed) {
  if (!model.config().use_speaker) throw ModelError("add_speaker: model is not speaker-conditioned");
  if (n_new < 0) throw ModelError("add_speaker: negative speaker count");
  if (n_new == 0) return;
  const auto n = model.config().n_speakers, s = model.config().speaker_dim;
  const auto old = model.speakers.data();
  std::vector<double> mean(static_cast<std::size_t>(s), 0.0);
  for (std::int64_t r = 0; r < n; ++r)
    for (std::int64_t j = 0; j < s; ++j) mean[static_cast<std::size_t>(j)] += static_cast<double>(old[static_cast<std::size_t>(r * s + j)]);
  for (auto& m : mean) m /= static_cast<double>(n);
  Rng rng(seed);
  std::vector<T> values(old.begin(), old.begin() + n * s);
  for (std::int64_t r = 0; r < n_new; ++r)
    for (std::int64_t j = 0; j < s; ++j) values.push_back(static_cast<T>(mean[static_cast<std::size_t>(j)] + rng.uniform(-1e-3, 1e-3)));
  values.insert(values.end(), old.begin() + n * s, old.end());  // dummy row stays last
  model.speakers = Tensor<T>({n + n_new + 1, s}, std::move(values), model.speakers.requires_grad());
  model.sync_config();
}

template <typename T>
void init_mixture_from_data(FlowModel<T>& model, const std::vector<Utterance>& utterances, std::uint64_t seed) {
  const auto& cfg = model.config();
  if (!cfg.prior.is_mixture() || cfg.prior.mode != MixtureMode::kFixed) {
    throw ModelError("init_mixture_from_data: model has no fixed mixture prior");
  }
  if (utterances.empty()) throw TrainingError("init_mixture_from_data: no utterances");
  NoGradGuard guard;
  const auto k = cfg.prior.components, d = cfg.n_mel;
  std::vector<std::vector<double>> frames_of;  // per utterance, T x D
  std::vector<std::vector<double>> centers_in;  // per utterance mean
  for (const auto& u : utterances) {
    const auto z = model.forward(batch_of<T>(utterances, {static_cast<std::size_t>(&u - utterances.data())})).z;
    std::vector<double> f(z.data().begin(), z.data().begin() + u.mel.frames * d);
    std::vector<double> m(static_cast<std::size_t>(d), 0.0);
    for (std::int64_t t = 0; t < u.mel.frames; ++t)
      for (std::int64_t j = 0; j < d; ++j) m[static_cast<std::size_t>(j)] += f[static_cast<std::size_t>(t * d + j)];
    for (auto& v : m) v /= static_cast<double>(u.mel.frames);
    frames_of.push_back(std::move(f));
    centers_in.push_back(std::move(m));
  }
  auto dist = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::int64_t j = 0; j < d; ++j) s += (a[static_cast<std::size_t>(j)] - b[static_cast<std::size_t>(j)]) * (a[static_cast<std::size_t>(j)] - b[static_cast<std::size_t>(j)]);
    return s;
  };
  // k-means++ seeding, then Lloyd iterations.
  Rng rng(seed);
  const auto n = centers_in.size();
  std::vector<std::vector<double>> centroids{centers_in[rng.below(n)]};
  while (static_cast<std::int64_t>(centroids.size()) < k) {
    std::vector<double> w(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centroids) best = std::min(best, dist(centers_in[i], c));
      total += (w[i] = best);
    }
    std::size_t pick = rng.below(n);
    if (total > 0.0) {
      double r = rng.uniform() * total;
      for (pick = 0; pick + 1 < n && r >= w[pick]; ++pick) r -= w[pick];
    }
    centroids.push_back(centers_in[pick]);
  }
  std::vector<std::int64_t> assign(n, -1);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::int64_t best = 0;
      for (std::int64_t c = 1; c < k; ++c)
        if (dist(centers_in[i], centroids[static_cast<std::size_t>(c)]) < dist(centers_in[i], centroids[static_cast<std::size_t>(best)])) best = c;
      changed = changed || assign[i] != best;
      assign[i] = best;
    }
    if (!changed) break;
    for (std::int64_t c = 0; c < k; ++c) {
      std::vector<double> m(static_cast<std::size_t>(d), 0.0);
      double cnt = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (assign[i] != c) continue;
        for (std::int64_t j = 0; j < d; ++j) m[static_cast<std::size_t>(j)] += centers_in[i][static_cast<std::size_t>(j)];
        cnt += 1.0;
      }
      if (cnt > 0.0) {
        for (auto& v : m) v /= cnt;
        centroids[static_cast<std::size_t>(c)] = m;
      }
    }
  }
  auto means = model.mixture_prior.means.mutable_data();
  auto raw = model.mixture_prior.raw_var.mutable_data();
  auto logits = model.mixture_prior.logits.mutable_data();
  double all_frames = 0.0;
  for (const auto& u : utterances) all_frames += static_cast<double>(u.mel.frames);
  for (std::int64_t c = 0; c < k; ++c) {
    std::vector<double> sum(static_cast<std::size_t>(d), 0.0), sq(static_cast<std::size_t>(d), 0.0);
    double cnt = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (assign[i] != c) continue;
      const auto& f = frames_of[i];
      for (std::size_t e = 0; e < f.size(); ++e) {
        sum[e % static_cast<std::size_t>(d)] += f[e];
        sq[e % static_cast<std::size_t>(d)] += f[e] * f[e];
      }
      cnt += static_cast<double>(f.size() / static_cast<std::size_t>(d));
    }
    for (std::int64_t j = 0; j < d; ++j) {
      double mu = centroids[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)], var = 1.0;
      if (cnt > 1.0) {
        mu = sum[static_cast<std::size_t>(j)] / cnt;
        var = sq[static_cast<std::size_t>(j)] / cnt - mu * mu;
      }
      const double excess = std::max(var - kVarianceFloor, 1e-4);
      means[static_cast<std::size_t>(c * d + j)] = static_cast<T>(mu);
      raw[static_cast<std::size_t>(c * d + j)] = static_cast<T>(excess > 30.0 ? excess : std::log(std::expm1(excess)));
    }
    logits[static_cast<std::size_t>(c)] = static_cast<T>(std::log(std::max(cnt, 1.0) / all_frames));
  }
}

#define ARFLOW_INSTANTIATE_TRAINING(T)                                                                            \
  template LossTerms<T> nll_loss<T>(const FlowModel<T>&, const Batch<T>&, const LossOptions&,                   \
                                    const ForwardOptions<T>&);                                                  \
  template double evaluate_nll<T>(const FlowModel<T>&, const std::vector<Utterance>&, double, std::int64_t);     \
  template TrainResult train<T>(const TrainConfig&, const Corpus&, FlowModel<T>&, const TrainOutputs&);         \
  template void extend_flows<T>(FlowModel<T>&, std::int64_t, std::uint64_t);                                    \
  template void add_speaker<T>(FlowModel<T>&, std::int64_t, std::uint64_t);                                     \
  template void init_mixture_from_data<T>(FlowModel<T>&, const std::vector<Utterance>&, std::uint64_t);

ARFLOW_INSTANTIATE_TRAINING(float)
ARFLOW_INSTANTIATE_TRAINING(double)

}  // namespace arflow
