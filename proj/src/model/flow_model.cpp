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
#include <map>

#include "arflow/model.hpp"
#include "arflow/ops.hpp"
#include "arflow/random.hpp"

namespace arflow {

namespace {

using Index = std::int64_t;

constexpr double kLog2Pi = 1.8378770664093453;

template <typename T>
Tensor<T> uniform_param(Shape shape, double bound, Rng& rng) {
  std::vector<T> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
Tensor<T> constant_param(Shape shape, double value) {
  return Tensor<T>::full(std::move(shape), static_cast<T>(value), true);
}

template <typename T>
LstmParams<T> make_lstm(Index in, Index hidden, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  LstmParams<T> p;
  p.w_ih = uniform_param<T>({in, 4 * hidden}, bound, rng);
  p.w_hh = uniform_param<T>({hidden, 4 * hidden}, bound, rng);
  std::vector<T> b(static_cast<std::size_t>(4 * hidden), T(0));
  for (Index j = hidden; j < 2 * hidden; ++j) b[static_cast<std::size_t>(j)] = T(1);  // forget gate
  p.b = Tensor<T>({4 * hidden}, std::move(b), true);
  return p;
}

template <typename T>
void add_lstm(ParameterList<T>& list, const std::string& prefix, const LstmParams<T>& p) {
  list.push_back({prefix + ".w_ih", p.w_ih});
  list.push_back({prefix + ".b", p.b});
  list.push_back({prefix + ".w_hh", p.w_hh});
}

// [N, in] or [B, T, in] -> LSTM hidden states; input rows are one sequence
// when rank 2.
template <typename T>
Tensor<T> run_lstm(const Tensor<T>& x, const LstmParams<T>& p) {
  auto proj = add(matmul(x, p.w_ih), p.b);
  if (x.rank() == 2) {
    const Index n = x.dim(0);
    auto h = lstm_sequence(reshape(proj, {1, n, proj.dim(1)}), p.w_hh);
    return reshape(h, {n, h.dim(2)});
  }
  return lstm_sequence(proj, p.w_hh);
}

// Reverses the first lengths[b] frames of each row of a [B, T, W] buffer.
template <typename T>
std::vector<T> reverse_rows(const std::vector<T>& v, std::span<const Index> lengths, Index frames, Index width) {
  std::vector<T> out(v);
  for (std::size_t b = 0; b < lengths.size(); ++b) {
    const Index len = lengths[b];
    for (Index t = 0; t < len; ++t) {
      std::copy_n(v.begin() + (static_cast<Index>(b) * frames + t) * width, width,
                  out.begin() + (static_cast<Index>(b) * frames + (len - 1 - t)) * width);
    }
  }
  return out;
}

}  // namespace

template <typename T>
std::int64_t Batch<T>::valid_frames() const {
  Index n = 0;
  for (auto l : lengths) n += l;
  return n;
}

template <typename T>
Batch<T> make_batch(const std::vector<const MelSpectrogram*>& mels, const std::vector<TokenSequence>& tokens,
                    const std::vector<std::string>& ids) {
  if (mels.empty()) throw ModelError("make_batch: empty batch");
  if (mels.size() != tokens.size()) throw ModelError("make_batch: mel and token counts differ");
  const Index d = mels[0]->channels;
  Index frames = 0;
  for (const auto* m : mels) {
    if (m->channels != d) throw ModelError("make_batch: channel counts differ");
    if (m->frames < 1) throw ModelError("make_batch: empty mel-spectrogram");
    frames = std::max(frames, m->frames);
  }
  Batch<T> batch;
  std::vector<T> values(static_cast<std::size_t>(static_cast<Index>(mels.size()) * frames * d), T(0));
  for (std::size_t b = 0; b < mels.size(); ++b) {
    const auto* m = mels[b];
    for (std::size_t i = 0; i < m->values.size(); ++i) {
      values[static_cast<std::size_t>(static_cast<Index>(b) * frames * d) + i] = static_cast<T>(m->values[i]);
    }
    batch.lengths.push_back(m->frames);
  }
  batch.mels = Tensor<T>({static_cast<Index>(mels.size()), frames, d}, std::move(values));
  batch.tokens = tokens;
  batch.ids = ids;
  if (batch.ids.empty()) {
    for (std::size_t b = 0; b < mels.size(); ++b) batch.ids.push_back("item" + std::to_string(b));
  }
  return batch;
}

template <typename T>
Tensor<T> frame_mask(std::span<const std::int64_t> lengths, std::int64_t frames, std::int64_t width) {
  const auto batch = static_cast<Index>(lengths.size());
  std::vector<T> m(static_cast<std::size_t>(batch * frames * width), T(0));
  for (Index b = 0; b < batch; ++b) {
    if (lengths[b] < 0 || lengths[b] > frames) throw ModelError("frame_mask: length out of range");
    std::fill_n(m.begin() + b * frames * width, lengths[b] * width, T(1));
  }
  return Tensor<T>({batch, frames, width}, std::move(m));
}

template <typename T>
Tensor<T> spherical_logp(const Tensor<T>& z, std::span<const std::int64_t> lengths, double sigma2) {
  if (!(sigma2 > 0.0)) throw ModelError("spherical_logp: sigma2 must be > 0");
  const Index batch = z.dim(0), frames = z.dim(1), dim = z.dim(2);
  auto mask = frame_mask<T>(lengths, frames, dim);
  auto quad = sum_axis(sum_axis(mul(square(z), mask), 2), 1);
  std::vector<T> c(static_cast<std::size_t>(batch));
  for (Index b = 0; b < batch; ++b) {
    c[b] = static_cast<T>(-0.5 * static_cast<double>(lengths[b] * dim) * (kLog2Pi + std::log(sigma2)));
  }
  return add(scale(quad, static_cast<T>(-0.5 / sigma2)), Tensor<T>({batch}, std::move(c)));
}

template <typename T>
Tensor<T> mixture_frame_logp(const Tensor<T>& z, const Tensor<T>& logits, const Tensor<T>& means,
                             const Tensor<T>& variances) {
  const Index batch = z.dim(0), frames = z.dim(1), dim = z.dim(2), k = logits.dim(1);
  if (logits.shape() != Shape{batch, k} || means.shape() != Shape{batch, k, dim} || variances.shape() != means.shape()) {
    throw ShapeError("mixture_frame_logp: parameters " + shape_str(logits.shape()) + ", " + shape_str(means.shape()) +
                     ", " + shape_str(variances.shape()) + " do not match z " + shape_str(z.shape()));
  }
  auto inv = div(Tensor<T>::full({batch, k, dim}, T(1)), variances);
  auto quad_const = add(sum_axis(mul(square(means), inv), 2), sum_axis(log(variances), 2));
  auto c = add_scalar(sub(log_softmax(logits), scale(quad_const, T(0.5))), static_cast<T>(-0.5 * dim * kLog2Pi));
  auto coef = concat<T>({scale(inv, T(-0.5)), mul(means, inv), reshape(c, {batch, k, 1})}, 2);
  auto zaug = concat<T>({square(z), z, Tensor<T>::full({batch, frames, 1}, T(1))}, 2);
  return logsumexp(bmm(zaug, transpose(coef)));
}

template <typename T>
FlowModel<T>::FlowModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const Index e = config_.text_dim, half = e / 2, s = config_.speaker_dim, d = config_.n_mel;
  encoder.embedding = uniform_param<T>({config_.n_symbols, e}, std::sqrt(3.0), rng);
  for (int i = 0; i < 3; ++i) {
    const double bound = 1.0 / std::sqrt(5.0 * static_cast<double>(e));
    encoder.conv_w.push_back(uniform_param<T>({5 * e, e}, bound, rng));
    encoder.conv_b.push_back(constant_param<T>({e}, 0.0));
  }
  encoder.forward = make_lstm<T>(e, half, rng);
  encoder.backward = make_lstm<T>(e, half, rng);
  speakers = uniform_param<T>({config_.n_speakers + 1, s}, 0.5, rng);
  for (Index k = 0; k < config_.n_flows; ++k) {
    steps.push_back(make_step(ModelConfig::step_reversed(k, config_.n_flows), rng.next_u64()));
  }
  const Index h = config_.lstm_dim, c = config_.context_dim();
  gate.w = uniform_param<T>({h + c, 1}, 1.0 / std::sqrt(static_cast<double>(h + c)), rng);
  gate.b = constant_param<T>({1}, -3.0);
  const Index k = config_.prior.components;
  mixture_prior.logits = constant_param<T>({k}, 0.0);
  {
    std::vector<T> mu(static_cast<std::size_t>(k * d));
    for (auto& x : mu) x = static_cast<T>(rng.normal());
    mixture_prior.means = Tensor<T>({k, d}, std::move(mu), true);
  }
  // softplus(raw) + floor == 1
  mixture_prior.raw_var = constant_param<T>({k, d}, std::log(std::expm1(1.0 - kVarianceFloor)));
  const Index m = config_.mel_encoder_dim;
  mel_encoder.lstm = make_lstm<T>(d, m, rng);
  const double mb = 1.0 / std::sqrt(static_cast<double>(m));
  mel_encoder.weight_w = uniform_param<T>({m, k}, mb, rng);
  mel_encoder.weight_b = constant_param<T>({k}, 0.0);
  mel_encoder.mean_w = uniform_param<T>({m, k * d}, mb, rng);
  mel_encoder.mean_b = constant_param<T>({k * d}, 0.0);
  mel_encoder.var_w = uniform_param<T>({m, k * d}, mb, rng);
  mel_encoder.var_b = constant_param<T>({k * d}, std::log(std::expm1(1.0 - kVarianceFloor)));
}

template <typename T>
CouplingStep<T> FlowModel<T>::make_step(bool reverse, std::uint64_t seed) const {
  Rng rng(seed);
  const Index d = config_.n_mel, p = config_.prenet_dim, h = config_.lstm_dim, a = config_.attention_dim,
              c = config_.context_dim();
  CouplingStep<T> st;
  st.reverse = reverse;
  st.pre_w = uniform_param<T>({d, p}, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  st.pre_b = constant_param<T>({p}, 0.0);
  st.lstm1 = make_lstm<T>(p, h, rng);
  st.query_w = uniform_param<T>({h, a}, 1.0 / std::sqrt(static_cast<double>(h)), rng);
  st.key_w = uniform_param<T>({c, a}, 1.0 / std::sqrt(static_cast<double>(c)), rng);
  st.attn_v = uniform_param<T>({a}, 1.0 / std::sqrt(static_cast<double>(a)), rng);
  st.lstm2 = make_lstm<T>(h + c, h, rng);
  st.out_w = constant_param<T>({h, 2 * d}, 0.0);
  st.out_b = constant_param<T>({2 * d}, 0.0);
  return st;
}

template <typename T>
void FlowModel<T>::sync_config() {
  config_.n_flows = static_cast<Index>(steps.size());
  config_.n_speakers = speakers.dim(0) - 1;
  for (Index k = 0; k < config_.n_flows; ++k) {
    if (steps[static_cast<std::size_t>(k)].reverse != ModelConfig::step_reversed(k, config_.n_flows)) {
      throw ModelError("step " + std::to_string(k) + " has an inconsistent reversal flag");
    }
  }
}

template <typename T>
ParameterList<T> FlowModel<T>::parameters() const {
  ParameterList<T> list;
  list.push_back({"encoder.embedding", encoder.embedding});
  for (std::size_t i = 0; i < encoder.conv_w.size(); ++i) {
    list.push_back({"encoder.conv" + std::to_string(i) + ".w", encoder.conv_w[i]});
    list.push_back({"encoder.conv" + std::to_string(i) + ".b", encoder.conv_b[i]});
  }
  add_lstm(list, "encoder.lstm_fwd", encoder.forward);
  add_lstm(list, "encoder.lstm_bwd", encoder.backward);
  list.push_back({"speakers", speakers});
  for (std::size_t k = 0; k < steps.size(); ++k) {
    const auto& st = steps[k];
    const std::string p = "steps." + std::to_string(k);
    list.push_back({p + ".pre_w", st.pre_w});
    list.push_back({p + ".pre_b", st.pre_b});
    add_lstm(list, p + ".lstm1", st.lstm1);
    list.push_back({p + ".query_w", st.query_w});
    list.push_back({p + ".key_w", st.key_w});
    list.push_back({p + ".attn_v", st.attn_v});
    add_lstm(list, p + ".lstm2", st.lstm2);
    list.push_back({p + ".out_w", st.out_w});
    list.push_back({p + ".out_b", st.out_b});
  }
  if (config_.use_gate) {
    list.push_back({"gate.w", gate.w});
    list.push_back({"gate.b", gate.b});
  }
  if (config_.prior.is_mixture() && config_.prior.mode == MixtureMode::kFixed) {
    list.push_back({"mixture.logits", mixture_prior.logits});
    list.push_back({"mixture.means", mixture_prior.means});
    list.push_back({"mixture.raw_var", mixture_prior.raw_var});
  }
  if (config_.prior.is_mixture() && config_.prior.mode == MixtureMode::kPredicted) {
    add_lstm(list, "mel_encoder.lstm", mel_encoder.lstm);
    list.push_back({"mel_encoder.weight_w", mel_encoder.weight_w});
    list.push_back({"mel_encoder.weight_b", mel_encoder.weight_b});
    list.push_back({"mel_encoder.mean_w", mel_encoder.mean_w});
    list.push_back({"mel_encoder.mean_b", mel_encoder.mean_b});
    list.push_back({"mel_encoder.var_w", mel_encoder.var_w});
    list.push_back({"mel_encoder.var_b", mel_encoder.var_b});
  }
  return list;
}

template <typename T>
std::vector<NamedTensor<T>> FlowModel<T>::state() const {
  std::vector<NamedTensor<T>> out;
  for (const auto& p : parameters()) out.push_back({p.name, p.tensor});
  return out;
}

template <typename T>
void FlowModel<T>::load_state(const std::vector<NamedTensor<T>>& tensors) {
  std::map<std::string, const Tensor<T>*> by_name;
  for (const auto& nt : tensors) by_name[nt.name] = &nt.tensor;
  for (auto& p : parameters()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw ModelError("state is missing parameter '" + p.name + "'");
    if (it->second->shape() != p.tensor.shape()) {
      throw ModelError("parameter '" + p.name + "' has shape " + shape_str(it->second->shape()) + ", expected " +
                       shape_str(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_data();
    const auto src = it->second->data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

template <typename T>
Tensor<T> FlowModel<T>::encode_text(const TokenSequence& tokens) const {
  if (tokens.ids.empty()) throw ModelError("encode_text: empty token sequence");
  for (auto id : tokens.ids) {
    if (id < 0 || id >= config_.n_symbols) throw ModelError("encode_text: token id " + std::to_string(id) + " out of range");
  }
  Index row = config_.dummy_speaker();
  if (config_.use_speaker) {
    if (tokens.speaker < 0 || tokens.speaker >= config_.n_speakers) {
      throw ModelError("unknown speaker id " + std::to_string(tokens.speaker) + " (model has " +
                       std::to_string(config_.n_speakers) + ")");
    }
    row = tokens.speaker;
  }
  const Index len = tokens.size();
  auto h = gather_rows(encoder.embedding, std::span<const Index>(tokens.ids));
  for (std::size_t i = 0; i < encoder.conv_w.size(); ++i) {
    h = relu(instance_norm(add(matmul(unfold_time(h, 5), encoder.conv_w[i]), encoder.conv_b[i]), static_cast<T>(kInstanceNormEps)));
  }
  auto fwd = run_lstm(h, encoder.forward);
  auto bwd = reverse(run_lstm(reverse(h, 0), encoder.backward), 0);
  const std::vector<Index> ids{row};
  auto spk = repeat_rows(gather_rows(speakers, std::span<const Index>(ids)), len);
  return concat<T>({fwd, bwd, spk}, 1);
}

template <typename T>
ForwardResult<T> FlowModel<T>::forward(const Batch<T>& batch, const ForwardOptions<T>& options) const {
  const Index nb = batch.size(), frames = batch.max_frames(), d = config_.n_mel;
  if (batch.mels.shape() != Shape{nb, frames, d}) {
    throw ShapeError("forward: batch mels " + shape_str(batch.mels.shape()) + " do not match D=" + std::to_string(d));
  }
  if (static_cast<Index>(batch.tokens.size()) != nb) throw ModelError("forward: token count differs from batch size");
  for (double v : batch.mels.values()) {
    if (!std::isfinite(v)) throw NumericError("forward: non-finite input frame");
  }
  ForwardResult<T> r;
  std::vector<Tensor<T>> encoded;
  Index max_text = 0;
  for (const auto& tok : batch.tokens) {
    encoded.push_back(encode_text(tok));
    r.text_lengths.push_back(tok.size());
    max_text = std::max(max_text, tok.size());
  }
  if (options.attention_log_prior &&
      static_cast<Index>(options.attention_log_prior->size()) != nb * frames * max_text) {
    throw ShapeError("forward: attention prior must be [B, T, L]");
  }
  auto enc = pad_stack(encoded, max_text);
  const auto lengths = std::span<const Index>(batch.lengths);
  auto mask = frame_mask<T>(lengths, frames, d);

  std::vector<T> reversed_prior;
  if (options.attention_log_prior) {
    reversed_prior = reverse_rows(*options.attention_log_prior, lengths, frames, max_text);
  }

  Tensor<T> y = batch.mels;
  Tensor<T> total = Tensor<T>::zeros({nb});
  for (std::size_t k = 0; k < steps.size(); ++k) {
    const auto& st = steps[k];
    auto in = st.reverse ? reverse_time(y, lengths) : y;
    const std::vector<T>* prior = nullptr;
    if (options.attention_log_prior) prior = st.reverse ? &reversed_prior : options.attention_log_prior;

    auto pre = tanh(add(matmul(shift_time(in), st.pre_w), st.pre_b));
    auto h1 = run_lstm(pre, st.lstm1);
    auto keys = matmul(enc, st.key_w);
    auto weights = additive_attention(matmul(h1, st.query_w), keys, st.attn_v,
                                      std::span<const Index>(r.text_lengths), prior);
    auto ctx = bmm(weights, enc);
    auto h2 = run_lstm(concat<T>({h1, ctx}, 2), st.lstm2);
    auto out = add(matmul(h2, st.out_w), st.out_b);
    auto log_s = slice(out, 2, 0, d);
    auto bias = slice(out, 2, d, 2 * d);
    const auto& ls = log_s.values();
    for (Index b = 0; b < nb; ++b)
      for (Index t = 0; t < batch.lengths[b]; ++t)
        for (Index j = 0; j < d; ++j) {
          const T v = ls[static_cast<std::size_t>((b * frames + t) * d + j)];
          if (!std::isfinite(v)) {
            throw NumericError("step " + std::to_string(k) + ": non-finite log scale for " + batch.ids[b]);
          }
        }
    auto coupled = add(mul(exp(log_s), in), bias);
    auto step_logdet = sum_axis(sum_axis(mul(log_s, mask), 2), 1);
    r.step_logdets.push_back(step_logdet);
    total = add(total, step_logdet);
    r.alignments.push_back(weights);
    y = st.reverse ? reverse_time(coupled, lengths) : coupled;
    if (k + 1 == steps.size() && config_.use_gate) {
      auto features = stop_gradient(concat<T>({h2, ctx}, 2));
      r.gate_logits = reshape(add(matmul(features, gate.w), gate.b), {nb, frames});
    }
  }
  r.z = y;
  r.logdet = total;
  return r;
}

template <typename T>
typename FlowModel<T>::MixtureTensors FlowModel<T>::mixture_tensors(const Tensor<T>& mels,
                                                                     std::span<const std::int64_t> lengths) const {
  if (!config_.prior.is_mixture()) throw ModelError("model prior is spherical, not a mixture");
  const Index k = config_.prior.components, d = config_.n_mel;
  const Index nb = static_cast<Index>(lengths.size());
  MixtureTensors m;
  if (config_.prior.mode == MixtureMode::kFixed) {
    m.logits = repeat_rows(reshape(mixture_prior.logits, {1, k}), nb);
    m.means = reshape(repeat_rows(reshape(mixture_prior.means, {1, k * d}), nb), {nb, k, d});
    auto var = add_scalar(softplus(mixture_prior.raw_var), static_cast<T>(kVarianceFloor));
    m.variances = reshape(repeat_rows(reshape(var, {1, k * d}), nb), {nb, k, d});
    return m;
  }
  if (mels.rank() != 3 || mels.dim(0) != nb || mels.dim(2) != d) {
    throw ShapeError("predict_mixture: mels " + shape_str(mels.shape()) + " do not match the batch");
  }
  const Index frames = mels.dim(1);
  auto h = run_lstm(mels, mel_encoder.lstm);
  std::vector<T> pool(static_cast<std::size_t>(nb * frames), T(0));
  for (Index b = 0; b < nb; ++b) {
    for (Index t = 0; t < lengths[b]; ++t) pool[static_cast<std::size_t>(b * frames + t)] = T(1) / static_cast<T>(lengths[b]);
  }
  auto pooled = reshape(bmm(Tensor<T>({nb, 1, frames}, std::move(pool)), h), {nb, h.dim(2)});
  m.logits = add(matmul(pooled, mel_encoder.weight_w), mel_encoder.weight_b);
  m.means = reshape(add(matmul(pooled, mel_encoder.mean_w), mel_encoder.mean_b), {nb, k, d});
  m.variances = reshape(add_scalar(softplus(add(matmul(pooled, mel_encoder.var_w), mel_encoder.var_b)),
                                   static_cast<T>(kVarianceFloor)),
                        {nb, k, d});
  return m;
}

template <typename T>
Tensor<T> FlowModel<T>::prior_logp(const Tensor<T>& z, std::span<const std::int64_t> lengths,
                                   const Tensor<T>& mels) const {
  if (!config_.prior.is_mixture()) return spherical_logp(z, lengths, config_.prior.sigma2);
  const Index nb = z.dim(0), frames = z.dim(1);
  auto m = mixture_tensors(mels, lengths);
  auto per_frame = mixture_frame_logp(z, m.logits, m.means, m.variances);
  auto mask = reshape(frame_mask<T>(lengths, frames, 1), {nb, frames});
  return sum_axis(mul(per_frame, mask), 1);
}

namespace {
MixtureParams to_params(const std::vector<double>& logits, std::vector<double> means, std::vector<double> var,
                        std::int64_t k, std::int64_t d) {
  MixtureParams p;
  p.components = k;
  p.dim = d;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0;
  for (double l : logits) total += std::exp(l - mx);
  for (double l : logits) p.weights.push_back(std::exp(l - mx) / total);
  p.means = std::move(means);
  p.variances = std::move(var);
  return p;
}
}  // namespace

template <typename T>
MixtureParams FlowModel<T>::mixture() const {
  if (!config_.prior.is_mixture() || config_.prior.mode != MixtureMode::kFixed) {
    throw ModelError("mixture(): model does not have a fixed mixture prior");
  }
  NoGradGuard guard;
  const auto k = config_.prior.components, d = config_.n_mel;
  auto var = add_scalar(softplus(mixture_prior.raw_var), static_cast<T>(kVarianceFloor));
  return to_params(std::vector<double>(mixture_prior.logits.data().begin(), mixture_prior.logits.data().end()),
                   std::vector<double>(mixture_prior.means.data().begin(), mixture_prior.means.data().end()),
                   std::vector<double>(var.data().begin(), var.data().end()), k, d);
}

template <typename T>
MixtureParams FlowModel<T>::predict_mixture(const MelSpectrogram& mel) const {
  if (!config_.prior.is_mixture() || config_.prior.mode != MixtureMode::kPredicted) {
    throw ModelError("predict_mixture: model is not in predicted-mixture mode");
  }
  if (mel.channels != config_.n_mel) throw ShapeError("predict_mixture: mel channel count differs from model");
  NoGradGuard guard;
  std::vector<T> v(mel.values.begin(), mel.values.end());
  Tensor<T> x({1, mel.frames, mel.channels}, std::move(v));
  const std::vector<Index> lengths{mel.frames};
  auto m = mixture_tensors(x, lengths);
  const auto k = config_.prior.components, d = config_.n_mel;
  return to_params(std::vector<double>(m.logits.data().begin(), m.logits.data().end()),
                   std::vector<double>(m.means.data().begin(), m.means.data().end()),
                   std::vector<double>(m.variances.data().begin(), m.variances.data().end()), k, d);
}

template <typename T>
MelSpectrogram InverseResult<T>::mel(double hop_seconds) const {
  MelSpectrogram m;
  m.frames = frames;
  m.channels = frames > 0 ? static_cast<Index>(x.size()) / frames : 0;
  m.hop_seconds = hop_seconds;
  m.values.assign(x.begin(), x.end());
  return m;
}

template <typename T>
std::vector<T> diagonal_attention_prior(std::span<const std::int64_t> frame_lengths,
                                        std::span<const std::int64_t> text_lengths, std::int64_t max_frames,
                                        std::int64_t max_text, double scale) {
  if (frame_lengths.size() != text_lengths.size()) throw ModelError("attention prior: length lists differ");
  const auto nb = static_cast<Index>(frame_lengths.size());
  std::vector<T> out(static_cast<std::size_t>(nb * max_frames * max_text), T(0));
  auto lbeta = [](double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); };
  for (Index b = 0; b < nb; ++b) {
    const Index tl = frame_lengths[b], n = text_lengths[b] - 1;
    for (Index t = 0; t < tl; ++t) {
      const double alpha = scale * static_cast<double>(t + 1), beta = scale * static_cast<double>(tl - t);
      for (Index i = 0; i <= n; ++i) {
        const double lchoose = std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0);
        out[static_cast<std::size_t>((b * max_frames + t) * max_text + i)] =
            static_cast<T>(lchoose + lbeta(i + alpha, n - i + beta) - lbeta(alpha, beta));
      }
    }
  }
  return out;
}

#define ARFLOW_INSTANTIATE_MODEL(T)                                                                               \
  template struct Batch<T>;                                                                                     \
  template struct InverseResult<T>;                                                                             \
  template class FlowModel<T>;                                                                                  \
  template Batch<T> make_batch<T>(const std::vector<const MelSpectrogram*>&, const std::vector<TokenSequence>&, \
                                  const std::vector<std::string>&);                                             \
  template Tensor<T> frame_mask<T>(std::span<const std::int64_t>, std::int64_t, std::int64_t);                   \
  template Tensor<T> spherical_logp<T>(const Tensor<T>&, std::span<const std::int64_t>, double);                \
  template Tensor<T> mixture_frame_logp<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                \
                                           const Tensor<T>&);                                                   \
  template std::vector<T> diagonal_attention_prior<T>(std::span<const std::int64_t>,                            \
                                                      std::span<const std::int64_t>, std::int64_t, std::int64_t, \
                                                      double);

ARFLOW_INSTANTIATE_MODEL(float)
ARFLOW_INSTANTIATE_MODEL(double)

}  // namespace arflow
