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

#include "arflow/kernels.hpp"
#include "arflow/model.hpp"
#include "arflow/ops.hpp"

namespace arflow {

namespace {

using Index = std::int64_t;

// Frame-at-a-time evaluation of one coupling network. Uses the same kernels
// in the same accumulation order as the batched forward ops.
template <typename T>
class StepRunner {
 public:
  StepRunner(const CouplingStep<T>& step, const std::vector<T>& enc, Index text_len, const ModelConfig& cfg)
      : s_(step),
        enc_(enc),
        len_(text_len),
        d_(cfg.n_mel),
        p_(cfg.prenet_dim),
        h_(cfg.lstm_dim),
        a_(cfg.attention_dim),
        c_(cfg.context_dim()) {
    keys_.resize(static_cast<std::size_t>(len_ * a_));
    kernels::gemm_nn(enc_.data(), s_.key_w.data().data(), keys_.data(), len_, c_, a_, false);
    h1_.assign(static_cast<std::size_t>(h_), T(0));
    c1_ = h1_;
    h2_ = h1_;
    c2_ = h1_;
    tanh_c_ = h1_;
    zero_.assign(static_cast<std::size_t>(d_), T(0));
    pre_.resize(static_cast<std::size_t>(p_));
    gates_.resize(static_cast<std::size_t>(4 * h_));
    query_.resize(static_cast<std::size_t>(a_));
    feat_.resize(static_cast<std::size_t>(h_ + c_));
    out_.resize(static_cast<std::size_t>(2 * d_));
  }

  // Advances the network by one frame given the previous frame (null for
  // t = 0) and writes attention weights. Afterwards log_scale()/bias() and
  // gate_features() describe the current frame.
  void advance(const T* prev, const T* replay, T* weights) {
    if (!prev) prev = zero_.data();
    kernels::gemm_nn(prev, s_.pre_w.data().data(), pre_.data(), 1, d_, p_, false);
    const T* pb = s_.pre_b.data().data();
    for (Index j = 0; j < p_; ++j) pre_[j] = std::tanh(pre_[j] + pb[j]);

    cell(pre_.data(), p_, s_.lstm1, h1_, c1_);

    if (replay) {
      std::copy_n(replay, len_, weights);
    } else {
      kernels::gemm_nn(h1_.data(), s_.query_w.data().data(), query_.data(), 1, h_, a_, false);
      kernels::additive_attention_row(query_.data(), keys_.data(), s_.attn_v.data().data(), static_cast<const T*>(nullptr),
                                      len_, len_, a_, weights, static_cast<T*>(nullptr));
    }
    std::copy(h1_.begin(), h1_.end(), feat_.begin());
    kernels::gemm_nn(weights, enc_.data(), feat_.data() + h_, 1, len_, c_, false);

    cell(feat_.data(), h_ + c_, s_.lstm2, h2_, c2_);

    kernels::gemm_nn(h2_.data(), s_.out_w.data().data(), out_.data(), 1, h_, 2 * d_, false);
    const T* ob = s_.out_b.data().data();
    for (Index j = 0; j < 2 * d_; ++j) out_[j] = out_[j] + ob[j];
  }

  const T* log_scale() const { return out_.data(); }
  const T* bias() const { return out_.data() + d_; }

  // concat(h2, context) for the gate head.
  std::vector<T> gate_features() const {
    std::vector<T> f(h2_);
    f.insert(f.end(), feat_.begin() + h_, feat_.end());
    return f;
  }

 private:
  void cell(const T* input, Index in_dim, const LstmParams<T>& p, std::vector<T>& h, std::vector<T>& c) {
    kernels::gemm_nn(input, p.w_ih.data().data(), gates_.data(), 1, in_dim, 4 * h_, false);
    const T* b = p.b.data().data();
    for (Index j = 0; j < 4 * h_; ++j) gates_[j] = gates_[j] + b[j];
    kernels::gemm_nn(h.data(), p.w_hh.data().data(), gates_.data(), 1, h_, 4 * h_, true);
    kernels::lstm_pointwise(gates_.data(), c.data(), h.data(), tanh_c_.data(), h_);
  }

  const CouplingStep<T>& s_;
  const std::vector<T>& enc_;
  Index len_, d_, p_, h_, a_, c_;
  std::vector<T> keys_, h1_, c1_, h2_, c2_, tanh_c_, zero_, pre_, gates_, query_, feat_, out_;
};

template <typename T>
void invert_frame(const T* z, const T* log_s, const T* bias, T* x, Index d, Index step, Index t) {
  for (Index j = 0; j < d; ++j) {
    if (!std::isfinite(log_s[j]) || std::abs(log_s[j]) > static_cast<T>(kMaxLogScale)) {
      throw NumericError("inverse: |log s| exceeds " + std::to_string(kMaxLogScale) + " at step " +
                         std::to_string(step) + ", frame " + std::to_string(t));
    }
    x[j] = (z[j] - bias[j]) / std::exp(log_s[j]);
  }
}

template <typename T>
std::vector<T> flip_frames(const std::vector<T>& v, Index frames, Index width) {
  std::vector<T> out(v.size());
  for (Index t = 0; t < frames; ++t) std::copy_n(v.begin() + t * width, width, out.begin() + (frames - 1 - t) * width);
  return out;
}

}  // namespace

template <typename T>
InverseResult<T> FlowModel<T>::inverse(const InverseRequest<T>& req) const {
  const Index d = config_.n_mel, k_steps = n_flows();
  const bool open_ended = req.z.empty();
  if (!open_ended && req.z.size() % static_cast<std::size_t>(d) != 0) {
    throw ShapeError("inverse: latent size " + std::to_string(req.z.size()) + " is not a multiple of D=" +
                     std::to_string(d));
  }
  for (T v : req.z) {
    if (!std::isfinite(v)) throw NumericError("inverse: non-finite latent value");
  }
  if (open_ended && !req.sample) throw ModelError("inverse: open-ended generation needs a latent source");
  if (req.max_frames < 1) throw ModelError("inverse: max_frames must be >= 1");
  const bool gate_on = req.use_gate && config_.use_gate && k_steps > 0 && !req.replay_alignments;
  if (req.use_gate && !config_.use_gate) throw ModelError("inverse: model has no gate");

  NoGradGuard guard;
  InverseResult<T> r;
  const auto enc_t = encode_text(req.tokens);
  const std::vector<T> enc(enc_t.data().begin(), enc_t.data().end());
  const Index len = req.tokens.size();

  Index limit = open_ended ? req.max_frames : static_cast<Index>(req.z.size()) / d;
  if (req.replay_alignments) {
    if (static_cast<Index>(req.replay_alignments->size()) != k_steps) {
      throw ModelError("inverse: replayed alignments cover " + std::to_string(req.replay_alignments->size()) +
                       " steps, model has " + std::to_string(k_steps));
    }
    const Index frames = static_cast<Index>((*req.replay_alignments)[0].size()) / len;
    for (const auto& w : *req.replay_alignments) {
      if (static_cast<Index>(w.size()) != frames * len) throw ModelError("inverse: alignment length mismatch between steps");
    }
    if (!open_ended && frames != limit) {
      throw ModelError("inverse: recorded alignments have " + std::to_string(frames) + " frames, latent has " +
                       std::to_string(limit));
    }
    limit = frames;
  } else if (open_ended && !gate_on) {
    throw ModelError("inverse: open-ended generation requires the gate");
  }
  if (limit < 1) throw ModelError("inverse: no frames to generate");

  r.alignments.resize(static_cast<std::size_t>(k_steps));
  if (k_steps == 0) {
    if (open_ended) throw ModelError("inverse: a model without flow steps needs a finite latent");
    r.z = req.z;
    r.x = req.z;
    r.frames = limit;
    return r;
  }

  // The step next to z runs first and decides the length.
  std::vector<T> y;
  {
    const Index k = k_steps - 1;
    const auto& st = steps[static_cast<std::size_t>(k)];
    StepRunner<T> run(st, enc, len, config_);
    std::vector<T> zt(static_cast<std::size_t>(d));
    std::vector<T> w(static_cast<std::size_t>(len));
    const T* gw = gate.w.data().data();
    const T gb = gate.b.data()[0];
    auto& align = r.alignments[static_cast<std::size_t>(k)];
    const auto* replay = req.replay_alignments ? &(*req.replay_alignments)[static_cast<std::size_t>(k)] : nullptr;
    Index t = 0;
    for (; t < limit; ++t) {
      run.advance(t == 0 ? nullptr : y.data() + (t - 1) * d, replay ? replay->data() + t * len : nullptr, w.data());
      align.insert(align.end(), w.begin(), w.end());
      if (open_ended) {
        req.sample(t, std::span<T>(zt));
        for (T v : zt) {
          if (!std::isfinite(v)) throw NumericError("inverse: latent source produced a non-finite value");
        }
      } else {
        std::copy_n(req.z.begin() + t * d, d, zt.begin());
      }
      r.z.insert(r.z.end(), zt.begin(), zt.end());
      y.resize(static_cast<std::size_t>((t + 1) * d));
      invert_frame(zt.data(), run.log_scale(), run.bias(), y.data() + t * d, d, k, t);
      if (gate_on) {
        const auto f = run.gate_features();
        T logit = T(0);
        kernels::gemm_nn(f.data(), gw, &logit, 1, static_cast<Index>(f.size()), 1, false);
        logit = logit + gb;
        const T p = kernels::sigmoid(logit);
        r.gate_probs.push_back(p);
        if (p > static_cast<T>(req.gate_threshold)) {
          r.gate_fired = true;
          ++t;
          break;
        }
      }
    }
    if (open_ended && !r.gate_fired && !req.replay_alignments) {
      throw GenerationError("inverse: gate did not fire within " + std::to_string(req.max_frames) + " frames");
    }
    r.frames = t;
  }

  const Index frames = r.frames;
  for (Index k = k_steps - 2; k >= 0; --k) {
    const auto& st = steps[static_cast<std::size_t>(k)];
    StepRunner<T> run(st, enc, len, config_);
    const auto in = st.reverse ? flip_frames(y, frames, d) : y;
    std::vector<T> x(in.size());
    std::vector<T> w(static_cast<std::size_t>(len));
    auto& align = r.alignments[static_cast<std::size_t>(k)];
    const auto* replay = req.replay_alignments ? &(*req.replay_alignments)[static_cast<std::size_t>(k)] : nullptr;
    for (Index t = 0; t < frames; ++t) {
      run.advance(t == 0 ? nullptr : x.data() + (t - 1) * d, replay ? replay->data() + t * len : nullptr, w.data());
      align.insert(align.end(), w.begin(), w.end());
      invert_frame(in.data() + t * d, run.log_scale(), run.bias(), x.data() + t * d, d, k, t);
    }
    y = st.reverse ? flip_frames(x, frames, d) : std::move(x);
  }
  r.x = std::move(y);
  return r;
}

template InverseResult<float> FlowModel<float>::inverse(const InverseRequest<float>&) const;
template InverseResult<double> FlowModel<double>::inverse(const InverseRequest<double>&) const;

}  // namespace arflow
