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
#include "arflow/inference.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>

#include "arflow/audio.hpp"
#include "arflow/model.hpp"
#include "arflow/ops.hpp"
#include "arflow/tensor_io.hpp"
#include "json.hpp"

namespace arflow {

namespace fs = std::filesystem;

void SamplingSpec::validate() const {
  if (!(sigma2 >= 0.0) || !std::isfinite(sigma2)) throw InferenceError("sigma2 must be >= 0");
  if (frames < 0) throw InferenceError("frames must be >= 0");
  if (!(gate_threshold > 0.0 && gate_threshold < 1.0)) throw InferenceError("gate threshold must be in (0, 1)");
  if (max_frames < 1) throw InferenceError("max_frames must be >= 1");
}

std::string Provenance::to_json() const {
  nlohmann::ordered_json j;
  j["mode"] = mode;
  j["seed"] = seed;
  j["sigma2"] = sigma2;
  if (lambda) j["lambda"] = *lambda;
  if (strategy) j["strategy"] = *strategy;
  if (component) j["component"] = *component;
  if (offset_dim) j["offset_dim"] = *offset_dim;
  if (offset) j["offset"] = *offset;
  j["speaker"] = speaker;
  j["text"] = text;
  j["frames"] = frames;
  j["gate_fired"] = gate_fired;
  return j.dump(2);
}

GaussianLatent::GaussianLatent(std::int64_t dim, double sigma2, std::uint64_t seed)
    : dim_(dim), scale_(std::sqrt(sigma2)), rng_(seed) {}

void GaussianLatent::fill(std::span<double> frame) {
  for (auto& v : frame) v = scale_ * rng_.normal();
}

std::vector<double> GaussianLatent::draw(std::int64_t frames) {
  std::vector<double> z(static_cast<std::size_t>(frames * dim_));
  for (std::int64_t t = 0; t < frames; ++t) fill(std::span<double>(z).subspan(static_cast<std::size_t>(t * dim_), static_cast<std::size_t>(dim_)));
  return z;
}

namespace {

using FrameSource = std::function<void(std::int64_t, std::span<double>)>;

template <typename T>
Synthesis run_inverse(const FlowModel<T>& model, const TokenSequence& tokens, const SamplingSpec& spec,
                      const FrameSource& source, Provenance provenance) {
  spec.validate();
  const auto d = model.config().n_mel;
  InverseRequest<T> req;
  req.tokens = tokens;
  req.gate_threshold = spec.gate_threshold;
  req.max_frames = spec.max_frames;
  std::vector<double> frame(static_cast<std::size_t>(d));
  if (spec.frames > 0) {
    req.z.reserve(static_cast<std::size_t>(spec.frames * d));
    for (std::int64_t t = 0; t < spec.frames; ++t) {
      source(t, frame);
      for (double v : frame) req.z.push_back(static_cast<T>(v));
    }
  } else {
    if (!model.config().use_gate) throw InferenceError("open-ended sampling needs a model with a gate; pass a frame count");
    req.use_gate = true;
    req.sample = [&](std::int64_t t, std::span<T> out) {
      source(t, frame);
      for (std::size_t j = 0; j < out.size(); ++j) out[j] = static_cast<T>(frame[j]);
    };
  }
  const auto r = model.inverse(req);
  Synthesis s;
  s.mel = r.mel(model.config().features.hop_seconds());
  s.z.assign(r.z.begin(), r.z.end());
  for (const auto& a : r.alignments) s.alignments.emplace_back(a.begin(), a.end());
  s.gate_probs.assign(r.gate_probs.begin(), r.gate_probs.end());
  provenance.seed = spec.seed;
  provenance.speaker = tokens.speaker;
  provenance.text = tokens.text;
  provenance.frames = r.frames;
  provenance.gate_fired = r.gate_fired;
  s.provenance = std::move(provenance);
  return s;
}

template <typename T>
Synthesis from_result(const FlowModel<T>& model, const InverseResult<T>& r, const TokenSequence& tokens, Provenance p) {
  Synthesis s;
  s.mel = r.mel(model.config().features.hop_seconds());
  s.z.assign(r.z.begin(), r.z.end());
  for (const auto& a : r.alignments) s.alignments.emplace_back(a.begin(), a.end());
  s.gate_probs.assign(r.gate_probs.begin(), r.gate_probs.end());
  p.speaker = tokens.speaker;
  p.text = tokens.text;
  p.frames = r.frames;
  p.gate_fired = r.gate_fired;
  s.provenance = std::move(p);
  return s;
}

}  // namespace

template <typename T>
Synthesis sample_prior(const FlowModel<T>& model, const TokenSequence& tokens, const SamplingSpec& spec) {
  spec.validate();
  GaussianLatent latent(model.config().n_mel, spec.sigma2, spec.seed);
  Provenance p;
  p.mode = "prior";
  p.sigma2 = spec.sigma2;
  return run_inverse(model, tokens, spec, [&](std::int64_t, std::span<double> f) { latent.fill(f); }, p);
}

template <typename T>
Synthesis synthesize_latent(const FlowModel<T>& model, const TokenSequence& tokens, const std::vector<double>& z,
                            bool use_gate, double gate_threshold) {
  InverseRequest<T> req;
  req.tokens = tokens;
  req.z.assign(z.begin(), z.end());
  req.use_gate = use_gate && model.config().use_gate;
  req.gate_threshold = gate_threshold;
  Provenance p;
  p.mode = "latent";
  return from_result(model, model.inverse(req), tokens, p);
}

template <typename T>
std::vector<Synthesis> interpolate(const FlowModel<T>& model, const TokenSequence& tokens, std::vector<double> z_a,
                                   std::vector<double> z_b, std::int64_t steps, double pad_sigma2, std::uint64_t seed) {
  if (steps < 2) throw InferenceError("interpolation needs at least 2 steps");
  if (!(pad_sigma2 >= 0.0)) throw InferenceError("pad sigma2 must be >= 0");
  const auto d = model.config().n_mel;
  if (z_a.empty() || z_b.empty() || z_a.size() % static_cast<std::size_t>(d) || z_b.size() % static_cast<std::size_t>(d)) {
    throw InferenceError("interpolation latents must be non-empty multiples of D=" + std::to_string(d));
  }
  GaussianLatent pad(d, pad_sigma2, seed);
  auto& shorter = z_a.size() < z_b.size() ? z_a : z_b;
  const auto target = std::max(z_a.size(), z_b.size());
  const auto extra = pad.draw(static_cast<std::int64_t>((target - shorter.size()) / static_cast<std::size_t>(d)));
  shorter.insert(shorter.end(), extra.begin(), extra.end());
  std::vector<Synthesis> out;
  std::vector<double> z(target);
  for (std::int64_t i = 0; i < steps; ++i) {
    const double lambda = static_cast<double>(i) / static_cast<double>(steps - 1);
    for (std::size_t j = 0; j < target; ++j) z[j] = (1.0 - lambda) * z_a[j] + lambda * z_b[j];
    auto s = synthesize_latent(model, tokens, z, true);
    s.provenance.mode = "interpolation";
    s.provenance.lambda = lambda;
    s.provenance.seed = seed;
    s.provenance.sigma2 = pad_sigma2;
    out.push_back(std::move(s));
  }
  return out;
}

template <typename T>
Evidence harvest_evidence(const FlowModel<T>& model, const std::vector<EvidenceSample>& samples, std::int64_t speaker) {
  if (samples.empty()) throw InferenceError("evidence: no samples");
  const auto d = model.config().n_mel;
  Evidence ev;
  ev.speaker = speaker;
  ev.dim = d;
  ev.mean.assign(static_cast<std::size_t>(d), 0.0);
  ev.variance.assign(static_cast<std::size_t>(d), 0.0);
  NoGradGuard guard;
  for (const auto& s : samples) {
    if (!s.tokens || !s.mel) {
      ev.warnings.push_back("skipped " + s.id + ": no usable tokens");
      continue;
    }
    auto tokens = *s.tokens;
    tokens.speaker = speaker;
    const auto fwd = model.forward(make_batch<T>({s.mel}, {tokens}, {s.id}));
    ev.z.emplace_back(fwd.z.data().begin(), fwd.z.data().end());
    ev.frames.push_back(s.mel->frames);
    ev.ids.push_back(s.id);
  }
  if (ev.z.empty()) throw InferenceError("evidence: every sample was skipped");
  double n = 0.0;
  for (const auto& z : ev.z) {
    for (std::size_t i = 0; i < z.size(); ++i) ev.mean[i % static_cast<std::size_t>(d)] += z[i];
    n += static_cast<double>(z.size() / static_cast<std::size_t>(d));
  }
  for (auto& m : ev.mean) m /= n;
  for (const auto& z : ev.z) {
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double e = z[i] - ev.mean[i % static_cast<std::size_t>(d)];
      ev.variance[i % static_cast<std::size_t>(d)] += e * e;
    }
  }
  for (auto& v : ev.variance) v = std::max(v / n, 1e-12);
  return ev;
}

namespace {
constexpr char kEvidenceMagic[8] = {'A', 'R', 'F', 'L', 'O', 'W', 'E', 'V'};
}

void Evidence::save(const std::string& path) const {
  nlohmann::ordered_json j;
  j["speaker"] = speaker;
  j["dim"] = dim;
  j["ids"] = ids;
  j["frames"] = frames;
  j["warnings"] = warnings;
  const auto header = j.dump();
  std::vector<NamedTensor<double>> tensors;
  tensors.push_back({"mean", Tensor<double>({dim}, mean)});
  tensors.push_back({"variance", Tensor<double>({dim}, variance)});
  for (std::size_t i = 0; i < z.size(); ++i) tensors.push_back({"z." + std::to_string(i), Tensor<double>({frames[i], dim}, z[i])});
  const auto tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw InferenceError("cannot write " + path);
    out.write(kEvidenceMagic, 8);
    const std::uint64_t len = header.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    write_named_tensors(out, tensors);
    if (!out) throw InferenceError("write failed: " + path);
  }
  fs::rename(tmp, path);
}

Evidence Evidence::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InferenceError("cannot open evidence file " + path);
  char magic[8];
  std::uint64_t len = 0;
  if (!in.read(magic, 8) || std::memcmp(magic, kEvidenceMagic, 8) != 0) throw FormatError(path + ": not an evidence file");
  if (!in.read(reinterpret_cast<char*>(&len), sizeof(len)) || len > (1u << 30)) throw FormatError(path + ": bad header");
  std::string header(len, '\0');
  if (!in.read(header.data(), static_cast<std::streamsize>(len))) throw FormatError(path + ": truncated header");
  Evidence ev;
  try {
    const auto j = nlohmann::json::parse(header);
    ev.speaker = j.at("speaker").get<std::int64_t>();
    ev.dim = j.at("dim").get<std::int64_t>();
    ev.ids = j.at("ids").get<std::vector<std::string>>();
    ev.frames = j.at("frames").get<std::vector<std::int64_t>>();
    ev.warnings = j.value("warnings", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  const auto tensors = read_named_tensors<double>(in);
  if (tensors.size() != 2 + ev.ids.size()) throw FormatError(path + ": tensor count does not match the header");
  ev.mean = tensors[0].tensor.values();
  ev.variance = tensors[1].tensor.values();
  for (std::size_t i = 0; i < ev.ids.size(); ++i) ev.z.push_back(tensors[2 + i].tensor.values());
  return ev;
}

std::string to_string(PosteriorStrategy s) { return s == PosteriorStrategy::kGaussian ? "gaussian" : "replay"; }

PosteriorStrategy parse_posterior_strategy(const std::string& s) {
  if (s == "gaussian" || s == "a") return PosteriorStrategy::kGaussian;
  if (s == "replay" || s == "b") return PosteriorStrategy::kReplay;
  throw InferenceError("unknown posterior strategy '" + s + "' (gaussian | replay)");
}

std::vector<double> tile_latent(const std::vector<double>& z_e, std::int64_t dim, std::int64_t frames) {
  if (z_e.empty() || dim < 1 || z_e.size() % static_cast<std::size_t>(dim)) throw InferenceError("tile_latent: bad latent");
  const auto te = static_cast<std::int64_t>(z_e.size()) / dim;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(frames * dim));
  for (std::int64_t t = 0; t < frames; ++t) {
    const auto src = z_e.begin() + (t % te) * dim;
    out.insert(out.end(), src, src + dim);
  }
  return out;
}

template <typename T>
Synthesis sample_posterior(const FlowModel<T>& model, const Evidence& evidence, double lambda,
                           const TokenSequence& tokens, const SamplingSpec& spec, PosteriorStrategy strategy,
                           std::size_t replay_index) {
  spec.validate();
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InferenceError("lambda must be in [0, 1]");
  const auto d = model.config().n_mel;
  if (evidence.dim != d || static_cast<std::int64_t>(evidence.mean.size()) != d) {
    throw InferenceError("evidence dimension " + std::to_string(evidence.dim) + " does not match the model's " + std::to_string(d));
  }
  GaussianLatent latent(d, spec.sigma2, spec.seed);
  Provenance p;
  p.mode = "posterior";
  p.sigma2 = spec.sigma2;
  p.lambda = lambda;
  p.strategy = to_string(strategy);
  if (strategy == PosteriorStrategy::kGaussian) {
    return run_inverse(model, tokens, spec,
                       [&](std::int64_t, std::span<double> f) {
                         latent.fill(f);
                         for (std::size_t j = 0; j < f.size(); ++j) f[j] = lambda * evidence.mean[j] + f[j];
                       },
                       p);
  }
  if (replay_index >= evidence.z.size()) throw InferenceError("replay index out of range");
  const auto& ze = evidence.z[replay_index];
  const auto te = static_cast<std::int64_t>(ze.size()) / d;
  return run_inverse(model, tokens, spec,
                     [&](std::int64_t t, std::span<double> f) {
                       latent.fill(f);
                       const double* src = ze.data() + (t % te) * d;
                       for (std::size_t j = 0; j < f.size(); ++j) f[j] = (1.0 - lambda) * f[j] + lambda * src[j];
                     },
                     p);
}

template <typename T>
Synthesis transfer_with_alignment(const FlowModel<T>& model, const MelSpectrogram& source_mel,
                                  const TokenSequence& source_tokens, std::int64_t target_speaker,
                                  const TransferOptions& options) {
  const auto& cfg = model.config();
  if (!cfg.use_speaker) throw InferenceError("alignment transfer needs a speaker-conditioned model");
  if (target_speaker < 0 || target_speaker >= cfg.n_speakers) {
    throw InferenceError("target speaker " + std::to_string(target_speaker) + " is not in the speaker table");
  }
  auto fwd_tokens = source_tokens;
  if (options.forward_speaker) fwd_tokens.speaker = *options.forward_speaker;
  NoGradGuard guard;
  const auto fwd = model.forward(make_batch<T>({&source_mel}, {fwd_tokens}));
  std::vector<std::vector<T>> recorded;
  for (const auto& a : fwd.alignments) recorded.emplace_back(a.data().begin(), a.data().end());
  InverseRequest<T> req;
  req.tokens = source_tokens;
  req.tokens.speaker = target_speaker;
  req.z.assign(fwd.z.data().begin(), fwd.z.data().end());
  req.replay_alignments = &recorded;
  Provenance p;
  p.mode = "transfer";
  p.strategy = "alignment_replay";
  auto s = from_result(model, model.inverse(req), req.tokens, p);
  if (s.frames() != source_mel.frames) throw InferenceError("transfer produced a different frame count than the source");
  return s;
}

template <typename T>
Synthesis sample_mixture(const FlowModel<T>& model, const TokenSequence& tokens, const MixtureSelection& sel,
                         const SamplingSpec& spec, const MelSpectrogram* reference) {
  spec.validate();
  const auto& cfg = model.config();
  if (!cfg.prior.is_mixture()) throw InferenceError("mixture sampling needs a mixture-prior model");
  MixtureParams mix;
  if (cfg.prior.mode == MixtureMode::kFixed) {
    mix = model.mixture();
  } else {
    if (!reference) throw InferenceError("a predicted mixture needs a reference mel-spectrogram");
    mix = model.predict_mixture(*reference);
  }
  const auto k = mix.components, d = mix.dim;
  if (sel.component && (*sel.component < 0 || *sel.component >= k)) {
    throw InferenceError("component " + std::to_string(*sel.component) + " out of range (K=" + std::to_string(k) + ")");
  }
  if (!sel.component && static_cast<std::int64_t>(sel.weights.size()) != k) {
    throw InferenceError("give a component or " + std::to_string(k) + " weights");
  }
  std::vector<double> cumulative;
  if (!sel.component) {
    double total = 0.0;
    for (double w : sel.weights) {
      if (!(w >= 0.0)) throw InferenceError("mixture weights must be >= 0");
      cumulative.push_back(total += w);
    }
    if (!(total > 0.0)) throw InferenceError("mixture weights sum to zero");
  }
  if (sel.offset_dim && (*sel.offset_dim < 0 || *sel.offset_dim >= d)) {
    throw InferenceError("offset dimension " + std::to_string(*sel.offset_dim) + " out of range (D=" + std::to_string(d) + ")");
  }
  Rng rng(spec.seed);
  Provenance p;
  p.mode = "mixture";
  p.sigma2 = spec.sigma2;
  p.component = sel.component;
  p.offset_dim = sel.offset_dim;
  if (sel.offset_dim) p.offset = sel.offset;
  return run_inverse(model, tokens, spec,
                     [&](std::int64_t, std::span<double> f) {
                       std::int64_t c = 0;
                       if (sel.component) {
                         c = *sel.component;
                       } else {
                         const double u = rng.uniform() * cumulative.back();
                         while (c + 1 < k && u >= cumulative[static_cast<std::size_t>(c)]) ++c;
                       }
                       for (std::int64_t j = 0; j < d; ++j) {
                         double mu = mix.mean(c, j);
                         if (sel.offset_dim && *sel.offset_dim == j) mu += sel.offset;
                         f[static_cast<std::size_t>(j)] = mu + std::sqrt(mix.variance(c, j)) * rng.normal();
                       }
                     },
                     p);
}

void write_synthesis(const Synthesis& s, const std::string& directory, const std::string& stem, int griffin_lim_iters,
                     const MelConfig& features) {
  fs::create_directories(directory);
  const auto base = (fs::path(directory) / stem).string();
  save_tensor_file(base + ".mel", Tensor<double>({s.mel.frames, s.mel.channels}, s.mel.values));
  {
    std::ofstream out(base + ".alignments.csv");
    if (!out) throw InferenceError("cannot write " + base + ".alignments.csv");
    out << "step,frame,token,weight\n" << std::setprecision(8);
    for (std::size_t k = 0; k < s.alignments.size(); ++k) {
      const auto& a = s.alignments[k];
      if (s.mel.frames == 0) continue;
      const auto len = static_cast<std::int64_t>(a.size()) / s.mel.frames;
      for (std::int64_t t = 0; t < s.mel.frames; ++t)
        for (std::int64_t l = 0; l < len; ++l) out << k << ',' << t << ',' << l << ',' << a[static_cast<std::size_t>(t * len + l)] << '\n';
    }
  }
  std::ofstream(base + ".provenance.json") << s.provenance.to_json() << '\n';
  if (griffin_lim_iters > 0) write_wav(griffin_lim(s.mel, griffin_lim_iters, features).audio, base + ".wav");
}

#define ARFLOW_INSTANTIATE_INFERENCE(T)                                                                            \
  template Synthesis sample_prior<T>(const FlowModel<T>&, const TokenSequence&, const SamplingSpec&);             \
  template Synthesis synthesize_latent<T>(const FlowModel<T>&, const TokenSequence&, const std::vector<double>&, \
                                          bool, double);                                                        \
  template std::vector<Synthesis> interpolate<T>(const FlowModel<T>&, const TokenSequence&, std::vector<double>, \
                                                 std::vector<double>, std::int64_t, double, std::uint64_t);     \
  template Evidence harvest_evidence<T>(const FlowModel<T>&, const std::vector<EvidenceSample>&, std::int64_t);  \
  template Synthesis sample_posterior<T>(const FlowModel<T>&, const Evidence&, double, const TokenSequence&,      \
                                         const SamplingSpec&, PosteriorStrategy, std::size_t);                  \
  template Synthesis transfer_with_alignment<T>(const FlowModel<T>&, const MelSpectrogram&, const TokenSequence&, \
                                                std::int64_t, const TransferOptions&);                          \
  template Synthesis sample_mixture<T>(const FlowModel<T>&, const TokenSequence&, const MixtureSelection&,       \
                                       const SamplingSpec&, const MelSpectrogram*);

ARFLOW_INSTANTIATE_INFERENCE(float)
ARFLOW_INSTANTIATE_INFERENCE(double)

}  // namespace arflow
