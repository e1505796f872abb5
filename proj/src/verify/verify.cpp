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

#include "arflow/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include "arflow/analysis.hpp"
#include "arflow/corpus.hpp"
#include "arflow/inference.hpp"
#include "arflow/random.hpp"

namespace arflow {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

CheckResult make_result(int id, bool passed, std::string detail, Clock::time_point t0) {
  return {id, acceptance_names()[static_cast<std::size_t>(id - 1)], passed, std::move(detail), since(t0)};
}

ModelConfig small_config(std::int64_t n_mel, std::int64_t n_flows) {
  ModelConfig c;
  c.n_mel = n_mel;
  c.features.n_mels = n_mel;
  c.n_symbols = Vocabulary().size();
  c.n_speakers = 2;
  c.speaker_dim = 4;
  c.text_dim = 8;
  c.n_flows = n_flows;
  c.prenet_dim = 8;
  c.attention_dim = 8;
  c.lstm_dim = 12;
  c.mel_encoder_dim = 6;
  return c;
}

// Coupling projections get a smaller scale so log s stays moderate.
template <typename T>
void randomize(FlowModel<T>& model, std::uint64_t seed, double scale, double out_scale) {
  Rng rng(seed);
  for (auto& p : model.parameters()) {
    const bool out = p.name.find(".out_") != std::string::npos;
    for (auto& v : p.tensor.mutable_data()) v = static_cast<T>(rng.normal() * (out ? out_scale : scale));
  }
}

TokenSequence random_tokens(Rng& rng, std::int64_t len, std::int64_t speaker) {
  TokenSequence t;
  const auto v = static_cast<std::uint64_t>(Vocabulary().size());
  for (std::int64_t i = 0; i < len; ++i) t.ids.push_back(static_cast<std::int64_t>(rng.below(v)));
  t.speaker = speaker;
  t.text = "random";
  return t;
}

MelSpectrogram random_mel(Rng& rng, std::int64_t frames, std::int64_t channels) {
  MelSpectrogram m;
  m.frames = frames;
  m.channels = channels;
  m.values.resize(static_cast<std::size_t>(frames * channels));
  for (auto& v : m.values) v = rng.normal();
  return m;
}

template <typename T>
std::vector<T> latent(const FlowModel<T>& model, const MelSpectrogram& mel, const TokenSequence& tokens) {
  NoGradGuard g;
  const auto r = model.forward(make_batch<T>({&mel}, {tokens}));
  return {r.z.data().begin(), r.z.data().end()};
}

template <typename T>
double roundtrip_error(const FlowModel<T>& model, const MelSpectrogram& mel, const TokenSequence& tokens) {
  InverseRequest<T> req;
  req.tokens = tokens;
  req.z = latent(model, mel, tokens);
  const auto x = model.inverse(req).x;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(x[i]) - mel.values[i]));
  }
  return worst;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

double log_abs_det(std::vector<double> a, int n) {
  double result = 0.0;
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int r = col + 1; r < n; ++r) {
      if (std::abs(a[r * n + col]) > std::abs(a[pivot * n + col])) pivot = r;
    }
    if (a[pivot * n + col] == 0.0) return -INFINITY;
    if (pivot != col) {
      for (int c = 0; c < n; ++c) std::swap(a[col * n + c], a[pivot * n + c]);
    }
    const double d = a[col * n + col];
    result += std::log(std::abs(d));
    for (int r = col + 1; r < n; ++r) {
      const double f = a[r * n + col] / d;
      for (int c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
    }
  }
  return result;
}

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

const std::vector<std::string>& acceptance_names() {
  static const std::vector<std::string> names = {
      "invertibility",     "logdet exactness", "gradient correctness", "likelihood identity",
      "toy training",      "variation trend",  "interpolation",        "evidence/posterior",
      "mixture machinery", "extend_flows",     "yin",
  };
  return names;
}

std::string format_result(const CheckResult& r) {
  std::ostringstream os;
  os << (r.passed ? "PASS" : "FAIL") << " [" << r.id << "] " << r.name << ": " << r.detail << " ("
     << std::fixed << std::setprecision(1) << r.seconds << " s)";
  return os.str();
}

CheckResult check_invertibility(std::uint64_t seed) {
  const auto t0 = Clock::now();
  Rng rng(seed ^ 0x1u);
  double worst32 = 0.0, worst64 = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::int64_t k = 1 + i % 3;
    const std::int64_t d = (i / 3) % 2 ? 80 : 8;
    const auto frames = static_cast<std::int64_t>(1 + rng.below(64));
    FlowModel<double> model(small_config(d, k), rng.next_u64());
    randomize(model, rng.next_u64(), 0.3, 0.05);
    const auto mel = random_mel(rng, frames, d);
    const auto tokens = random_tokens(rng, static_cast<std::int64_t>(1 + rng.below(12)),
                                      static_cast<std::int64_t>(rng.below(2)));
    worst64 = std::max(worst64, roundtrip_error(model, mel, tokens));
    worst32 = std::max(worst32, roundtrip_error(model.cast<float>(), mel, tokens));
  }
  const double elapsed = since(t0);
  const bool ok = worst32 < 1e-5 && worst64 < 1e-9 && elapsed < 120.0;
  return make_result(1, ok,
                     "100 pairs, max err fp32 " + fmt(worst32) + " (< 1e-5), fp64 " + fmt(worst64) + " (< 1e-9)", t0);
}

CheckResult check_logdet(std::uint64_t seed) {
  const auto t0 = Clock::now();
  const std::int64_t shapes[][2] = {{4, 4}, {2, 8}, {8, 2}, {3, 5}, {5, 3}};
  Rng rng(seed ^ 0x2u);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const auto [frames, d] = std::pair(shapes[i % 5][0], shapes[i % 5][1]);
    FlowModel<double> model(small_config(d, 1 + i % 3), rng.next_u64());
    randomize(model, rng.next_u64(), 0.5, 0.2);
    const auto mel = random_mel(rng, frames, d);
    const auto tokens = random_tokens(rng, 5, i % 2);
    double analytic;
    {
      NoGradGuard g;
      analytic = model.forward(make_batch<double>({&mel}, {tokens})).logdet.item();
    }
    const int n = static_cast<int>(frames * d);
    std::vector<double> jac(static_cast<std::size_t>(n * n));
    for (int j = 0; j < n; ++j) {
      auto up = mel, down = mel;
      up.values[static_cast<std::size_t>(j)] += 1e-5;
      down.values[static_cast<std::size_t>(j)] -= 1e-5;
      const auto zu = latent(model, up, tokens), zd = latent(model, down, tokens);
      for (int r = 0; r < n; ++r) {
        jac[static_cast<std::size_t>(r * n + j)] = (zu[static_cast<std::size_t>(r)] - zd[static_cast<std::size_t>(r)]) / 2e-5;
      }
    }
    worst = std::max(worst, std::abs(analytic - log_abs_det(jac, n)));
  }
  return make_result(2, worst < 1e-4, "20 instances, max |delta| " + fmt(worst) + " (< 1e-4)", t0);
}

CheckResult check_gradients(std::uint64_t seed) {
  const auto t0 = Clock::now();
  std::vector<std::pair<std::string, ModelConfig>> variants;
  auto base = small_config(3, 1);
  base.lstm_dim = 6;
  base.prenet_dim = 5;
  base.attention_dim = 4;
  base.text_dim = 4;
  base.speaker_dim = 3;
  base.mel_encoder_dim = 4;
  variants.emplace_back("spherical", base);
  auto fixed = base;
  fixed.prior = PriorSpec{PriorKind::kMixture, 1.0, 2, MixtureMode::kFixed};
  variants.emplace_back("fixed mixture", fixed);
  auto predicted = base;
  predicted.prior = PriorSpec{PriorKind::kMixture, 1.0, 2, MixtureMode::kPredicted};
  variants.emplace_back("predicted mixture", predicted);

  Rng rng(seed ^ 0x3u);
  double worst = 0.0;
  std::string worst_name;
  std::size_t groups = 0;
  std::vector<std::string> leaks;
  for (const auto& [label, cfg] : variants) {
    FlowModel<double> model(cfg, rng.next_u64());
    randomize(model, rng.next_u64(), 0.5, 0.3);
    const auto a = random_mel(rng, 4, 3), b = random_mel(rng, 3, 3);
    const auto batch = make_batch<double>({&a, &b}, {random_tokens(rng, 4, 0), random_tokens(rng, 3, 1)});
    // The gate input is detached, so the gate loss is checked only on the
    // gate head and must leave every other gradient bit-identical.
    LossOptions flow_opts;
    flow_opts.guided_attention = 0.5;
    LossOptions gate_opts = flow_opts;
    gate_opts.gate = true;
    gate_opts.gate_pos_weight = 2.0;
    auto params = model.parameters();
    auto grads_of = [&](const LossOptions& o) {
      for (auto p : params) p.tensor.zero_grad();
      nll_loss(model, batch, o).objective.backward();
      std::vector<std::vector<double>> g;
      for (const auto& p : params) {
        g.emplace_back(p.tensor.numel(), 0.0);
        if (p.tensor.has_grad()) g.back().assign(p.tensor.grad().begin(), p.tensor.grad().end());
      }
      return g;
    };
    const auto flow_grads = grads_of(flow_opts);
    const auto gate_grads = grads_of(gate_opts);
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto tensor = params[k].tensor;
      const bool is_gate = params[k].name.rfind("gate.", 0) == 0;
      if (!is_gate && flow_grads[k] != gate_grads[k]) leaks.push_back(label + ":" + params[k].name);
      const auto& o = is_gate ? gate_opts : flow_opts;
      const auto& analytic = is_gate ? gate_grads[k] : flow_grads[k];
      auto loss = [&] {
        NoGradGuard g;
        return nll_loss(model, batch, o).objective.item();
      };
      ++groups;
      const auto values = tensor.mutable_data();
      double group_worst = 0.0;
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        values[i] = saved + 1e-5;
        const double up = loss();
        values[i] = saved - 1e-5;
        const double down = loss();
        values[i] = saved;
        const double numeric = (up - down) / 2e-5;
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
        group_worst = std::max(group_worst, std::abs(analytic[i] - numeric) / denom);
      }
      if (group_worst >= worst) {
        worst = group_worst;
        worst_name = label + ":" + params[k].name;
      }
    }
  }
  std::string detail = std::to_string(groups) + " parameter groups, max rel err " + fmt(worst) + " at " +
                       worst_name + " (< 1e-4), gate loss cross-gradient " +
                       (leaks.empty() ? "zero" : "NONZERO in " + leaks.front());
  return make_result(3, worst < 1e-4 && leaks.empty(), detail, t0);
}

CheckResult check_likelihood_identity(std::uint64_t seed) {
  // T = 1: each step sees only the zero frame, so it maps x -> s * x + b with
  // constant s, b and a grid cell's image is a box with Gaussian mass.
  const auto t0 = Clock::now();
  FlowModel<double> model(small_config(2, 2), seed ^ 0x4u);
  randomize(model, seed ^ 0x5u, 0.5, 0.4);
  Rng rng(seed ^ 0x6u);
  const auto tokens = random_tokens(rng, 3, 0);
  const int n = 160;
  const double lo = -4.0, hi = 4.0, h = (hi - lo) / n;
  auto forward_point = [&](double a, double b) {
    MelSpectrogram x;
    x.frames = 1;
    x.channels = 2;
    x.values = {a, b};
    NoGradGuard g;
    const auto r = model.forward(make_batch<double>({&x}, {tokens}));
    return std::array<double, 3>{r.z.data()[0], r.z.data()[1], r.logdet.item()};
  };
  auto phi = [](double v) { return 0.5 * std::erfc(-v / std::sqrt(2.0)); };
  std::vector<double> zx(n + 1), zy(n + 1);
  for (int i = 0; i <= n; ++i) {
    zx[static_cast<std::size_t>(i)] = forward_point(lo + i * h, 0.0)[0];
    zy[static_cast<std::size_t>(i)] = forward_point(0.0, lo + i * h)[1];
  }
  double tv = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const auto ui = static_cast<std::size_t>(i), uj = static_cast<std::size_t>(j);
      const double exact = std::abs(phi(zx[ui + 1]) - phi(zx[ui])) * std::abs(phi(zy[uj + 1]) - phi(zy[uj]));
      const auto p = forward_point(lo + (i + 0.5) * h, lo + (j + 0.5) * h);
      const std::vector<double> z{p[0], p[1]};
      tv += 0.5 * std::abs(exact - std::exp(prior_logp(z, 2, 1.0) + p[2]) * h * h);
    }
  }
  return make_result(4, tv < 0.02, "total variation " + fmt(tv) + " on [-4,4]^2 (< 0.02)", t0);
}

CheckResult check_yin() {
  const auto t0 = Clock::now();
  Waveform sine, noise;
  sine.samples.resize(kSampleRate);
  noise.samples.resize(kSampleRate);
  Rng rng(11);
  for (std::size_t i = 0; i < sine.samples.size(); ++i) {
    sine.samples[i] = static_cast<float>(0.5 * std::sin(2.0 * M_PI * 220.0 * static_cast<double>(i) / kSampleRate));
    noise.samples[i] = static_cast<float>(0.3 * rng.normal());
  }
  const double median = yin_f0(sine).median_voiced();
  const double unvoiced = 1.0 - yin_f0(noise).voiced_fraction();
  const bool ok = std::abs(median - 220.0) <= 2.0 && unvoiced >= 0.9;
  return make_result(11, ok,
                     "sine median " + fmt(median) + " Hz (220 +- 2), noise unvoiced " + fmt(100.0 * unvoiced) +
                         "% (>= 90%)",
                     t0);
}

Corpus toy_training_corpus(std::uint64_t seed) {
  const Vocabulary vocab;
  std::vector<Utterance> utts;
  for (auto& u : synthesize_toy_corpus(ToyCorpusSpec{})) {
    Utterance x;
    x.id = u.id;
    x.mel = mel_spectrogram(u.wave);
    x.tokens = tokenize(u.text, vocab, {}, u.speaker);
    utts.push_back(std::move(x));
  }
  return split_corpus(std::move(utts), 20, seed);
}

TrainConfig toy_train_config(double max_seconds, std::uint64_t seed) {
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.guided_attention = 1.0;
  c.gate_pos_weight = 10.0;
  c.max_epochs = 1000;
  c.max_seconds = max_seconds;
  c.seed = seed;
  return c;
}

CheckResult check_variation(const FlowModel<float>& model, const Corpus& corpus, std::uint64_t seed) {
  const auto t0 = Clock::now();
  const auto& tokens = corpus.validation.front().tokens;
  const auto& features = model.config().features;
  const double levels[] = {0.0, 0.5, 1.0};
  std::vector<double> dur, f0;
  try {
    for (double s2 : levels) {
      std::vector<std::int64_t> frames;
      std::vector<F0Contour> contours;
      for (int i = 0; i < 10; ++i) {
        SamplingSpec spec;
        spec.sigma2 = s2;
        spec.seed = seed * 100 + static_cast<std::uint64_t>(i);
        spec.max_frames = 1000;
        const auto syn = sample_prior(model, tokens, spec);
        frames.push_back(syn.frames());
        contours.push_back(yin_f0(griffin_lim(syn.mel, 32, features).audio));
      }
      dur.push_back(duration_stats(frames, features.hop_seconds()).variance);
      f0.push_back(f0_contour_variance(contours));
    }
  } catch (const std::exception& e) {
    return make_result(6, false, std::string("sampling failed: ") + e.what(), t0);
  }
  const bool ok = dur[0] == 0.0 && dur[0] < dur[1] && dur[1] < dur[2] && f0[0] < f0[1] && f0[1] < f0[2];
  return make_result(6, ok,
                     "duration var (s^2) " + fmt(dur[0]) + " / " + fmt(dur[1]) + " / " + fmt(dur[2]) +
                         ", F0-contour var (Hz^2) " + fmt(f0[0]) + " / " + fmt(f0[1]) + " / " + fmt(f0[2]) +
                         " at sigma2 0 / 0.5 / 1",
                     t0);
}

CheckResult check_interpolation(const FlowModel<float>& model, const Corpus& corpus, std::uint64_t seed) {
  const auto t0 = Clock::now();
  const auto& tokens = corpus.validation[1 % corpus.validation.size()].tokens;
  try {
    SamplingSpec a, b;
    a.seed = seed * 2 + 1;
    b.seed = seed * 2 + 2;
    const auto syn_a = sample_prior(model, tokens, a), syn_b = sample_prior(model, tokens, b);
    const auto path = interpolate(model, tokens, syn_a.z, syn_b.z, 100, 0.5, seed);
    const auto target = std::max(syn_a.frames(), syn_b.frames());
    const bool ends = path.size() == 100 && path.front().mel.values == syn_a.mel.values &&
                      path.back().mel.values == syn_b.mel.values;
    int bad = 0;
    for (const auto& s : path) {
      const bool ok = s.frames() >= 1 && s.frames() <= target && s.frames() <= a.max_frames &&
                      (s.provenance.gate_fired || s.frames() == target) && all_finite(s.mel.values);
      bad += ok ? 0 : 1;
    }
    return make_result(7, ends && bad == 0,
                       std::string("endpoints ") + (ends ? "bitwise equal" : "DIFFER") + ", " +
                           std::to_string(100 - bad) + "/100 syntheses within gate/cap constraints, lengths " +
                           std::to_string(syn_a.frames()) + " -> " + std::to_string(syn_b.frames()),
                       t0);
  } catch (const std::exception& e) {
    return make_result(7, false, std::string("synthesis failed: ") + e.what(), t0);
  }
}

CheckResult check_posterior(const FlowModel<float>& model, const Corpus& corpus, std::uint64_t seed) {
  const auto t0 = Clock::now();
  const auto& src = corpus.validation[2 % corpus.validation.size()];
  const auto& other = corpus.validation[3 % corpus.validation.size()].tokens;
  try {
    const auto ev = harvest_evidence(model, {{src.id, &src.mel, src.tokens}}, src.tokens.speaker);
    SamplingSpec spec;
    spec.seed = seed + 17;
    const auto prior = sample_prior(model, other, spec);
    bool zero = true;
    for (auto strategy : {PosteriorStrategy::kGaussian, PosteriorStrategy::kReplay}) {
      const auto post = sample_posterior(model, ev, 0.0, other, spec, strategy);
      zero = zero && post.mel.values == prior.mel.values && post.z == prior.z;
    }
    SamplingSpec full;
    full.frames = src.mel.frames;
    full.seed = seed;
    const double err32 =
        max_abs_diff(sample_posterior(model, ev, 1.0, src.tokens, full, PosteriorStrategy::kReplay).mel.values,
                     src.mel.values);
    const auto md = model.cast<double>();
    const auto ev64 = harvest_evidence(md, {{src.id, &src.mel, src.tokens}}, src.tokens.speaker);
    const double err64 = max_abs_diff(
        sample_posterior(md, ev64, 1.0, src.tokens, full, PosteriorStrategy::kReplay).mel.values, src.mel.values);
    const bool ok = zero && err32 < 1e-5 && err64 < 1e-9;
    return make_result(8, ok,
                       std::string("lambda=0 ") + (zero ? "bitwise equal to prior sampling" : "DIFFERS from prior") +
                           ", lambda=1 replay max err fp32 " + fmt(err32) + " (< 1e-5), fp64 " + fmt(err64) +
                           " (< 1e-9)",
                       t0);
  } catch (const std::exception& e) {
    return make_result(8, false, std::string("posterior sampling failed: ") + e.what(), t0);
  }
}

CheckResult check_mixture(const FlowModel<float>& model, const Corpus& corpus) {
  const auto t0 = Clock::now();
  try {
    const auto mix = model.mixture();
    const auto d = model.config().n_mel;
    double worst = 0.0;
    std::vector<LabeledUtterance> labeled;
    for (const auto& u : corpus.validation) {
      const auto z = latent(model, u.mel, u.tokens);
      std::vector<double> frame(static_cast<std::size_t>(d));
      for (std::int64_t t = 0; t < u.mel.frames; ++t) {
        for (std::int64_t j = 0; j < d; ++j) frame[static_cast<std::size_t>(j)] = z[static_cast<std::size_t>(t * d + j)];
        const auto r = responsibilities(frame, mix);
        double s = 0.0;
        for (double v : r) s += v;
        worst = std::max(worst, std::abs(s - 1.0));
      }
      labeled.push_back({&u.mel, u.tokens, u.tokens.speaker});
    }
    const auto report = assignment_report(model, labeled);
    std::string rows;
    std::set<std::int64_t> dominant;
    for (std::size_t i = 0; i < report.speakers.size(); ++i) {
      dominant.insert(report.dominant(i));
      rows += ", speaker " + std::to_string(report.speakers[i]) + " -> component " +
              std::to_string(report.dominant(i)) + " (" + fmt(report.mean[i][static_cast<std::size_t>(report.dominant(i))]) +
              ")";
    }
    const bool distinct = report.speakers.size() >= 2 && dominant.size() == report.speakers.size();
    return make_result(9, worst < 1e-9 && distinct, "max |sum r - 1| " + fmt(worst) + " (< 1e-9)" + rows, t0);
  } catch (const std::exception& e) {
    return make_result(9, false, std::string("mixture analysis failed: ") + e.what(), t0);
  }
}

CheckResult check_extend_flows(const FlowModel<float>& model, const Corpus& corpus, std::uint64_t seed) {
  const auto t0 = Clock::now();
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < std::min<std::size_t>(8, corpus.validation.size()); ++i) idx.push_back(i);
  const auto batch = batch_of<float>(corpus.validation, idx);
  auto nll = [&](const FlowModel<float>& m) {
    NoGradGuard g;
    return nll_loss(m, batch).nll;
  };
  const double before = nll(model);
  double worst = 0.0;
  std::string sizes;
  for (std::int64_t extra : {1, 2}) {
    auto grown = model.cast<float>();
    extend_flows(grown, model.n_flows() + extra, seed);
    worst = std::max(worst, std::abs(nll(grown) - before));
    sizes += (sizes.empty() ? "" : ",") + std::to_string(grown.n_flows());
  }
  return make_result(10, worst < 1e-6,
                     "NLL " + fmt(before) + " nats/dim, max change " + fmt(worst) + " after K=" +
                         std::to_string(model.n_flows()) + " -> " + sizes + " (< 1e-6)",
                     t0);
}

std::vector<CheckResult> run_acceptance(const VerifyOptions& options,
                                        const std::function<void(const CheckResult&)>& on_result) {
  auto wants = [&](int id) { return options.only.empty() || options.only.count(id) > 0; };
  auto progress = [&](const std::string& msg) {
    if (options.progress) options.progress(msg);
  };
  std::vector<CheckResult> results;
  auto emit = [&](CheckResult r) {
    if (on_result) on_result(r);
    results.push_back(std::move(r));
  };
  const auto seed = options.seed;

  if (wants(1)) emit(check_invertibility(seed));
  if (wants(2)) emit(check_logdet(seed));
  if (wants(3)) emit(check_gradients(seed));
  if (wants(4)) emit(check_likelihood_identity(seed));

  const bool need_toy = wants(5) || wants(6) || wants(7) || wants(8) || wants(10);
  if (need_toy || wants(9)) {
    progress("building toy corpus");
    const auto corpus = toy_training_corpus(1);
    const Vocabulary vocab;
    auto epoch_log = [&](const std::string& tag) {
      return [&, tag](const EpochLog& e) {
        progress(tag + " epoch " + std::to_string(e.epoch) + " train " + fmt(e.train_nll) + " val " +
                 fmt(e.val_nll) + " (" + fmt(e.seconds) + " s)");
      };
    };
    auto out_dir = [&](const std::string& leaf) {
      return options.output_dir.empty() ? std::string() : (std::filesystem::path(options.output_dir) / leaf).string();
    };

    if (need_toy) {
      const auto t0 = Clock::now();
      const auto cpu0 = std::clock();
      ModelConfig mc;
      mc.n_symbols = vocab.size();
      mc.n_speakers = 2;
      std::optional<FlowModel<float>> model;
      double identity = 0.0, trained = 0.0;
      if (options.checkpoint.empty()) {
        model.emplace(mc, seed);
        TrainOutputs out;
        out.directory = out_dir("toy");
        out.on_epoch = epoch_log("toy");
        const auto res = train(toy_train_config(options.train_seconds, seed), corpus, *model, out);
        identity = res.initial_val_nll;
        trained = res.best_val_nll;
      } else {
        model.emplace(load_checkpoint<float>(options.checkpoint));
        identity = evaluate_nll(FlowModel<float>(model->config(), seed), corpus.validation, 1.0);
        trained = evaluate_nll(*model, corpus.validation, 1.0);
      }
      const double cpu_minutes = static_cast<double>(std::clock() - cpu0) / CLOCKS_PER_SEC / 60.0;
      const double baseline = GaussianBaseline::fit(corpus.train).nll(corpus.validation);
      if (wants(5)) {
        const bool ok = identity - trained >= 0.5 && trained < baseline && cpu_minutes <= 30.0;
        emit(make_result(5, ok,
                         "val NLL " + fmt(trained) + " vs identity " + fmt(identity) + " (gain " +
                             fmt(identity - trained) + " >= 0.5) and Gaussian baseline " + fmt(baseline) + ", " +
                             fmt(cpu_minutes) + " CPU-min",
                         t0));
      }
      if (wants(6)) emit(check_variation(*model, corpus, seed));
      if (wants(7)) emit(check_interpolation(*model, corpus, seed));
      if (wants(8)) emit(check_posterior(*model, corpus, seed));
      if (wants(10)) emit(check_extend_flows(*model, corpus, seed));
    }

    if (wants(9)) {
      const auto t0 = Clock::now();
      try {
        std::optional<FlowModel<float>> mixture;
        if (options.mixture_checkpoint.empty()) {
          ModelConfig mc;
          mc.n_symbols = vocab.size();
          mc.n_speakers = 2;
          mc.use_speaker = false;
          mc.prior = PriorSpec{PriorKind::kMixture, 1.0, 2, MixtureMode::kFixed};
          mixture.emplace(mc, seed);
          init_mixture_from_data(*mixture, corpus.train, seed + 3);
          TrainOutputs out;
          out.directory = out_dir("mixture");
          out.on_epoch = epoch_log("mixture");
          train(toy_train_config(options.mixture_seconds, seed), corpus, *mixture, out);
        } else {
          mixture.emplace(load_checkpoint<float>(options.mixture_checkpoint));
        }
        auto r = check_mixture(*mixture, corpus);
        r.seconds = since(t0);
        emit(r);
      } catch (const std::exception& e) {
        emit(make_result(9, false, std::string("mixture training failed: ") + e.what(), t0));
      }
    }
  }
  if (wants(11)) emit(check_yin());
  std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return results;
}

}  // namespace arflow
