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
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "arflow/model.hpp"
#include "arflow/ops.hpp"
#include "gradcheck.hpp"
#include "model_fixtures.hpp"

namespace arflow {
namespace {

using testing::random_mel;
using testing::random_tokens;
using testing::randomize;
using testing::single_batch;
using testing::tiny_config;

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

std::vector<double> z_values(const FlowModel<double>& m, const MelSpectrogram& mel, const TokenSequence& tok) {
  NoGradGuard g;
  auto r = m.forward(single_batch<double>(mel, tok));
  return {r.z.data().begin(), r.z.data().end()};
}

TEST(EncodeText, LengthAndSpeakerChannels) {
  FlowModel<double> m(tiny_config(4, 1), 1);
  Rng rng(2);
  auto tok = random_tokens(rng, 7, 0);
  auto a = m.encode_text(tok);
  EXPECT_EQ(a.shape(), (Shape{7, 7}));
  tok.speaker = 1;
  auto b = m.encode_text(tok);
  for (std::int64_t i = 0; i < 7; ++i)
    for (std::int64_t c = 0; c < 7; ++c) {
      if (c < 4) {
        EXPECT_EQ(a.at({i, c}), b.at({i, c}));
      } else {
        EXPECT_NE(a.at({i, c}), b.at({i, c}));
      }
    }
  tok.speaker = 2;
  EXPECT_THROW(m.encode_text(tok), ModelError);
}

TEST(EncodeText, DummySpeakerWhenConditioningOff) {
  auto cfg = tiny_config(4, 1);
  cfg.use_speaker = false;
  FlowModel<double> m(cfg, 1);
  Rng rng(2);
  auto tok = random_tokens(rng, 5, 0);
  auto a = m.encode_text(tok);
  tok.speaker = 99;  // ignored
  auto b = m.encode_text(tok);
  EXPECT_EQ(a.values(), b.values());
  for (std::int64_t c = 0; c < 3; ++c) EXPECT_EQ(a.at({0, 4 + c}), m.speakers.at({2, c}));
}

TEST(EncodeText, InstanceNormStageIsStandardized) {
  FlowModel<double> m(tiny_config(4, 1), 3);
  Rng rng(4);
  auto tok = random_tokens(rng, 9);
  auto h = gather_rows(m.encoder.embedding, std::span<const std::int64_t>(tok.ids));
  auto n = instance_norm(add(matmul(unfold_time(h, 5), m.encoder.conv_w[0]), m.encoder.conv_b[0]), kInstanceNormEps);
  for (std::int64_t c = 0; c < n.dim(1); ++c) {
    double mean = 0, var = 0;
    for (std::int64_t i = 0; i < 9; ++i) mean += n.at({i, c}) / 9;
    for (std::int64_t i = 0; i < 9; ++i) var += (n.at({i, c}) - mean) * (n.at({i, c}) - mean) / 9;
    EXPECT_NEAR(mean, 0.0, 1e-4);
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
}

TEST(Attention, SingleKeyAndIdenticalKeys) {
  Rng rng(5);
  TensorD q({1, 3, 4}), v({4});
  for (auto& x : q.mutable_data()) x = rng.normal();
  for (auto& x : v.mutable_data()) x = rng.normal();
  TensorD one_key({1, 1, 4}, {0.3, -0.2, 0.5, 0.1});
  const std::vector<std::int64_t> l1{1};
  auto w1 = additive_attention(q, one_key, v, l1);
  for (double x : w1.values()) EXPECT_EQ(x, 1.0);
  TensorD enc1({1, 1, 2}, {1.5, -2.5});
  auto ctx = bmm(w1, enc1);
  EXPECT_EQ(ctx.at({0, 2, 0}), 1.5);
  EXPECT_EQ(ctx.at({0, 2, 1}), -2.5);

  std::vector<double> same;
  for (int i = 0; i < 5; ++i) same.insert(same.end(), {0.3, -0.2, 0.5, 0.1});
  TensorD keys({1, 5, 4}, same);
  const std::vector<std::int64_t> l5{5};
  auto w5 = additive_attention(q, keys, v, l5);
  for (double x : w5.values()) EXPECT_NEAR(x, 0.2, 1e-6);

  TensorD rk({1, 6, 4});
  for (auto& x : rk.mutable_data()) x = rng.normal();
  const std::vector<std::int64_t> l6{6};
  auto w6 = additive_attention(q, rk, v, l6);
  for (std::int64_t t = 0; t < 3; ++t) {
    double s = 0;
    for (std::int64_t i = 0; i < 6; ++i) s += w6.at({0, t, i});
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Coupling, IdentityInitialization) {
  for (std::int64_t k : {0, 1, 2, 3}) {
    FlowModel<double> m(tiny_config(3, k), 7);
    Rng rng(8);
    auto mel = random_mel(rng, 6, 3);
    auto tok = random_tokens(rng, 4);
    NoGradGuard g;
    auto r = m.forward(single_batch<double>(mel, tok));
    EXPECT_EQ(std::vector<double>(r.z.data().begin(), r.z.data().end()), mel.values) << "K=" << k;
    EXPECT_EQ(r.logdet.item(), 0.0);
    InverseRequest<double> req;
    req.tokens = tok;
    req.z = mel.values;
    auto inv = m.inverse(req);
    EXPECT_EQ(inv.x, mel.values);
  }
}

TEST(Coupling, ForcedScaleLogdet) {
  FlowModel<double> m(tiny_config(2, 1), 9);
  auto ob = m.steps[0].out_b.mutable_data();
  ob[0] = ob[1] = std::log(2.0);
  Rng rng(1);
  auto mel = random_mel(rng, 3, 2);
  NoGradGuard g;
  auto r = m.forward(single_batch<double>(mel, random_tokens(rng, 3)));
  EXPECT_NEAR(r.logdet.item(), 6 * std::log(2.0), 1e-12);
  EXPECT_NEAR(r.logdet.item(), 4.1589, 1e-4);
  for (std::size_t i = 0; i < mel.values.size(); ++i) EXPECT_DOUBLE_EQ(r.z.data()[i], 2 * mel.values[i]);
}

TEST(Coupling, LogdetMatchesNumericalJacobian) {
  for (std::int64_t k : {1, 2}) {
    FlowModel<double> m(tiny_config(3, k), 10 + k);
    randomize(m, 20 + k);
    Rng rng(30);
    auto mel = random_mel(rng, 4, 3);
    auto tok = random_tokens(rng, 5);
    NoGradGuard g;
    const double analytic = m.forward(single_batch<double>(mel, tok)).logdet.item();
    const int n = 12;
    std::vector<double> jac(n * n);
    for (int j = 0; j < n; ++j) {
      auto up = mel, down = mel;
      up.values[j] += 1e-5;
      down.values[j] -= 1e-5;
      auto zu = z_values(m, up, tok), zd = z_values(m, down, tok);
      for (int i = 0; i < n; ++i) jac[i * n + j] = (zu[i] - zd[i]) / 2e-5;
    }
    EXPECT_NEAR(analytic, testing::log_abs_det(jac, n), 1e-4) << "K=" << k;
  }
}

TEST(Flow, RoundTripBothPrecisions) {
  for (std::int64_t k : {1, 2, 3}) {
    auto cfg = tiny_config(8, k);
    FlowModel<double> md(cfg, 40 + k);
    randomize(md, 50 + k);
    Rng rng(60 + k);
    auto mel = random_mel(rng, 17, 8);
    auto tok = random_tokens(rng, 6, 1);
    auto z = z_values(md, mel, tok);
    InverseRequest<double> req;
    req.tokens = tok;
    req.z = z;
    EXPECT_LT(max_abs_diff(md.inverse(req).x, mel.values), 1e-9);

    auto mf = md.cast<float>();
    NoGradGuard g;
    auto rf = mf.forward(single_batch<float>(mel, tok));
    InverseRequest<float> rq;
    rq.tokens = tok;
    rq.z.assign(rf.z.data().begin(), rf.z.data().end());
    auto xf = mf.inverse(rq).x;
    double worst = 0;
    for (std::size_t i = 0; i < xf.size(); ++i) worst = std::max(worst, std::abs(double(xf[i]) - mel.values[i]));
    EXPECT_LT(worst, 1e-5);
  }
}

TEST(Flow, CausalityPerStep) {
  for (std::int64_t reversed : {0, 1}) {
    // K=2: step 0 is reversed, step 1 is not. Isolate one by zeroing the other.
    FlowModel<double> m(tiny_config(3, 2), 70);
    randomize(m, 71);
    const std::size_t keep = reversed ? 0 : 1;
    for (auto& v : m.steps[1 - keep].out_w.mutable_data()) v = 0;
    for (auto& v : m.steps[1 - keep].out_b.mutable_data()) v = 0;
    ASSERT_EQ(m.steps[keep].reverse, reversed == 1);
    Rng rng(72);
    auto mel = random_mel(rng, 8, 3);
    auto tok = random_tokens(rng, 4);
    const auto base = z_values(m, mel, tok);
    const int t0 = 4;
    auto moved = mel;
    moved.values[t0 * 3 + 1] += 0.5;
    const auto z = z_values(m, moved, tok);
    for (int t = 0; t < 8; ++t) {
      double diff = 0;
      for (int d = 0; d < 3; ++d) diff = std::max(diff, std::abs(z[t * 3 + d] - base[t * 3 + d]));
      const bool upstream = reversed ? t > t0 : t < t0;
      if (upstream) {
        EXPECT_EQ(diff, 0.0) << "frame " << t;
      } else {
        EXPECT_GT(diff, 0.0) << "frame " << t;
      }
    }
  }
}

TEST(Flow, TotalLogdetIsSumOfSteps) {
  FlowModel<double> m(tiny_config(3, 3), 80);
  randomize(m, 81);
  Rng rng(82);
  auto a = random_mel(rng, 5, 3), b = random_mel(rng, 7, 3);
  auto batch = make_batch<double>({&a, &b}, {random_tokens(rng, 4), random_tokens(rng, 6)});
  NoGradGuard g;
  auto r = m.forward(batch);
  for (std::int64_t i = 0; i < 2; ++i) {
    double s = 0;
    for (const auto& ld : r.step_logdets) s += ld.at({i});
    EXPECT_EQ(s, r.logdet.at({i}));
  }
}

TEST(Flow, PaddingDoesNotChangeValidFrames) {
  FlowModel<double> m(tiny_config(3, 2), 90);
  randomize(m, 91);
  Rng rng(92);
  auto a = random_mel(rng, 5, 3), b = random_mel(rng, 9, 3);
  auto ta = random_tokens(rng, 4), tb = random_tokens(rng, 7);
  NoGradGuard g;
  auto alone = m.forward(single_batch<double>(a, ta));
  auto both = m.forward(make_batch<double>({&a, &b}, {ta, tb}));
  for (std::int64_t t = 0; t < 5; ++t)
    for (std::int64_t d = 0; d < 3; ++d) EXPECT_NEAR(alone.z.at({0, t, d}), both.z.at({0, t, d}), 1e-12);
  EXPECT_NEAR(alone.logdet.at({0}), both.logdet.at({0}), 1e-12);
}

TEST(Inverse, ReplayedAlignmentsReproduceForward) {
  FlowModel<double> m(tiny_config(4, 2), 100);
  randomize(m, 101);
  Rng rng(102);
  auto mel = random_mel(rng, 10, 4);
  auto tok = random_tokens(rng, 5);
  NoGradGuard g;
  auto r = m.forward(single_batch<double>(mel, tok));
  std::vector<std::vector<double>> align;
  for (const auto& a : r.alignments) align.emplace_back(a.data().begin(), a.data().end());
  InverseRequest<double> req;
  req.tokens = tok;
  req.z.assign(r.z.data().begin(), r.z.data().end());
  req.replay_alignments = &align;
  auto inv = m.inverse(req);
  EXPECT_LT(max_abs_diff(inv.x, mel.values), 1e-9);
  for (std::size_t k = 0; k < align.size(); ++k) EXPECT_EQ(inv.alignments[k], align[k]);
  req.z.resize(req.z.size() - 4);
  EXPECT_THROW(m.inverse(req), ModelError);
}

TEST(Inverse, GateStopsAndCapErrors) {
  FlowModel<double> m(tiny_config(3, 1), 110);
  Rng rng(111);
  auto tok = random_tokens(rng, 4);
  InverseRequest<double> req;
  req.tokens = tok;
  req.use_gate = true;
  req.max_frames = 30;
  req.sample = [](std::int64_t, std::span<double> f) { std::fill(f.begin(), f.end(), 0.0); };
  // Gate bias far negative: never fires.
  m.gate.b.mutable_data()[0] = -50;
  EXPECT_THROW(m.inverse(req), GenerationError);
  // Far positive: fires on the first frame.
  m.gate.b.mutable_data()[0] = 50;
  auto r = m.inverse(req);
  EXPECT_TRUE(r.gate_fired);
  EXPECT_EQ(r.frames, 1);
  // Finite z: stops at the gate or the end of z.
  m.gate.b.mutable_data()[0] = -50;
  InverseRequest<double> fin;
  fin.tokens = tok;
  fin.use_gate = true;
  fin.z.assign(3 * 12, 0.1);
  auto rf = m.inverse(fin);
  EXPECT_FALSE(rf.gate_fired);
  EXPECT_EQ(rf.frames, 12);
}

TEST(Inverse, ScaleUnderflowIsAnError) {
  FlowModel<double> m(tiny_config(2, 1), 120);
  m.steps[0].out_b.mutable_data()[0] = 60.0;
  Rng rng(1);
  InverseRequest<double> req;
  req.tokens = random_tokens(rng, 3);
  req.z.assign(4, 0.0);
  EXPECT_THROW(m.inverse(req), NumericError);
}

TEST(Prior, SphericalAndMixtureExamples) {
  const std::vector<double> zero{0.0};
  EXPECT_NEAR(prior_logp(zero, 1, 1.0), -0.5 * std::log(2 * M_PI), 1e-12);
  EXPECT_NEAR(prior_logp(zero, 1, 1.0), -0.9189, 1e-4);

  MixtureParams one{{1.0}, {0.0, 0.0}, {1.0, 1.0}, 1, 2};
  const std::vector<double> z{0.3, -1.2, 0.7, 2.0};
  EXPECT_NEAR(prior_logp(z, one), prior_logp(z, 2, 1.0), 1e-10);

  // Direct summation of the density for a random 3-component mixture.
  Rng rng(5);
  MixtureParams mix;
  mix.components = 3;
  mix.dim = 2;
  double wsum = 0;
  for (int k = 0; k < 3; ++k) {
    mix.weights.push_back(rng.uniform(0.2, 1.0));
    wsum += mix.weights.back();
    for (int d = 0; d < 2; ++d) {
      mix.means.push_back(rng.normal());
      mix.variances.push_back(rng.uniform(0.3, 2.0));
    }
  }
  for (auto& w : mix.weights) w /= wsum;
  const std::vector<double> frame{0.4, -0.9};
  double density = 0;
  for (int k = 0; k < 3; ++k) {
    double p = mix.weights[k];
    for (int d = 0; d < 2; ++d) {
      const double v = mix.variances[k * 2 + d], e = frame[d] - mix.means[k * 2 + d];
      p *= std::exp(-e * e / (2 * v)) / std::sqrt(2 * M_PI * v);
    }
    density += p;
  }
  EXPECT_NEAR(prior_logp(frame, mix), std::log(density), 1e-8);
}

TEST(Prior, TensorFormsMatchScalarOracles) {
  Rng rng(6);
  TensorD z({2, 3, 2});
  for (auto& v : z.mutable_data()) v = rng.normal();
  const std::vector<std::int64_t> lengths{3, 2};
  auto sp = spherical_logp(z, lengths, 0.7);
  std::vector<double> first(z.data().begin(), z.data().begin() + 6), second(z.data().begin() + 6, z.data().begin() + 10);
  EXPECT_NEAR(sp.at({0}), prior_logp(first, 2, 0.7), 1e-10);
  EXPECT_NEAR(sp.at({1}), prior_logp(second, 2, 0.7), 1e-10);

  MixtureParams mix{{0.3, 0.7}, {0.5, -0.5, -1.0, 1.0}, {0.8, 1.3, 0.6, 0.9}, 2, 2};
  TensorD logits({2, 2}, {std::log(0.3), std::log(0.7), std::log(0.3), std::log(0.7)});
  TensorD means({2, 2, 2}, {0.5, -0.5, -1.0, 1.0, 0.5, -0.5, -1.0, 1.0});
  TensorD var({2, 2, 2}, {0.8, 1.3, 0.6, 0.9, 0.8, 1.3, 0.6, 0.9});
  auto fl = mixture_frame_logp(z, logits, means, var);
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t t = 0; t < 3; ++t) {
      const std::vector<double> f{z.at({b, t, 0}), z.at({b, t, 1})};
      EXPECT_NEAR(fl.at({b, t}), prior_logp(f, mix), 1e-10);
    }
}

TEST(Prior, Responsibilities) {
  MixtureParams sym{{0.5, 0.5}, {-1.0, 0.0, 1.0, 0.0}, {1.0, 1.0, 1.0, 1.0}, 2, 2};
  const std::vector<double> mid{0.0, 3.0};
  auto g = responsibilities(mid, sym);
  EXPECT_NEAR(g[0], 0.5, 1e-9);
  EXPECT_NEAR(g[1], 0.5, 1e-9);

  MixtureParams far{{0.2, 0.5, 0.3}, {0.0, 0.0, 10.0, 0.0, 0.0, 10.0}, {1, 1, 1, 1, 1, 1}, 3, 2};
  const std::vector<double> at_mu{10.0, 0.0};
  auto gf = responsibilities(at_mu, far);
  EXPECT_GT(gf[1], 0.999);
  // Direct density ratio.
  const double p1 = 0.5, p0 = 0.2 * std::exp(-50.0), p2 = 0.3 * std::exp(-100.0);
  EXPECT_NEAR(gf[1], p1 / (p0 + p1 + p2), 1e-12);

  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const std::vector<double> z{rng.normal() * 20, rng.normal() * 20};
    auto r = responsibilities(z, far);
    EXPECT_NEAR(r[0] + r[1] + r[2], 1.0, 1e-9);
  }
}

TEST(Prior, ModelMixtureModes) {
  auto cfg = tiny_config(3, 1);
  cfg.prior.kind = PriorKind::kMixture;
  cfg.prior.components = 2;
  FlowModel<double> fixed(cfg, 130);
  auto mp = fixed.mixture();
  EXPECT_NO_THROW(mp.validate());
  Rng rng(131);
  auto mel = random_mel(rng, 6, 3);
  EXPECT_THROW(fixed.predict_mixture(mel), ModelError);

  cfg.prior.mode = MixtureMode::kPredicted;
  FlowModel<double> pred(cfg, 132);
  randomize(pred, 133, 2.0);
  auto a = pred.predict_mixture(mel), b = pred.predict_mixture(mel);
  double s = 0;
  for (double w : a.weights) s += w;
  EXPECT_NEAR(s, 1.0, 1e-6);
  for (double v : a.variances) EXPECT_GE(v, kVarianceFloor);
  EXPECT_EQ(a.means, b.means);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_THROW(pred.mixture(), ModelError);
  FlowModel<double> spherical(tiny_config(3, 1), 1);
  EXPECT_THROW(spherical.mixture(), ModelError);
}

TEST(Prior, ChangeOfVariablesMatchesCellMasses) {
  // T = 1: every step sees only the zero frame, so each maps x -> s * x + b
  // with constant s, b and the image of a grid cell is a box.
  auto cfg = tiny_config(2, 2);
  FlowModel<double> m(cfg, 140);
  randomize(m, 141, 0.5, 0.4);
  Rng rng(142);
  auto tok = random_tokens(rng, 3);
  const int n = 160;
  const double lo = -4, hi = 4, h = (hi - lo) / n;
  auto forward_point = [&](double a, double b) {
    MelSpectrogram x;
    x.frames = 1;
    x.channels = 2;
    x.values = {a, b};
    NoGradGuard g;
    auto r = m.forward(single_batch<double>(x, tok));
    return std::tuple<double, double, double>(r.z.data()[0], r.z.data()[1], r.logdet.item());
  };
  auto phi = [](double v) { return 0.5 * std::erfc(-v / std::sqrt(2.0)); };
  std::vector<double> zx(n + 1), zy(n + 1);
  for (int i = 0; i <= n; ++i) {
    zx[i] = std::get<0>(forward_point(lo + i * h, 0.0));
    zy[i] = std::get<1>(forward_point(0.0, lo + i * h));
  }
  double tv = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double exact = std::abs(phi(zx[i + 1]) - phi(zx[i])) * std::abs(phi(zy[j + 1]) - phi(zy[j]));
      auto [za, zb, ld] = forward_point(lo + (i + 0.5) * h, lo + (j + 0.5) * h);
      const std::vector<double> z{za, zb};
      const double eq5 = std::exp(prior_logp(z, 2, 1.0) + ld) * h * h;
      tv += 0.5 * std::abs(exact - eq5);
    }
  EXPECT_LT(tv, 0.02);
}

TEST(Gate, GradientIsIsolatedFromCoupling) {
  FlowModel<double> m(tiny_config(3, 2), 150);
  randomize(m, 151);
  Rng rng(152);
  auto mel = random_mel(rng, 6, 3);
  auto batch = single_batch<double>(mel, random_tokens(rng, 4));
  auto r = m.forward(batch);
  std::vector<double> target(6, 0.0), weight(6, 1.0);
  target[5] = 1.0;
  auto loss = bce_with_logits(r.gate_logits, std::span<const double>(target), std::span<const double>(weight));
  for (auto& p : m.parameters()) p.tensor.zero_grad();
  loss.backward();
  for (const auto& p : m.parameters()) {
    if (p.name.rfind("gate.", 0) == 0) continue;
    for (double g : p.tensor.grad()) ASSERT_EQ(g, 0.0) << p.name;
  }
  double gate_grad = 0;
  for (double g : m.gate.w.grad()) gate_grad += std::abs(g);
  EXPECT_GT(gate_grad, 0.0);
}

TEST(Checkpoint, RoundTripAndCast) {
  auto cfg = tiny_config(4, 2);
  cfg.prior.kind = PriorKind::kMixture;
  cfg.prior.components = 3;
  FlowModel<float> m(cfg, 160);
  randomize(m, 161);
  const auto path = (std::filesystem::temp_directory_path() / "arflow_model_test.ckpt").string();
  save_checkpoint(path, m, R"({"epoch": 3})");
  std::string meta;
  auto loaded = load_checkpoint<float>(path, &meta);
  EXPECT_NE(meta.find("epoch"), std::string::npos);
  ASSERT_EQ(loaded.parameters().size(), m.parameters().size());
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    EXPECT_EQ(loaded.parameters()[i].tensor.values(), m.parameters()[i].tensor.values());
  }
  EXPECT_EQ(read_checkpoint_info(path).config.to_json(), cfg.to_json());
  auto as_double = load_checkpoint<double>(path);
  EXPECT_EQ(as_double.steps[1].out_w.at({0, 0}), static_cast<double>(m.steps[1].out_w.at({0, 0})));
  { std::ofstream(path, std::ios::binary) << "garbage"; }
  EXPECT_THROW(load_checkpoint<float>(path), FormatError);
}

TEST(Config, JsonRoundTripAndValidation) {
  auto cfg = tiny_config(5, 3);
  cfg.prior.kind = PriorKind::kMixture;
  cfg.prior.mode = MixtureMode::kPredicted;
  cfg.prior.components = 4;
  auto back = ModelConfig::from_json(cfg.to_json());
  EXPECT_EQ(back.to_json(), cfg.to_json());
  EXPECT_EQ(back.prior, cfg.prior);
  cfg.text_dim = 5;
  EXPECT_THROW(cfg.validate(), ModelError);
  for (std::int64_t k = 0; k < 4; ++k) EXPECT_EQ(ModelConfig::step_reversed(k, 4), k % 2 == 0);
  EXPECT_FALSE(ModelConfig::step_reversed(0, 1));
}

}  // namespace
}  // namespace arflow
