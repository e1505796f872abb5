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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "arflow/inference.hpp"
#include "arflow/ops.hpp"
#include "model_fixtures.hpp"

namespace arflow {
namespace {

using testing::random_mel;
using testing::random_tokens;
using testing::randomize;
using testing::tiny_config;

constexpr std::int64_t kDim = 4;

FlowModel<double> make_model(std::int64_t flows, bool gate, std::uint64_t seed = 1) {
  auto cfg = tiny_config(kDim, flows);
  cfg.use_gate = gate;
  FlowModel<double> m(cfg, seed);
  randomize(m, seed + 100);
  return m;
}

std::vector<double> latent_of(const FlowModel<double>& model, const MelSpectrogram& mel, const TokenSequence& tokens) {
  const auto z = model.forward(testing::single_batch<double>(mel, tokens)).z;
  return {z.data().begin(), z.data().end()};
}

void expect_close(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << i;
}

TEST(Prior, SigmaZeroIsDeterministicAndSeedReproducible) {
  const auto model = make_model(2, false);
  Rng rng(1);
  const auto tokens = random_tokens(rng, 5, 1);
  SamplingSpec spec;
  spec.frames = 7;
  spec.sigma2 = 0.0;
  spec.seed = 1;
  const auto a = sample_prior(model, tokens, spec);
  spec.seed = 2;
  const auto b = sample_prior(model, tokens, spec);
  EXPECT_EQ(a.mel.values, b.mel.values);
  spec.sigma2 = 0.5;
  spec.seed = 7;
  const auto c = sample_prior(model, tokens, spec), d = sample_prior(model, tokens, spec);
  EXPECT_EQ(c.mel.values, d.mel.values);
  EXPECT_NE(c.mel.values, a.mel.values);
  EXPECT_EQ(c.provenance.mode, "prior");
  EXPECT_EQ(c.provenance.seed, 7u);
  spec.sigma2 = -1.0;
  EXPECT_THROW(sample_prior(model, tokens, spec), InferenceError);
}

TEST(Prior, LatentIsScaledStandardNormal) {
  GaussianLatent unit(3, 1.0, 9), half(3, 0.25, 9);
  const auto a = unit.draw(5), b = half.draw(5);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(b[i], 0.5 * a[i]);
}

TEST(Prior, OpenEndedMatchesFixedLengthPrefix) {
  const auto model = make_model(2, true);
  Rng rng(2);
  const auto tokens = random_tokens(rng, 4, 0);
  SamplingSpec spec;
  spec.sigma2 = 0.5;
  spec.seed = 3;
  spec.frames = 10;
  const auto fixed = sample_prior(model, tokens, spec);
  // Gate probabilities along the fixed-length run pick a threshold that fires inside it.
  const auto probe = synthesize_latent(model, tokens, fixed.z, true, 0.999999);
  ASSERT_EQ(probe.gate_probs.size(), 10u);
  const auto peak = std::max_element(probe.gate_probs.begin(), probe.gate_probs.end());
  spec.frames = 0;
  spec.gate_threshold = *peak - 1e-12;
  const auto open = sample_prior(model, tokens, spec);
  EXPECT_TRUE(open.provenance.gate_fired);
  const auto n = static_cast<std::size_t>(peak - probe.gate_probs.begin()) + 1;
  ASSERT_EQ(static_cast<std::size_t>(open.frames()), n);
  // Same latent stream; a reversed step sees the whole (shorter) utterance.
  const std::vector<double> prefix(fixed.z.begin(), fixed.z.begin() + static_cast<std::ptrdiff_t>(n * kDim));
  EXPECT_EQ(open.z, prefix);
  EXPECT_EQ(open.mel.values, synthesize_latent(model, tokens, prefix, false).mel.values);
  auto no_gate = make_model(1, false);
  EXPECT_THROW(sample_prior(no_gate, tokens, spec), InferenceError);
}

TEST(Interpolation, EndpointsAndCancellation) {
  const auto model = make_model(2, false);
  Rng rng(3);
  const auto tokens = random_tokens(rng, 4, 1);
  GaussianLatent g(kDim, 0.8, 11);
  const auto z_a = g.draw(6), z_b = g.draw(6);
  const auto path = interpolate(model, tokens, z_a, z_b, 5);
  ASSERT_EQ(path.size(), 5u);
  EXPECT_EQ(path.front().mel.values, synthesize_latent(model, tokens, z_a, false).mel.values);
  EXPECT_EQ(path.back().mel.values, synthesize_latent(model, tokens, z_b, false).mel.values);
  EXPECT_DOUBLE_EQ(*path[2].provenance.lambda, 0.5);

  std::vector<double> neg_a(z_a.size());
  std::transform(z_a.begin(), z_a.end(), neg_a.begin(), [](double v) { return -v; });
  const auto mid = interpolate(model, tokens, z_a, neg_a, 3)[1];
  SamplingSpec zero;
  zero.sigma2 = 0.0;
  zero.frames = 6;
  EXPECT_EQ(mid.mel.values, sample_prior(model, tokens, zero).mel.values);
  EXPECT_THROW(interpolate(model, tokens, z_a, z_b, 1), InferenceError);
}

TEST(Interpolation, ShorterLatentIsPaddedWithFreshNoise) {
  const auto model = make_model(1, false);
  Rng rng(4);
  const auto tokens = random_tokens(rng, 3, 0);
  GaussianLatent g(kDim, 1.0, 12);
  const auto z_a = g.draw(3), z_b = g.draw(5);
  const auto path = interpolate(model, tokens, z_a, z_b, 2, 0.5, 13);
  EXPECT_EQ(path[0].frames(), 5);
  EXPECT_TRUE(std::equal(z_a.begin(), z_a.end(), path[0].z.begin()));
  GaussianLatent pad(kDim, 0.5, 13);
  const auto fresh = pad.draw(2);
  EXPECT_TRUE(std::equal(fresh.begin(), fresh.end(), path[0].z.begin() + 12));
}

TEST(Evidence, SingleSampleMeanAndSpeakerSubstitution) {
  const auto model = make_model(2, false);
  Rng rng(5);
  const auto mel = random_mel(rng, 6, kDim);
  auto tokens = random_tokens(rng, 4, 0);
  const auto ev = harvest_evidence(model, {{"s0", &mel, tokens}}, 1);
  tokens.speaker = 1;
  const auto z = latent_of(model, mel, tokens);
  EXPECT_EQ(ev.z[0], z);
  for (std::int64_t j = 0; j < kDim; ++j) {
    double m = 0.0;
    for (std::int64_t t = 0; t < 6; ++t) m += z[static_cast<std::size_t>(t * kDim + j)];
    EXPECT_NEAR(ev.mean[static_cast<std::size_t>(j)], m / 6.0, 1e-14);
    EXPECT_GT(ev.variance[static_cast<std::size_t>(j)], 0.0);
  }
  EXPECT_EQ(ev.speaker, 1);
  EXPECT_THROW(harvest_evidence(model, {{"bad", &mel, std::nullopt}}, 0), InferenceError);
  const auto partial = harvest_evidence(model, {{"bad", &mel, std::nullopt}, {"ok", &mel, tokens}}, 0);
  EXPECT_EQ(partial.z.size(), 1u);
  EXPECT_EQ(partial.warnings.size(), 1u);
}

TEST(Evidence, FileRoundTrip) {
  const auto model = make_model(1, false);
  Rng rng(6);
  const auto m1 = random_mel(rng, 4, kDim), m2 = random_mel(rng, 7, kDim);
  const auto ev = harvest_evidence(model, {{"a", &m1, random_tokens(rng, 3)}, {"b", &m2, random_tokens(rng, 5)}}, 0);
  const auto path = (std::filesystem::temp_directory_path() / "arflow_evidence_test.ev").string();
  ev.save(path);
  const auto back = Evidence::load(path);
  EXPECT_EQ(back.z, ev.z);
  EXPECT_EQ(back.mean, ev.mean);
  EXPECT_EQ(back.variance, ev.variance);
  EXPECT_EQ(back.ids, ev.ids);
  EXPECT_EQ(back.frames, ev.frames);
}

TEST(Posterior, LambdaZeroIsPriorSampling) {
  const auto model = make_model(2, false);
  Rng rng(7);
  const auto mel = random_mel(rng, 5, kDim, 2.0);
  const auto tokens = random_tokens(rng, 4, 1);
  const auto ev = harvest_evidence(model, {{"s", &mel, tokens}}, 1);
  SamplingSpec spec;
  spec.frames = 8;
  spec.seed = 21;
  const auto prior = sample_prior(model, tokens, spec);
  for (auto strategy : {PosteriorStrategy::kGaussian, PosteriorStrategy::kReplay}) {
    const auto post = sample_posterior(model, ev, 0.0, tokens, spec, strategy);
    EXPECT_EQ(post.mel.values, prior.mel.values) << to_string(strategy);
    EXPECT_EQ(post.z, prior.z);
  }
  EXPECT_THROW(sample_posterior(model, ev, 1.5, tokens, spec), InferenceError);
  EXPECT_THROW(sample_posterior(model, ev, -0.1, tokens, spec), InferenceError);
}

TEST(Posterior, GaussianCentersOnScaledEvidenceMean) {
  const auto model = make_model(1, false);
  Rng rng(8);
  const auto mel = random_mel(rng, 5, kDim, 2.0);
  const auto tokens = random_tokens(rng, 4, 0);
  const auto ev = harvest_evidence(model, {{"s", &mel, tokens}}, 0);
  SamplingSpec spec;
  spec.frames = 3;
  spec.sigma2 = 0.0;
  const auto post = sample_posterior(model, ev, 0.5, tokens, spec);
  for (std::int64_t t = 0; t < 3; ++t)
    for (std::int64_t j = 0; j < kDim; ++j) EXPECT_EQ(post.z[static_cast<std::size_t>(t * kDim + j)], 0.5 * ev.mean[static_cast<std::size_t>(j)]);
}

TEST(Posterior, ReplayAtLambdaOneUsesEvidenceAndReconstructs) {
  const auto model = make_model(3, false);
  Rng rng(9);
  const auto mel = random_mel(rng, 9, kDim);
  const auto tokens = random_tokens(rng, 5, 1);
  const auto ev = harvest_evidence(model, {{"s", &mel, tokens}}, 1);
  SamplingSpec spec;
  spec.frames = 9;
  spec.seed = 4;
  const auto full = sample_posterior(model, ev, 1.0, tokens, spec, PosteriorStrategy::kReplay);
  expect_close(full.mel.values, mel.values, 1e-9);
  spec.frames = 5;
  const auto part = sample_posterior(model, ev, 1.0, tokens, spec, PosteriorStrategy::kReplay);
  EXPECT_TRUE(std::equal(part.z.begin(), part.z.end(), ev.z[0].begin()));
}

TEST(Posterior, TileConcatenationArithmetic) {
  std::vector<double> z_e(50 * 2);
  for (std::size_t i = 0; i < z_e.size(); ++i) z_e[i] = static_cast<double>(i);
  const auto tiled = tile_latent(z_e, 2, 120);
  ASSERT_EQ(tiled.size(), 240u);
  EXPECT_TRUE(std::equal(z_e.begin(), z_e.end(), tiled.begin()));
  EXPECT_TRUE(std::equal(z_e.begin(), z_e.end(), tiled.begin() + 100));
  EXPECT_TRUE(std::equal(z_e.begin(), z_e.begin() + 40, tiled.begin() + 200));
}

TEST(Transfer, SameSpeakerReconstructsAndLengthIsFixed) {
  const auto model = make_model(2, true);
  Rng rng(10);
  const auto mel = random_mel(rng, 8, kDim);
  const auto tokens = random_tokens(rng, 5, 0);
  const auto same = transfer_with_alignment(model, mel, tokens, 0);
  EXPECT_EQ(same.frames(), 8);
  expect_close(same.mel.values, mel.values, 1e-9);
  const auto other = transfer_with_alignment(model, mel, tokens, 1);
  EXPECT_EQ(other.frames(), 8);
  EXPECT_NE(other.mel.values, same.mel.values);
  EXPECT_EQ(other.provenance.speaker, 1);
  TransferOptions opts;
  opts.forward_speaker = 1;
  expect_close(transfer_with_alignment(model, mel, tokens, 1, opts).mel.values, mel.values, 1e-9);
  EXPECT_THROW(transfer_with_alignment(model, mel, tokens, 5), InferenceError);
  auto cfg = tiny_config(kDim, 1);
  cfg.use_speaker = false;
  FlowModel<double> plain(cfg, 1);
  EXPECT_THROW(transfer_with_alignment(plain, mel, tokens, 0), InferenceError);
}

TEST(Mixture, OffsetAndCollapse) {
  auto cfg = tiny_config(kDim, 2);
  cfg.use_gate = false;
  cfg.prior = PriorSpec{PriorKind::kMixture, 1.0, 3, MixtureMode::kFixed};
  FlowModel<double> model(cfg, 2);
  randomize(model, 30);
  Rng rng(11);
  const auto tokens = random_tokens(rng, 4, 1);
  SamplingSpec spec;
  spec.frames = 6;
  spec.seed = 5;
  MixtureSelection plain;
  plain.component = 2;
  const auto base = sample_mixture(model, tokens, plain, spec);
  auto zero = plain;
  zero.offset_dim = 1;
  zero.offset = 0.0;
  EXPECT_EQ(sample_mixture(model, tokens, zero, spec).mel.values, base.mel.values);
  auto shifted = zero;
  shifted.offset = 2.0;
  const auto moved = sample_mixture(model, tokens, shifted, spec);
  for (std::int64_t t = 0; t < 6; ++t)
    for (std::int64_t j = 0; j < kDim; ++j) {
      const auto i = static_cast<std::size_t>(t * kDim + j);
      EXPECT_NEAR(moved.z[i] - base.z[i], j == 1 ? 2.0 : 0.0, 1e-12);
    }
  MixtureSelection weighted;
  weighted.weights = {0.2, 0.3, 0.5};
  EXPECT_EQ(sample_mixture(model, tokens, weighted, spec).frames(), 6);
  MixtureSelection bad;
  bad.component = 3;
  EXPECT_THROW(sample_mixture(model, tokens, bad, spec), InferenceError);
  bad.component = 0;
  bad.offset_dim = kDim;
  EXPECT_THROW(sample_mixture(model, tokens, bad, spec), InferenceError);
  const auto spherical = make_model(1, false);
  EXPECT_THROW(sample_mixture(spherical, tokens, plain, spec), InferenceError);
}

TEST(Mixture, SingleZeroMeanComponentReducesToPrior) {
  auto cfg = tiny_config(kDim, 1);
  cfg.use_gate = false;
  cfg.prior = PriorSpec{PriorKind::kMixture, 1.0, 1, MixtureMode::kFixed};
  FlowModel<double> mixture(cfg, 2);
  randomize(mixture, 31);
  const double sigma2 = 0.5;
  for (auto& v : mixture.mixture_prior.means.mutable_data()) v = 0.0;
  for (auto& v : mixture.mixture_prior.raw_var.mutable_data()) v = std::log(std::expm1(sigma2 - kVarianceFloor));
  Rng rng(12);
  const auto tokens = random_tokens(rng, 4, 0);
  SamplingSpec spec;
  spec.frames = 5;
  spec.sigma2 = sigma2;
  spec.seed = 6;
  MixtureSelection sel;
  sel.component = 0;
  expect_close(sample_mixture(mixture, tokens, sel, spec).mel.values, sample_prior(mixture, tokens, spec).mel.values, 1e-12);
}

TEST(Modes, ForwardOfEverySynthesisRecoversItsLatent) {
  const auto model = make_model(3, false);
  Rng rng(13);
  const auto tokens = random_tokens(rng, 4, 1);
  const auto mel = random_mel(rng, 6, kDim);
  const auto ev = harvest_evidence(model, {{"s", &mel, tokens}}, 1);
  SamplingSpec spec;
  spec.frames = 6;
  spec.seed = 8;
  std::vector<Synthesis> outputs = {sample_prior(model, tokens, spec),
                                    sample_posterior(model, ev, 0.7, tokens, spec),
                                    sample_posterior(model, ev, 0.7, tokens, spec, PosteriorStrategy::kReplay)};
  for (const auto& s : outputs) expect_close(latent_of(model, s.mel, tokens), s.z, 1e-9);
}

TEST(Output, WritesMelAlignmentsAndProvenance) {
  const auto model = make_model(1, false);
  Rng rng(14);
  auto tokens = random_tokens(rng, 3, 0);
  tokens.text = "hello";
  SamplingSpec spec;
  spec.frames = 4;
  const auto s = sample_prior(model, tokens, spec);
  const auto dir = (std::filesystem::temp_directory_path() / "arflow_inference_out").string();
  std::filesystem::remove_all(dir);
  write_synthesis(s, dir, "sample_000");
  const auto back = load_tensor_file<double>(dir + "/sample_000.mel");
  EXPECT_EQ(back.values(), s.mel.values);
  EXPECT_TRUE(std::filesystem::exists(dir + "/sample_000.alignments.csv"));
  std::ifstream prov(dir + "/sample_000.provenance.json");
  const std::string text(std::istreambuf_iterator<char>(prov), {});
  EXPECT_NE(text.find("\"mode\": \"prior\""), std::string::npos);
  EXPECT_NE(text.find("\"text\": \"hello\""), std::string::npos);
}

}  // namespace
}  // namespace arflow
