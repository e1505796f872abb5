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
#include <set>

#include "arflow/audio.hpp"
#include "arflow/ops.hpp"
#include "arflow/training.hpp"
#include "model_fixtures.hpp"

namespace arflow {
namespace {

using testing::random_mel;
using testing::random_tokens;
using testing::randomize;
using testing::tiny_config;

std::string temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "arflow_training_test" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

std::vector<Utterance> random_utterances(std::uint64_t seed, int n, std::int64_t d, double offset = 0.0) {
  Rng rng(seed);
  std::vector<Utterance> out;
  for (int i = 0; i < n; ++i) {
    Utterance u;
    u.id = "u" + std::to_string(i);
    u.mel = random_mel(rng, 3 + static_cast<std::int64_t>(rng.below(6)), d, 0.7);
    for (auto& v : u.mel.values) v += offset;
    u.tokens = random_tokens(rng, 2 + static_cast<std::int64_t>(rng.below(4)), i % 2);
    out.push_back(std::move(u));
  }
  return out;
}

TEST(NllLoss, IdentityModelAtZeroIsHalfLogTwoPi) {
  FlowModel<double> model(tiny_config(4, 1), 1);
  Rng rng(1);
  MelSpectrogram zero;
  zero.frames = 5;
  zero.channels = 4;
  zero.values.assign(20, 0.0);
  const auto terms = nll_loss(model, testing::single_batch<double>(zero, random_tokens(rng, 3)));
  EXPECT_NEAR(terms.nll, 0.5 * std::log(2 * M_PI), 1e-12);
  EXPECT_NEAR(terms.nll, 0.9189, 1e-4);
  EXPECT_EQ(terms.elements, 20);
  EXPECT_EQ(terms.gate_bce, 0.0);
}

TEST(NllLoss, SameBatchTwiceIsBitwiseEqual) {
  FlowModel<float> model(tiny_config(4, 2), 3);
  randomize(model, 4);
  auto utts = random_utterances(5, 3, 4);
  const auto batch = batch_of<float>(utts, {0, 1, 2});
  LossOptions opts;
  opts.gate = true;
  const auto a = nll_loss(model, batch, opts), b = nll_loss(model, batch, opts);
  EXPECT_EQ(a.nll, b.nll);
  EXPECT_EQ(a.gate_bce, b.gate_bce);
  EXPECT_GT(a.gate_bce, 0.0);
}

TEST(NllLoss, InvariantToUtteranceOrder) {
  FlowModel<double> model(tiny_config(4, 2), 3);
  randomize(model, 6);
  auto utts = random_utterances(7, 4, 4);
  const auto a = nll_loss(model, batch_of<double>(utts, {0, 1, 2, 3})).nll;
  const auto b = nll_loss(model, batch_of<double>(utts, {3, 1, 0, 2})).nll;
  EXPECT_NEAR(a, b, 1e-5);
}

TEST(NllLoss, PaddingDoesNotChangeAnUtterancesContribution) {
  FlowModel<double> model(tiny_config(4, 3), 3);
  randomize(model, 8);
  auto utts = random_utterances(9, 2, 4);
  Rng rng(10);
  utts[1].mel = random_mel(rng, utts[0].mel.frames + 7, 4);
  const auto alone = nll_loss(model, batch_of<double>(utts, {0})).utterance_nll[0];
  const auto padded = nll_loss(model, batch_of<double>(utts, {0, 1})).utterance_nll[0];
  EXPECT_NEAR(alone, padded, 1e-9);
}

TEST(NllLoss, NonFiniteInputNamesTheUtterance) {
  FlowModel<double> model(tiny_config(4, 1), 3);
  randomize(model, 8);
  auto utts = random_utterances(9, 2, 4);
  utts[1].id = "broken_item";
  utts[1].mel.values[2] = std::numeric_limits<double>::quiet_NaN();
  try {
    nll_loss(model, batch_of<double>(utts, {1}));
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("broken_item"), std::string::npos) << e.what();
  }
}

TEST(Scheduler, TwoAnnealsQuarterTheRate) {
  PlateauScheduler s(1e-3, 0.5, 2, 1e-6);
  EXPECT_FALSE(s.observe(1.0));
  EXPECT_FALSE(s.observe(1.0));
  EXPECT_TRUE(s.observe(1.0));
  EXPECT_FALSE(s.observe(0.5));  // improvement resets patience
  EXPECT_FALSE(s.observe(0.6));
  EXPECT_TRUE(s.observe(0.7));
  EXPECT_EQ(s.anneal_count(), 2);
  EXPECT_DOUBLE_EQ(s.learning_rate(), 0.25 * 1e-3);
}

TEST(Scheduler, RespectsFloor) {
  PlateauScheduler s(1e-5, 0.5, 1, 4e-6);
  s.observe(1.0);
  for (int i = 0; i < 10; ++i) s.observe(2.0);
  EXPECT_DOUBLE_EQ(s.learning_rate(), 4e-6);
  EXPECT_THROW(PlateauScheduler(1e-3, 0.5, 0, 0.0), TrainingError);
}

TEST(Optimizer, ZeroLearningRateLeavesParametersUnchanged) {
  FlowModel<double> model(tiny_config(4, 2), 3);
  randomize(model, 11);
  auto utts = random_utterances(12, 2, 4);
  std::vector<std::vector<double>> before;
  for (const auto& p : model.parameters()) before.push_back(p.tensor.values());
  AdamOptions o;
  o.learning_rate = 0.0;
  o.weight_decay = 0.0;
  Adam<double> opt(model.parameters(), o);
  nll_loss(model, batch_of<double>(utts, {0, 1})).objective.backward();
  opt.step();
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) EXPECT_EQ(params[i].tensor.values(), before[i]) << params[i].name;
}

TEST(Train, EmptyCorpusFailsBeforeAnyStep) {
  FlowModel<float> model(tiny_config(4, 1), 3);
  Corpus empty;
  EXPECT_THROW(train(TrainConfig{}, empty, model), TrainingError);
  EXPECT_THROW(split_corpus({}, 2, 0), TrainingError);
  EXPECT_THROW(split_corpus(random_utterances(1, 2, 4), 2, 0), TrainingError);
}

TEST(Train, RejectsUnknownSpeakerAndChannelMismatch) {
  FlowModel<float> model(tiny_config(4, 1), 3);
  auto corpus = split_corpus(random_utterances(2, 6, 4), 2, 0);
  corpus.train[0].tokens.speaker = 7;
  EXPECT_THROW(train(TrainConfig{}, corpus, model), TrainingError);
  auto other = split_corpus(random_utterances(2, 6, 5), 2, 0);
  EXPECT_THROW(train(TrainConfig{}, other, model), TrainingError);
}

TEST(Train, WritesLogAndCheckpointsAndIsDeterministic) {
  auto corpus = split_corpus(random_utterances(13, 12, 4, 1.5), 3, 2);
  TrainConfig cfg;
  cfg.learning_rate = 3e-3;
  cfg.max_epochs = 3;
  cfg.batch_size = 4;
  cfg.seed = 9;
  cfg.attention_prior_epochs = 1;
  auto run = [&](const std::string& dir) {
    FlowModel<float> model(tiny_config(4, 2), 3);
    TrainOutputs out;
    out.directory = dir;
    auto result = train(cfg, corpus, model, out);
    return std::make_pair(result, model.state());
  };
  const auto dir_a = temp_dir("run_a"), dir_b = temp_dir("run_b");
  const auto [ra, sa] = run(dir_a);
  const auto [rb, sb] = run(dir_b);
  ASSERT_EQ(ra.log.size(), 4u);
  EXPECT_EQ(ra.steps, 3 * 3);
  EXPECT_LT(ra.best_val_nll, ra.initial_val_nll);
  for (std::size_t i = 0; i < ra.log.size(); ++i) {
    EXPECT_EQ(ra.log[i].train_nll, rb.log[i].train_nll);
    EXPECT_EQ(ra.log[i].val_nll, rb.log[i].val_nll);
  }
  for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_EQ(sa[i].tensor.values(), sb[i].tensor.values()) << sa[i].name;

  std::ifstream log(dir_a + "/train_log.csv");
  std::string header, line;
  std::getline(log, header);
  EXPECT_EQ(header, "epoch,train_nll,val_nll,gate_bce,learning_rate,seconds");
  int rows = 0;
  while (std::getline(log, line)) ++rows;
  EXPECT_EQ(rows, 4);
  EXPECT_TRUE(std::filesystem::exists(dir_a + "/latest.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir_a + "/train_config.json"));
  const auto best = load_checkpoint<float>(dir_a + "/best.ckpt");
  // The returned model holds the best parameters.
  for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_EQ(best.state()[i].tensor.values(), sa[i].tensor.values());
  EXPECT_NEAR(evaluate_nll(best, corpus.validation, 1.0), ra.best_val_nll, 1e-6);
}

TEST(Corpus, SplitIsDeterministicAndDisjoint) {
  const auto a = split_corpus(random_utterances(3, 20, 4), 5, 42);
  const auto b = split_corpus(random_utterances(3, 20, 4), 5, 42);
  ASSERT_EQ(a.validation.size(), 5u);
  ASSERT_EQ(a.train.size(), 15u);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < a.validation.size(); ++i) {
    EXPECT_EQ(a.validation[i].id, b.validation[i].id);
    ids.insert(a.validation[i].id);
  }
  for (const auto& u : a.train) EXPECT_EQ(ids.count(u.id), 0u);
}

TEST(Corpus, BatchesCoverEveryUtteranceOnce) {
  const auto utts = random_utterances(4, 23, 4);
  Rng r1(5), r2(5);
  const auto a = make_batches(utts, 4, r1), b = make_batches(utts, 4, r2);
  EXPECT_EQ(a, b);
  std::multiset<std::size_t> seen;
  for (const auto& batch : a) {
    EXPECT_LE(batch.size(), 4u);
    seen.insert(batch.begin(), batch.end());
  }
  EXPECT_EQ(seen.size(), 23u);
  EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), 23u);
}

TEST(Corpus, MelCacheReturnsTheSameFeatures) {
  const auto dir = temp_dir("cache");
  Waveform w;
  w.samples.resize(4000);
  for (std::size_t i = 0; i < w.samples.size(); ++i) w.samples[i] = static_cast<float>(0.3 * std::sin(0.05 * i));
  write_wav(w, dir + "/a.wav");
  MelCache cache(dir + "/cache");
  MelConfig cfg;
  const auto fresh = cache.load(dir + "/a.wav", cfg);
  const auto cached = cache.load(dir + "/a.wav", cfg);
  EXPECT_EQ(fresh.values, cached.values);
  EXPECT_EQ(fresh.frames, cached.frames);
  EXPECT_EQ(std::distance(std::filesystem::directory_iterator(dir + "/cache"), {}), 1);
  MelConfig other = cfg;
  other.n_mels = 40;
  EXPECT_NE(cache.key(dir + "/a.wav", cfg), cache.key(dir + "/a.wav", other));
  EXPECT_EQ(cache.load(dir + "/a.wav", other).channels, 40);
}

TEST(Baseline, ClosedFormGaussian) {
  Utterance u;
  u.mel.frames = 2;
  u.mel.channels = 1;
  u.mel.values = {0.0, 2.0};
  const auto g = GaussianBaseline::fit({u});
  EXPECT_DOUBLE_EQ(g.mean[0], 1.0);
  EXPECT_DOUBLE_EQ(g.variance[0], 1.0);
  EXPECT_NEAR(g.nll({u}), 0.5 * std::log(2 * M_PI) + 0.5, 1e-12);
}

TEST(TrainConfigJson, RoundTripAndValidation) {
  TrainConfig c;
  c.learning_rate = 2e-3;
  c.patience = 4;
  c.gate_loss = false;
  c.seed = 77;
  const auto back = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_THROW(TrainConfig::from_json("{\"patience\": 0}"), TrainingError);
  EXPECT_THROW(TrainConfig::from_json("{\"learning_rat\": 1}"), TrainingError);
  EXPECT_THROW(TrainConfig::from_json("not json"), TrainingError);
}

TEST(ExtendFlows, OneToTwoKeepsLatentAndLogdet) {
  FlowModel<double> model(tiny_config(4, 1), 3);
  randomize(model, 21);
  auto utts = random_utterances(22, 3, 4);
  const auto batch = batch_of<double>(utts, {0, 1, 2});
  const auto before = model.forward(batch);
  const double nll_before = nll_loss(model, batch).nll;
  extend_flows(model, 2, 5);
  EXPECT_EQ(model.n_flows(), 2);
  EXPECT_EQ(model.config().n_flows, 2);
  const auto after = model.forward(batch);
  for (std::int64_t i = 0; i < before.z.numel(); ++i) EXPECT_NEAR(before.z.data()[static_cast<std::size_t>(i)], after.z.data()[static_cast<std::size_t>(i)], 1e-6);
  for (std::int64_t b = 0; b < 3; ++b) EXPECT_NEAR(before.logdet.data()[static_cast<std::size_t>(b)], after.logdet.data()[static_cast<std::size_t>(b)], 1e-6);
  EXPECT_NEAR(nll_loss(model, batch).nll, nll_before, 1e-6);
  EXPECT_THROW(extend_flows(model, 2), ModelError);
  EXPECT_THROW(extend_flows(model, 1), ModelError);
}

TEST(ExtendFlows, OneToThreeStillInverts) {
  FlowModel<double> model(tiny_config(4, 1), 3);
  randomize(model, 23);
  extend_flows(model, 3, 6);
  randomize(model, 24);  // move off the identity so every step matters
  Rng rng(25);
  const auto mel = random_mel(rng, 6, 4);
  const auto tokens = random_tokens(rng, 4, 1);
  const auto fwd = model.forward(testing::single_batch<double>(mel, tokens));
  InverseRequest<double> req;
  req.tokens = tokens;
  req.z.assign(fwd.z.data().begin(), fwd.z.data().end());
  const auto inv = model.inverse(req);
  for (std::size_t i = 0; i < mel.values.size(); ++i) EXPECT_NEAR(inv.x[i], mel.values[i], 1e-9);
}

TEST(AddSpeaker, ZeroIsNoOpAndNewRowsNearMean) {
  FlowModel<double> model(tiny_config(4, 1), 3);
  randomize(model, 31);
  const auto table = model.speakers.values();
  add_speaker(model, 0);
  EXPECT_EQ(model.speakers.values(), table);

  Rng rng(32);
  const auto mel = random_mel(rng, 5, 4);
  const auto tokens = random_tokens(rng, 3, 1);
  const auto z_before = model.forward(testing::single_batch<double>(mel, tokens)).z.values();
  add_speaker(model, 2, 7);
  EXPECT_EQ(model.config().n_speakers, 4);
  ASSERT_EQ(model.speakers.dim(0), 5);
  const auto s = model.config().speaker_dim;
  const auto& t = model.speakers.values();
  for (std::int64_t j = 0; j < s; ++j) {
    const double mean = 0.5 * (table[static_cast<std::size_t>(j)] + table[static_cast<std::size_t>(s + j)]);
    EXPECT_NEAR(t[static_cast<std::size_t>(2 * s + j)], mean, 1e-3);
    EXPECT_NEAR(t[static_cast<std::size_t>(3 * s + j)], mean, 1e-3);
    EXPECT_EQ(t[static_cast<std::size_t>(4 * s + j)], table[static_cast<std::size_t>(2 * s + j)]);  // dummy row kept
  }
  EXPECT_EQ(model.forward(testing::single_batch<double>(mel, tokens)).z.values(), z_before);
  auto new_tokens = tokens;
  new_tokens.speaker = 3;
  EXPECT_NO_THROW(model.forward(testing::single_batch<double>(mel, new_tokens)));

  auto cfg = tiny_config(4, 1);
  cfg.use_speaker = false;
  FlowModel<double> plain(cfg, 1);
  EXPECT_THROW(add_speaker(plain, 1), ModelError);
}

TEST(MixtureInit, SeparatesTwoUtteranceClusters) {
  auto cfg = tiny_config(3, 1);
  cfg.prior = PriorSpec{PriorKind::kMixture, 1.0, 2, MixtureMode::kFixed};
  FlowModel<double> model(cfg, 1);
  auto lo = random_utterances(40, 6, 3, -3.0), hi = random_utterances(41, 6, 3, 3.0);
  lo.insert(lo.end(), hi.begin(), hi.end());
  init_mixture_from_data(model, lo, 3);
  const auto mix = model.mixture();
  EXPECT_NEAR(std::abs(mix.mean(0, 0) - mix.mean(1, 0)), 6.0, 1.0);
  for (std::int64_t k = 0; k < 2; ++k) {
    EXPECT_NEAR(mix.variance(k, 0), 0.49, 0.3);
    EXPECT_GT(mix.weights[static_cast<std::size_t>(k)], 0.3);
  }
  FlowModel<double> spherical(tiny_config(3, 1), 1);
  EXPECT_THROW(init_mixture_from_data(spherical, lo), ModelError);
}

}  // namespace
}  // namespace arflow
