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
#include <sstream>

#include "arflow/adam.hpp"
#include "arflow/ops.hpp"
#include "arflow/random.hpp"
#include "arflow/tensor_io.hpp"
#include "gradcheck.hpp"

namespace arflow {
namespace {

using testing::max_relative_error;
using testing::numerical_grad;

TensorD random_tensor(Rng& rng, Shape shape, double scale = 1.0, bool grad = true) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = scale * rng.normal();
  return TensorD(std::move(shape), std::move(v), grad);
}

std::vector<double> to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

TEST(Ops, AddElementwise) {
  auto c = add(TensorD::from({1, 2}), TensorD::from({3, 4}));
  EXPECT_EQ(c.values(), (std::vector<double>{4, 6}));
}

TEST(Ops, SigmoidAtZero) { EXPECT_DOUBLE_EQ(sigmoid(TensorD::scalar(0.0)).item(), 0.5); }

TEST(Ops, TanhDerivativeMatchesFiniteDifference) {
  auto x = TensorD::scalar(0.0, true);
  tanh(x).backward();
  const double h = 1e-5;
  const double fd = (std::tanh(h) - std::tanh(-h)) / (2 * h);
  EXPECT_NEAR(x.grad()[0], 1.0, 1e-12);
  EXPECT_NEAR(x.grad()[0], fd, 1e-6);
}

TEST(Ops, LeadingBatchBroadcast) {
  TensorD a({2, 3}, {1, 2, 3, 4, 5, 6});
  auto c = add(a, TensorD::from({10, 20, 30}));
  EXPECT_EQ(c.values(), (std::vector<double>{11, 22, 33, 14, 25, 36}));
}

TEST(Ops, ShapeMismatchNamesOpAndShapes) {
  try {
    add(TensorD::from({1, 2}), TensorD::from({1, 2, 3}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("add"), std::string::npos);
    EXPECT_NE(msg.find("[2]"), std::string::npos);
    EXPECT_NE(msg.find("[3]"), std::string::npos);
  }
  EXPECT_THROW(matmul(TensorD({2, 3}), TensorD({2, 3})), ShapeError);
  // Leading (not trailing) broadcast is rejected.
  EXPECT_THROW(add(TensorD({2, 3}), TensorD({2})), ShapeError);
}

TEST(Backward, SumOfSquares) {
  auto x = TensorD::from({1, 2, 3}, true);
  sum(square(x)).backward();
  EXPECT_EQ(to_vec(x.grad()), (std::vector<double>{2, 4, 6}));
}

TEST(Backward, ConstantLossGivesZeroGrad) {
  auto x = TensorD::from({1, 2, 3}, true);
  auto c = TensorD::from({5, 5, 5});
  auto loss = add(sum(c), sum(scale(x, 0.0)));
  loss.backward();
  EXPECT_EQ(to_vec(x.grad()), (std::vector<double>{0, 0, 0}));
}

TEST(Backward, NonScalarLossThrows) {
  auto x = TensorD::from({1, 2}, true);
  EXPECT_THROW(square(x).backward(), ShapeError);
}

TEST(Backward, RepeatedCallsAccumulate) {
  auto x = TensorD::from({1, 2, 3}, true);
  auto loss = sum(square(x));
  loss.backward();
  loss.backward();
  EXPECT_EQ(to_vec(x.grad()), (std::vector<double>{4, 8, 12}));
}

TEST(Backward, NoGradGuardSkipsGraph) {
  auto x = TensorD::from({1, 2}, true);
  NoGradGuard guard;
  auto y = square(x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Backward, RandomThreeLayerCompositionMatchesFiniteDifferences) {
  Rng rng(11);
  auto x = random_tensor(rng, {4, 5}, 1.0, false);
  auto w1 = random_tensor(rng, {5, 6}, 0.5);
  auto w2 = random_tensor(rng, {6, 6}, 0.5);
  auto w3 = random_tensor(rng, {6, 3}, 0.5);
  auto b1 = random_tensor(rng, {6}, 0.1);
  auto f = [&] {
    auto h1 = tanh(add(matmul(x, w1), b1));
    auto h2 = sigmoid(matmul(h1, w2));
    auto out = log_softmax(matmul(h2, w3));
    return sum(mul(out, out));
  };
  f().backward();
  for (TensorD* p : {&w1, &w2, &w3, &b1}) {
    auto numeric = numerical_grad(*p, [&] { return f().item(); });
    EXPECT_LT(max_relative_error(to_vec(p->grad()), numeric), 1e-4);
  }
}

// Every differentiable op against central differences on randomized shapes
// up to 4x8x8.
class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
  Rng rng(1000 + GetParam());
  const std::int64_t b = 1 + static_cast<std::int64_t>(rng.below(4));
  const std::int64_t t = 1 + static_cast<std::int64_t>(rng.below(8));
  const std::int64_t c = 1 + static_cast<std::int64_t>(rng.below(8));
  auto a = random_tensor(rng, {b, t, c});
  auto pos = TensorD({b, t, c}, std::vector<double>(static_cast<std::size_t>(b * t * c)), true);
  for (auto& v : pos.mutable_data()) v = 0.5 + rng.uniform();
  auto bias = random_tensor(rng, {c});
  auto w = random_tensor(rng, {c, 3}, 0.7);
  auto weights = random_tensor(rng, {b, t, c}, 1.0, false);
  std::vector<std::int64_t> lengths(static_cast<std::size_t>(b));
  for (auto& l : lengths) l = 1 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(t)));

  using Fn = std::function<TensorD()>;
  auto weighted = [&](const TensorD& y) {
    // Random projection so every output element matters.
    Rng r2(7);
    std::vector<double> coef(static_cast<std::size_t>(y.numel()));
    for (auto& v : coef) v = r2.normal();
    return sum(mul(y, TensorD(y.shape(), coef)));
  };
  std::vector<std::pair<std::string, Fn>> cases = {
      {"add", [&] { return weighted(add(a, bias)); }},
      {"sub", [&] { return weighted(sub(a, pos)); }},
      {"mul", [&] { return weighted(mul(a, pos)); }},
      {"div", [&] { return weighted(div(a, pos)); }},
      {"exp", [&] { return weighted(exp(scale(a, 0.5))); }},
      {"log", [&] { return weighted(log(pos)); }},
      {"tanh", [&] { return weighted(tanh(a)); }},
      {"sigmoid", [&] { return weighted(sigmoid(a)); }},
      {"softplus", [&] { return weighted(softplus(a)); }},
      {"square", [&] { return weighted(square(a)); }},
      {"matmul", [&] { return weighted(matmul(a, w)); }},
      {"sum_axis", [&] { return weighted(sum_axis(a, 1)); }},
      {"mean_axis", [&] { return weighted(mean_axis(a, 2)); }},
      {"var_axis", [&] { return weighted(var_axis(a, 1)); }},
      {"softmax", [&] { return weighted(softmax(a)); }},
      {"log_softmax", [&] { return weighted(log_softmax(a)); }},
      {"logsumexp", [&] { return weighted(logsumexp(a)); }},
      {"concat", [&] { return weighted(concat<double>({a, pos}, 2)); }},
      {"slice", [&] { return weighted(slice(a, 1, 0, (t + 1) / 2)); }},
      {"reverse", [&] { return weighted(reverse(a, 1)); }},
      {"reverse_time", [&] { return weighted(reverse_time(a, lengths)); }},
      {"shift_time", [&] { return weighted(shift_time(a)); }},
      {"reshape", [&] { return weighted(reshape(a, {b * t, c})); }},
      {"transpose", [&] { return weighted(transpose(reshape(a, {b * t, c}))); }},
      {"transpose3", [&] { return weighted(transpose(a)); }},
      {"bmm", [&] { return weighted(bmm(a, reshape(transpose(reshape(pos, {b * t, c})), {b, c, t}))); }},
      {"instance_norm", [&] { return weighted(instance_norm(reshape(a, {b * t, c}))); }},
      {"unfold_time", [&] { return weighted(unfold_time(reshape(a, {b * t, c}), 3)); }},
      {"bce_with_logits", [&] {
         std::vector<double> tg(static_cast<std::size_t>(a.numel())), wt(tg.size(), 0.7);
         for (std::size_t i = 0; i < tg.size(); ++i) tg[i] = i % 3 == 0 ? 1.0 : 0.0;
         return bce_with_logits(a, std::span<const double>(tg), std::span<const double>(wt));
       }},
  };
  for (auto& [name, fn] : cases) {
    for (TensorD* p : {&a, &pos, &bias, &w}) p->zero_grad();
    fn().backward();
    for (TensorD* p : {&a, &pos, &bias, &w}) {
      auto analytic = to_vec(p->grad());
      auto numeric = numerical_grad(*p, [&] { return fn().item(); });
      EXPECT_LT(max_relative_error(analytic, numeric), 1e-4) << name;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Randomized, OpGradient, ::testing::Range(0, 6));

TEST(FusedOps, LstmSequenceGradients) {
  Rng rng(5);
  const int b = 2, t = 5, h = 3;
  auto xp = random_tensor(rng, {b, t, 4 * h}, 0.8);
  auto whh = random_tensor(rng, {h, 4 * h}, 0.6);
  Rng r2(9);
  std::vector<double> coef(b * t * h);
  for (auto& v : coef) v = r2.normal();
  auto f = [&] { return sum(mul(lstm_sequence(xp, whh), TensorD({b, t, h}, coef))); };
  f().backward();
  for (TensorD* p : {&xp, &whh}) {
    EXPECT_LT(max_relative_error(to_vec(p->grad()), numerical_grad(*p, [&] { return f().item(); })), 1e-4);
  }
}

TEST(FusedOps, AttentionGradientsAndSimplex) {
  Rng rng(6);
  const int b = 2, t = 3, l = 4, a = 5;
  auto q = random_tensor(rng, {b, t, a});
  auto k = random_tensor(rng, {b, l, a});
  auto v = random_tensor(rng, {a});
  std::vector<std::int64_t> lens = {4, 2};
  std::vector<double> prior(b * t * l);
  for (auto& p : prior) p = -std::abs(rng.normal());
  auto w = additive_attention(q, k, v, lens, &prior);
  for (int r = 0; r < b * t; ++r) {
    double total = 0;
    for (int i = 0; i < l; ++i) total += w.data()[r * l + i];
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
  EXPECT_EQ(w.at({1, 0, 3}), 0.0);
  Rng r2(3);
  std::vector<double> coef(b * t * l);
  for (auto& c : coef) c = r2.normal();
  auto f = [&] { return sum(mul(additive_attention(q, k, v, lens, &prior), TensorD({b, t, l}, coef))); };
  f().backward();
  for (TensorD* p : {&q, &k, &v}) {
    EXPECT_LT(max_relative_error(to_vec(p->grad()), numerical_grad(*p, [&] { return f().item(); })), 1e-4);
  }
}

TEST(Invariants, ReverseIsAnInvolution) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto t = 1 + static_cast<std::int64_t>(rng.below(8));
    auto a = random_tensor(rng, {3, t, 4}, 1.0, false);
    for (int axis = 0; axis < 3; ++axis) EXPECT_EQ(reverse(reverse(a, axis), axis).values(), a.values());
    std::vector<std::int64_t> lens = {t, 1, (t + 1) / 2};
    EXPECT_EQ(reverse_time(reverse_time(a, lens), lens).values(), a.values());
  }
}

TEST(Invariants, SoftmaxRowsSumToOne) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = random_tensor(rng, {5, 1 + static_cast<std::int64_t>(rng.below(12))}, 10.0, false);
    auto s = softmax(a);
    const auto n = s.dim(1);
    for (int r = 0; r < 5; ++r) {
      double total = 0;
      for (std::int64_t i = 0; i < n; ++i) total += s.data()[r * n + i];
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(Adam, FirstStepMovesAgainstGradient) {
  auto w = TensorD::from({1.0, -2.0, 0.5}, true);
  Adam<double> opt({{"w", w}}, AdamOptions{.learning_rate = 0.01, .weight_decay = 0.0});
  sum(mul(w, TensorD::from({3.0, -0.2, 0.0}))).backward();
  opt.step();
  // Bias-corrected first step has magnitude ~lr in the direction of -sign(g).
  EXPECT_NEAR(w.data()[0], 1.0 - 0.01, 1e-6);
  EXPECT_NEAR(w.data()[1], -2.0 + 0.01, 1e-6);
  EXPECT_DOUBLE_EQ(w.data()[2], 0.5);
  EXPECT_EQ(opt.step_count(), 1);
}

TEST(Adam, ZeroGradientAndNoDecayLeavesParams) {
  auto w = TensorD::from({1.0, 2.0}, true);
  Adam<double> opt({{"w", w}}, AdamOptions{.learning_rate = 0.1, .weight_decay = 0.0});
  w.zero_grad();
  for (int i = 0; i < 5; ++i) opt.step();
  EXPECT_EQ(w.values(), (std::vector<double>{1.0, 2.0}));
}

TEST(Adam, ConvergesOnScalarQuadratic) {
  auto w = TensorD::from({0.0}, true);
  Adam<double> opt({{"w", w}}, AdamOptions{.learning_rate = 0.1, .weight_decay = 0.0});
  for (int i = 0; i < 100; ++i) {
    opt.zero_grad();
    sum(square(add_scalar(w, -3.0))).backward();
    opt.step();
  }
  EXPECT_LT(std::abs(w.data()[0] - 3.0), 0.05);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  auto w = TensorD::from({1.0}, true);
  Adam<double> opt({{"decoder.weight", w}}, AdamOptions{});
  w.mutable_grad()[0] = NAN;
  try {
    opt.step();
    FAIL();
  } catch (const NonFiniteGradient& e) {
    EXPECT_NE(std::string(e.what()).find("decoder.weight"), std::string::npos);
  }
  EXPECT_EQ(w.data()[0], 1.0);
}

TEST(TensorIo, RoundTripPreservesShapeAndValues) {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    Shape shape;
    const int rank = static_cast<int>(rng.below(4));
    for (int i = 0; i < rank; ++i) shape.push_back(static_cast<std::int64_t>(rng.below(5)));
    auto t = random_tensor(rng, shape, 3.0, false);
    std::stringstream ss;
    write_tensor(ss, t.cast<float>());
    write_tensor(ss, t);
    auto f = read_tensor<float>(ss);
    auto d = read_tensor<double>(ss);
    EXPECT_EQ(f.shape(), t.shape());
    EXPECT_EQ(d.values(), t.values());
    for (std::int64_t i = 0; i < t.numel(); ++i) EXPECT_EQ(f.data()[i], static_cast<float>(t.data()[i]));
  }
}

TEST(TensorIo, LittleEndianLayout) {
  std::stringstream ss;
  write_tensor(ss, TensorF({2}, {1.0f, -2.0f}));
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), 4u + 8u + 1u + 8u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[0]), 1u);  // rank
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 2u);  // dim 0
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 1u);  // dtype f32
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 0x3fu);  // 1.0f = 0x3f800000
}

TEST(TensorIo, TruncatedRecordThrows) {
  std::stringstream ss;
  write_tensor(ss, TensorD({3}, {1, 2, 3}));
  std::string s = ss.str();
  std::stringstream cut(s.substr(0, s.size() - 4));
  EXPECT_THROW(read_tensor<double>(cut), FormatError);
}

}  // namespace
}  // namespace arflow
