#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "advcast/net.hpp"
#include "support.hpp"

namespace advcast {
namespace {

using test::thrown_code;

TEST(MlpInit, ZeroOutputLayer) {
  const Mlp m = mlp_init(3, 4, 2, 0, true);
  EXPECT_EQ(m.w1.rows(), 4);
  EXPECT_EQ(m.w1.cols(), 3);
  EXPECT_EQ(m.w2.rows(), 2);
  EXPECT_TRUE(m.w2.isZero(0.0));
  EXPECT_TRUE(m.b2.isZero(0.0));
  EXPECT_EQ(m.param_count(), 3 * 4 + 4 + 4 * 2 + 2);
}

TEST(MlpInit, SeedDeterministicAndFanInScaled) {
  const Mlp a = mlp_init(200, 300, 5, 42, false);
  const Mlp b = mlp_init(200, 300, 5, 42, false);
  EXPECT_EQ(a.flat(), b.flat());
  EXPECT_NE(a.flat(), mlp_init(200, 300, 5, 43, false).flat());
  const double var = a.w1.squaredNorm() / static_cast<double>(a.w1.size());
  EXPECT_NEAR(var, 2.0 / 200.0, 0.05 * 2.0 / 200.0);
}

TEST(MlpInit, RejectsEmptyLayers) {
  EXPECT_EQ(thrown_code([] { mlp_init(0, 3, 1, 0, false); }), ErrorCode::InvalidParams);
}

TEST(MlpFlat, LayoutAndRoundTrip) {
  Mlp m = mlp_init(2, 3, 2, 1, false);
  const Vector flat = m.flat();
  EXPECT_EQ(flat(0), m.w1(0, 0));
  EXPECT_EQ(flat(1), m.w1(0, 1));
  EXPECT_EQ(flat(2), m.w1(1, 0));
  EXPECT_EQ(flat(6), m.b1(0));
  EXPECT_EQ(flat(9), m.w2(0, 0));
  EXPECT_EQ(flat(15), m.b2(0));
  Vector shifted = flat.array() + 1.0;
  m.set_flat(shifted);
  EXPECT_EQ(m.flat(), shifted);
  EXPECT_EQ(thrown_code([&] { m.set_flat(Vector::Zero(3)); }), ErrorCode::DimensionMismatch);
}

TEST(MlpForward, ZeroNetworkGivesZero) {
  Mlp m = mlp_init(3, 4, 2, 0, false);
  m.set_flat(Vector::Zero(m.param_count()));
  EXPECT_TRUE(mlp_forward(m, Vector::Constant(3, 5.0)).isZero(0.0));
}

TEST(MlpForward, ClampedHiddenUnitPassesBias) {
  Mlp m = mlp_init(1, 1, 1, 0, false);
  m.w1(0, 0) = 1;
  m.b1(0) = -2;
  m.w2(0, 0) = 7;
  m.b2(0) = 0.25;
  EXPECT_EQ(mlp_forward(m, Vector::Constant(1, 1.0))(0), 0.25);
}

TEST(MlpForward, RejectsWrongInputLength) {
  const Mlp m = mlp_init(3, 4, 2, 0, false);
  EXPECT_EQ(thrown_code([&] { mlp_forward(m, Vector::Zero(2)); }), ErrorCode::DimensionMismatch);
}

TEST(MlpBackward, ZeroUpstreamGivesZero) {
  const Mlp m = mlp_init(3, 4, 2, 0, false);
  ForwardCache cache;
  mlp_forward(m, Vector::Ones(3), &cache);
  const MlpGradients g = mlp_backward(m, cache, Vector::Zero(2));
  EXPECT_TRUE(g.params.isZero(0.0));
  EXPECT_TRUE(g.input.isZero(0.0));
}

TEST(MlpBackward, LinearRegimeInputGradient) {
  Mlp m = mlp_init(3, 4, 2, 3, false);
  m.b1 = Vector::Constant(4, 100.0);  // every hidden unit active
  ForwardCache cache;
  mlp_forward(m, Vector::Ones(3), &cache);
  const Vector dy = (Vector(2) << 0.5, -1.5).finished();
  const MlpGradients g = mlp_backward(m, cache, dy);
  const Vector expected = m.w1.transpose() * m.w2.transpose() * dy;
  EXPECT_LE((g.input - expected).norm(), 1e-12 * expected.norm());
}

TEST(MlpBackward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(17);
  int checked = 0;
  for (int trial = 0; checked < 50; ++trial) {
    const int in = 1 + trial % 5;
    const int hidden = 2 + trial % 7;
    const int out = 1 + trial % 3;
    Mlp m = mlp_init(in, hidden, out, static_cast<std::uint64_t>(trial), false);
    m.b2 = test::random_vector(out, rng);
    const Vector x = test::random_vector(in, rng);
    ForwardCache cache;
    const Vector y = mlp_forward(m, x, &cache);
    if (cache.hidden_preactivation.cwiseAbs().minCoeff() <= 1e-3) continue;
    ++checked;

    const MlpGradients g = mlp_backward(m, cache, y);  // L = 1/2 |y|^2
    const Vector theta = m.flat();
    auto loss_params = [&](const Vector& t) {
      Mlp copy = m;
      copy.set_flat(t);
      return 0.5 * mlp_forward(copy, x).squaredNorm();
    };
    auto loss_input = [&](const Vector& v) { return 0.5 * mlp_forward(m, v).squaredNorm(); };
    EXPECT_LE(test::rel_err(g.params, linalg::finite_diff_grad(loss_params, theta)), 1e-5);
    EXPECT_LE(test::rel_err(g.input, linalg::finite_diff_grad(loss_input, x)), 1e-5);
  }
}

TEST(MlpBackward, AccumulateAndInputOnlyAgree) {
  std::mt19937_64 rng(18);
  const Mlp m = mlp_init(6, 5, 3, 4, false);
  Vector acc = test::random_vector(m.param_count(), rng);
  const Vector start = acc;
  for (int i = 0; i < 3; ++i) {
    ForwardCache cache;
    mlp_forward(m, test::random_vector(6, rng), &cache);
    const Vector dy = test::random_vector(3, rng);
    const MlpGradients g = mlp_backward(m, cache, dy);
    Vector input;
    const Vector before = acc;
    mlp_backward_accumulate(m, cache, dy, acc, &input);
    EXPECT_LE((acc - before - g.params).norm(), 1e-12 * (1.0 + g.params.norm()));
    EXPECT_EQ(input, g.input);
    EXPECT_LE((mlp_input_grad(m, cache, dy) - g.input).norm(), 1e-12 * (1.0 + g.input.norm()));
  }
  Vector wrong = Vector::Zero(3);
  ForwardCache cache;
  mlp_forward(m, Vector::Zero(6), &cache);
  EXPECT_EQ(thrown_code([&] { mlp_backward_accumulate(m, cache, Vector::Zero(3), wrong, nullptr); }),
            ErrorCode::DimensionMismatch);
}

TEST(Adam, OneStepByHand) {
  Vector theta = Vector::Zero(1);
  AdamState s = AdamState::zeros(1, 0.1);
  adam_step(theta, Vector::Constant(1, 2.0), s, Direction::minimize);
  EXPECT_NEAR(theta(0), -0.1, 1e-9);
  EXPECT_EQ(s.step_count, 1);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Vector theta = (Vector(3) << 1, -2, 3).finished();
  const Vector before = theta;
  AdamState s = AdamState::zeros(3, 0.1);
  adam_step(theta, Vector::Zero(3), s, Direction::minimize);
  EXPECT_EQ(theta, before);
  EXPECT_EQ(s.step_count, 1);
}

TEST(Adam, MaximizeIsMinimizeOfNegatedGradient) {
  std::mt19937_64 rng(2);
  Vector a = test::random_vector(6, rng);
  Vector b = a;
  AdamState sa = AdamState::zeros(6, 1e-3);
  AdamState sb = sa;
  for (int step = 0; step < 5; ++step) {
    const Vector g = test::random_vector(6, rng);
    adam_step(a, g, sa, Direction::maximize);
    adam_step(b, -g, sb, Direction::minimize);
    ASSERT_EQ(a, b);
    ASSERT_EQ(sa.first_moment, sb.first_moment);
    ASSERT_EQ(sa.second_moment, sb.second_moment);
  }
}

TEST(Adam, Errors) {
  Vector theta = Vector::Zero(2);
  AdamState s = AdamState::zeros(2, 0.1);
  EXPECT_EQ(thrown_code([&] { adam_step(theta, Vector::Zero(3), s, Direction::minimize); }),
            ErrorCode::DimensionMismatch);
  Vector bad = Vector::Zero(2);
  bad(1) = std::numeric_limits<double>::infinity();
  EXPECT_EQ(thrown_code([&] { adam_step(theta, bad, s, Direction::minimize); }), ErrorCode::NonFiniteGradient);
}

TEST(MlpJson, ExactRoundTrip) {
  Mlp m = mlp_init(4, 5, 3, 8, false);
  m.b2 = Vector::Constant(3, 0.1);  // not exactly representable in binary
  const Mlp back = mlp_from_json(mlp_to_json(m));
  EXPECT_EQ(back.flat(), m.flat());
  EXPECT_EQ(back.hidden_dim(), 5);
  EXPECT_EQ(thrown_code([] { mlp_from_json(nlohmann::json::object()); }), ErrorCode::ParseError);
}

}  // namespace
}  // namespace advcast
