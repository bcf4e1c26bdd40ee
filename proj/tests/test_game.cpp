#include <gtest/gtest.h>

#include <random>

#include "advcast/game.hpp"
#include "support.hpp"

namespace advcast {
namespace {

using test::thrown_code;

MpcProblem scalar_mpc(int horizon, double u_bound = 50.0) {
  MpcProblem p;
  p.a = Matrix::Constant(1, 1, 1.0);
  p.b = Matrix::Constant(1, 1, -1.0);
  p.q = Matrix::Constant(1, 1, 1.0);
  p.r = Matrix::Constant(1, 1, 1.0);
  p.horizon = horizon;
  p.u_min = Vector::Constant(1, -u_bound);
  p.u_max = Vector::Constant(1, u_bound);
  p.x_min = Vector::Constant(1, -1e4);
  p.x_max = Vector::Constant(1, 1e4);
  return p;
}

Dataset toy_dataset(std::size_t n, int history, int horizon, std::uint64_t seed, double sigma = 0.05) {
  ArimaParams a;
  a.mu = 0.02;
  a.alpha = 0.8;
  a.beta = 0.3;
  a.sigma = sigma;
  a.H = history;
  a.F = horizon;
  a.T = history + horizon;
  return arima_generate(a, n, seed);
}

GamePipeline toy_pipeline(const Dataset& ds, double lambda_f, double lambda_a, std::uint64_t seed = 5) {
  PipelineConfig cfg;
  cfg.dims = {1, 1, ds.dims.history, ds.dims.horizon};
  cfg.forecaster_hidden = 6;
  cfg.adversary_hidden = 5;
  cfg.adversary_mask = {true};
  cfg.output_channels = {0};
  cfg.mpc = scalar_mpc(static_cast<int>(ds.dims.horizon));
  cfg.lambda_f = lambda_f;
  cfg.lambda_a = lambda_a;
  cfg.seed = seed;
  return make_pipeline(cfg, normalize_stats(ds));
}

void randomize_adversary(GamePipeline& p, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  p.adversary.set_flat(test::random_vector(p.adversary.param_count(), rng, scale));
}

TEST(Adversary, ZeroOutputLayerIsIdentity) {
  const Dataset ds = toy_dataset(4, 5, 3, 1);
  const GamePipeline p = toy_pipeline(ds, 1.0, 1.0);
  for (const Sample& s : ds.samples) EXPECT_EQ(adversary_perturb(p, s.s_h), s.s_h);
}

TEST(Adversary, UnmaskedChannelsCopiedVerbatim) {
  const Dataset ds = lane_change_generate(LaneChangeParams{}, 3, 2);
  PipelineConfig cfg;
  cfg.dims = {8, 4, ds.dims.history, ds.dims.horizon};
  cfg.forecaster_hidden = 4;
  cfg.adversary_hidden = 4;
  cfg.adversary_mask = {false, false, false, false, true, true, true, true};
  cfg.output_channels = {0, 1, 2, 3};
  cfg.mpc.a = Matrix::Identity(4, 4);
  cfg.mpc.b = Matrix::Zero(4, 2);
  cfg.mpc.b(2, 0) = cfg.mpc.b(3, 1) = 0.25;
  cfg.mpc.q = Matrix::Identity(4, 4);
  cfg.mpc.r = Matrix::Identity(2, 2);
  cfg.mpc.horizon = static_cast<int>(ds.dims.horizon);
  cfg.mpc.u_min = Vector::Constant(2, -10);
  cfg.mpc.u_max = Vector::Constant(2, 10);
  cfg.mpc.x_min = Vector::Constant(4, -1e4);
  cfg.mpc.x_max = Vector::Constant(4, 1e4);
  GamePipeline p = make_pipeline(cfg, normalize_stats(ds));
  randomize_adversary(p, 3, 0.5);
  for (const Sample& s : ds.samples) {
    const Matrix out = adversary_perturb(p, s.s_h);
    EXPECT_EQ(out.topRows(4), s.s_h.topRows(4));
    EXPECT_GT((out.bottomRows(4) - s.s_h.bottomRows(4)).norm(), 0.0);
  }
  EXPECT_EQ(thrown_code([&] { adversary_perturb(p, Matrix::Zero(8, 3)); }), ErrorCode::DimensionMismatch);
}

TEST(Forecast, ZeroNetworkGivesChannelMeans) {
  const Dataset ds = toy_dataset(10, 4, 3, 3);
  GamePipeline p = toy_pipeline(ds, 1.0, 1.0);
  p.forecaster.set_flat(Vector::Zero(p.forecaster.param_count()));
  const Matrix out = forecast(p, ds.samples[0].s_h);
  for (Eigen::Index t = 0; t < 3; ++t) EXPECT_DOUBLE_EQ(out(0, t), p.norm.mean(0));
}

TEST(Forecast, IdentityNormalizationMatchesNetwork) {
  const Dataset ds = toy_dataset(2, 3, 2, 4);
  GamePipeline p = toy_pipeline(ds, 1.0, 1.0);
  p.norm.mean = Vector::Zero(1);
  p.norm.std = Vector::Ones(1);
  const Matrix s = ds.samples[1].s_h;
  const Vector y = mlp_forward(p.forecaster, Eigen::Map<const Vector>(s.data(), 3));
  const Matrix out = forecast(p, s);
  EXPECT_DOUBLE_EQ(out(0, 0), y(0));
  EXPECT_DOUBLE_EQ(out(0, 1), y(1));
}

TEST(OverallCost, OneStepHandComputation) {
  Dataset ds;
  ds.dims = {1, 1, 1, 1, 1};
  ds.samples = {Sample{Matrix::Constant(1, 1, 0.3), Matrix::Constant(1, 1, 0.0), Vector::Constant(1, 1.0)}};
  PipelineConfig cfg;
  cfg.dims = {1, 1, 1, 1};
  cfg.forecaster_hidden = 2;
  cfg.adversary_hidden = 2;
  cfg.adversary_mask = {true};
  cfg.output_channels = {0};
  cfg.mpc = scalar_mpc(1);
  cfg.lambda_f = 2.0;
  cfg.lambda_a = 1.0;
  const GamePipeline p = make_pipeline(cfg, NormStats{Vector::Zero(1), Vector::Ones(1)});
  const Sample& s = ds.samples[0];
  const SampleEval e = score_forecast(p, s, s.s_h, Matrix::Constant(1, 1, 1.0));
  EXPECT_NEAR(e.u_hat(0, 0), 0.0, 1e-12);
  EXPECT_NEAR(e.u(0, 0), 0.5, 1e-12);
  EXPECT_NEAR(e.j_c_hat, 1.0, 1e-12);
  EXPECT_NEAR(e.j_c_star, 0.5, 1e-12);
  EXPECT_NEAR(e.j, 2.5, 1e-12);
}

TEST(OverallCost, PerfectForecastIsZero) {
  const Dataset ds = toy_dataset(20, 5, 4, 6, 0.2);
  const GamePipeline p = toy_pipeline(ds, 2.0, 2.0);
  for (const Sample& s : ds.samples) {
    const SampleEval e = score_forecast(p, s, s.s_h, s.s_f);
    ASSERT_EQ(e.j, 0.0);
  }
}

TEST(OverallCost, OnlyPenaltySurvivesWithPerfectForecast) {
  const Dataset ds = toy_dataset(5, 5, 4, 7);
  const GamePipeline p = toy_pipeline(ds, 2.0, 1.5);
  for (const Sample& s : ds.samples) {
    const Matrix s_adv = s.s_h.array() + 0.1;
    const SampleEval e = score_forecast(p, s, s_adv, s.s_f);
    EXPECT_DOUBLE_EQ(e.j, -1.5 * (s.s_h - s_adv).squaredNorm());
  }
}

TEST(OverallCost, DecompositionAndLambdaScaling) {
  const Dataset ds = toy_dataset(5, 5, 4, 8);
  GamePipeline p = toy_pipeline(ds, 2.0, 1.0);
  randomize_adversary(p, 9, 0.3);
  GamePipeline scaled = p;
  scaled.lambda_a = 3.0;
  for (const Sample& s : ds.samples) {
    const SampleEval e = overall_cost_sample(p, s, true);
    const SampleEval e3 = overall_cost_sample(scaled, s, true);
    EXPECT_EQ(e.j, e.j_c_hat - e.j_c_star + e.lambda_f_term - e.lambda_a_term);
    EXPECT_GT(e.perturbation_sq, 0.0);
    EXPECT_DOUBLE_EQ(e3.lambda_a_term, 3.0 * e.lambda_a_term);
    EXPECT_EQ(e3.lambda_f_term, e.lambda_f_term);
    const SampleEval clean = overall_cost_sample(p, s, false);
    EXPECT_EQ(clean.perturbation_sq, 0.0);
    EXPECT_EQ(clean.s_adv, s.s_h);
  }
}

TEST(BatchGradients, FlatObjectiveGivesZeroForecasterGradient) {
  // A = 1 and every target equal to x0: the optimal plan is zero whatever the
  // forecast, and with lambda_f = 0 nothing else depends on the forecaster.
  Dataset ds;
  ds.dims = {1, 1, 3, 2, 1};
  for (int i = 0; i < 3; ++i) {
    ds.samples.push_back(Sample{Matrix::Constant(1, 3, 1.0 + i), Matrix::Constant(1, 2, 1.0), Vector::Constant(1, 1.0)});
  }
  PipelineConfig cfg;
  cfg.dims = {1, 1, 3, 2};
  cfg.forecaster_hidden = 4;
  cfg.adversary_hidden = 3;
  cfg.adversary_mask = {true};
  cfg.output_channels = {0};
  cfg.mpc = scalar_mpc(2);
  cfg.mpc.b = Matrix::Zero(1, 1);
  cfg.lambda_f = 0.0;
  cfg.lambda_a = 0.0;
  const GamePipeline p = make_pipeline(cfg, normalize_stats(ds));
  const BatchResult r = batch_cost_and_grads(p, ds, Wrt::forecaster);
  EXPECT_LE(r.grad_f->norm(), 1e-12);
}

class GameFd : public ::testing::Test {
 protected:
  Dataset ds = toy_dataset(3, 4, 3, 10, 0.1);
  GamePipeline p = [this] {
    GamePipeline out = toy_pipeline(ds, 2.0, 2.0, 11);
    randomize_adversary(out, 12, 0.2);
    return out;
  }();

  double mean_j_f(const Vector& theta) const {
    GamePipeline q = p;
    q.forecaster.set_flat(theta);
    return batch_cost_and_grads(q, ds, Wrt::none).mean_j;
  }
  double mean_j_a(const Vector& theta) const {
    GamePipeline q = p;
    q.adversary.set_flat(theta);
    return batch_cost_and_grads(q, ds, Wrt::none).mean_j;
  }
};

TEST_F(GameFd, ForecasterGradientMatchesFiniteDifferences) {
  const BatchResult r = batch_cost_and_grads(p, ds, Wrt::forecaster);
  const Vector fd = linalg::finite_diff_grad([&](const Vector& t) { return mean_j_f(t); }, p.forecaster.flat(), 1e-6);
  EXPECT_LE(test::rel_err(*r.grad_f, fd), 1e-4);
}

TEST_F(GameFd, AdversaryGradientMatchesFiniteDifferences) {
  const BatchResult r = batch_cost_and_grads(p, ds, Wrt::adversary);
  const Vector fd = linalg::finite_diff_grad([&](const Vector& t) { return mean_j_a(t); }, p.adversary.flat(), 1e-6);
  EXPECT_LE(test::rel_err(*r.grad_a, fd), 1e-4);
}

TEST_F(GameFd, AscentStepIncreasesCost) {
  const BatchResult r = batch_cost_and_grads(p, ds, Wrt::adversary);
  const Vector step = p.adversary.flat() + 1e-4 * *r.grad_a;
  EXPECT_GT(mean_j_a(step), r.mean_j);
}

TEST_F(GameFd, BothPlayersSeeTheSameScalar) {
  const GameObjective objective(ds, p.controller);
  const double none = objective.evaluate(p, Wrt::none).mean_j;
  const BatchResult f = objective.evaluate(p, Wrt::forecaster);
  const BatchResult a = objective.evaluate(p, Wrt::adversary);
  const BatchResult both = objective.evaluate(p, Wrt::both);
  EXPECT_EQ(f.mean_j, none);
  EXPECT_EQ(a.mean_j, none);
  EXPECT_EQ(both.mean_j, none);
  EXPECT_EQ(*both.grad_f, *f.grad_f);
  EXPECT_EQ(*both.grad_a, *a.grad_a);
  EXPECT_FALSE(f.grad_a.has_value());
  EXPECT_FALSE(a.grad_f.has_value());
}

TEST(BatchGradients, WorkerCountDoesNotChangeBits) {
  const Dataset ds = toy_dataset(100, 5, 4, 13);
  GamePipeline p = toy_pipeline(ds, 2.0, 2.0);
  randomize_adversary(p, 14, 0.2);
  const BatchResult one = batch_cost_and_grads(p, ds, Wrt::both, 1);
  const BatchResult three = batch_cost_and_grads(p, ds, Wrt::both, 3);
  EXPECT_EQ(one.mean_j, three.mean_j);
  EXPECT_EQ(*one.grad_f, *three.grad_f);
  EXPECT_EQ(*one.grad_a, *three.grad_a);
}

TEST(Pretrain, ZeroEpochsLeavesForecaster) {
  const Dataset ds = toy_dataset(10, 4, 3, 15);
  const GamePipeline p = toy_pipeline(ds, 1.0, 1.0);
  const PretrainResult r = pretrain_forecaster(p, ds, 0, 1e-3);
  EXPECT_EQ(r.forecaster.flat(), p.forecaster.flat());
  EXPECT_TRUE(r.loss_curve.empty());
}

TEST(Pretrain, LossDecreasesOnArima) {
  const Dataset ds = toy_dataset(200, 10, 5, 16, 0.01);
  const GamePipeline p = toy_pipeline(ds, 1.0, 1.0);
  const PretrainResult r = pretrain_forecaster(p, ds, 100, 1e-3);
  ASSERT_EQ(r.loss_curve.size(), 100u);
  EXPECT_LT(r.loss_curve.back(), r.loss_curve.front());
}

TEST(Pretrain, FitsNoiselessLinearData) {
  Dataset ds;
  ds.dims = {1, 1, 5, 3, 1};
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> start(0.5, 1.5);
  for (int i = 0; i < 64; ++i) {
    ArimaParams a;
    a.mu = 0.0;
    a.alpha = 0.9;
    a.beta = 0.0;
    a.sigma = 0.0;
    a.s0 = start(rng);
    a.T = 8;
    const std::vector<double> series = arima_series(a, rng);
    Sample s{Matrix(1, 5), Matrix(1, 3), Vector::Constant(1, 1.0)};
    for (int t = 0; t < 5; ++t) s.s_h(0, t) = series[static_cast<std::size_t>(t)];
    for (int t = 0; t < 3; ++t) s.s_f(0, t) = series[static_cast<std::size_t>(5 + t)];
    ds.samples.push_back(s);
  }
  PipelineConfig cfg;
  cfg.dims = {1, 1, 5, 3};
  cfg.forecaster_hidden = 16;
  cfg.adversary_hidden = 2;
  cfg.adversary_mask = {true};
  cfg.output_channels = {0};
  cfg.mpc = scalar_mpc(3);
  cfg.seed = 18;
  const GamePipeline p = make_pipeline(cfg, normalize_stats(ds));
  const double before = forecast_mse_and_grad(p, ds).loss;
  GamePipeline trained = p;
  trained.forecaster = pretrain_forecaster(p, ds, 2000, 1e-3).forecaster;
  const double after = forecast_mse_and_grad(trained, ds).loss;
  EXPECT_LT(after, 1e-3);
  EXPECT_LT(after, before);
}

TEST(TrainRobust, ZeroRoundsReturnsInputs) {
  const Dataset ds = toy_dataset(5, 4, 3, 19);
  const GamePipeline p = toy_pipeline(ds, 1.0, 1.0);
  GameConfig cfg;
  cfg.max_rounds = 0;
  const RobustResult r = train_robust(p, ds, cfg);
  EXPECT_EQ(r.pipeline.forecaster.flat(), p.forecaster.flat());
  EXPECT_EQ(r.pipeline.adversary.flat(), p.adversary.flat());
  EXPECT_TRUE(r.history.rounds.empty());
}

TEST(TrainRobust, RejectsBadDecay) {
  const Dataset ds = toy_dataset(5, 4, 3, 19);
  const GamePipeline p = toy_pipeline(ds, 1.0, 1.0);
  GameConfig cfg;
  cfg.max_rounds = 2;
  cfg.lr_final_scale = 0.0;
  EXPECT_EQ(thrown_code([&] { train_robust(p, ds, cfg); }), ErrorCode::InvalidParams);
  cfg.lr_final_scale = 1.5;
  EXPECT_EQ(thrown_code([&] { train_robust(p, ds, cfg); }), ErrorCode::InvalidParams);
  cfg.lr_final_scale = 0.1;
  EXPECT_EQ(train_robust(p, ds, cfg).history.rounds.size(), 2u);
}

TEST(TrainRobust, DeterministicHistoryAndPerturbation) {
  const Dataset ds = toy_dataset(40, 6, 4, 20);
  GamePipeline p = toy_pipeline(ds, 2.0, 2.0);
  p.forecaster = pretrain_forecaster(p, ds, 200, 1e-2).forecaster;
  GameConfig cfg;
  cfg.max_rounds = 30;
  cfg.lr_a = 1e-3;
  const RobustResult a = train_robust(p, ds, cfg);
  cfg.workers = 2;
  const RobustResult b = train_robust(p, ds, cfg);
  ASSERT_EQ(a.history.rounds.size(), 30u);
  EXPECT_TRUE(a.history.round_cap_reached);
  EXPECT_EQ(history_to_csv(a.history), history_to_csv(b.history));
  EXPECT_EQ(a.pipeline.adversary.flat(), b.pipeline.adversary.flat());
  EXPECT_GT(a.history.rounds.back().mean_perturbation_norm, 0.0);
  EXPECT_TRUE(std::isfinite(a.history.rounds.back().mean_perturbation_norm));
  EXPECT_EQ(history_to_csv(a.history).substr(0, 60),
            std::string("round,mean_J,grad_f_norm,grad_a_norm,mean_perturbation_norm\n0,").substr(0, 60));
}

GameOracle quadratic_oracle(double sf, double sa) {
  return [sf, sa](const Vector& tf, const Vector& ta, Wrt) {
    GameGradient g;
    g.value = sf * tf.squaredNorm() + sa * ta.squaredNorm();
    g.grad_f = 2.0 * sf * tf;
    g.grad_a = 2.0 * sa * ta;
    return g;
  };
}

TEST(VerifyLne, CanonicalSaddle) {
  const LneReport r = verify_lne(quadratic_oracle(1.0, -1.0), Vector::Zero(1), Vector::Zero(1));
  EXPECT_TRUE(r.first_order_ok);
  EXPECT_TRUE(r.second_order_ok);
  EXPECT_NEAR(r.lambda_min_hff, 2.0, 1e-6);
  EXPECT_NEAR(r.lambda_max_haa, -2.0, 1e-6);
}

TEST(VerifyLne, ReversedCurvatureFails) {
  const LneReport r = verify_lne(quadratic_oracle(-1.0, 1.0), Vector::Zero(1), Vector::Zero(1));
  EXPECT_TRUE(r.first_order_ok);
  EXPECT_FALSE(r.second_order_ok);
}

TEST(VerifyLne, OffSaddleFailsFirstOrder) {
  const LneReport r = verify_lne(quadratic_oracle(1.0, -1.0), Vector::Constant(2, 0.5), Vector::Zero(3));
  EXPECT_FALSE(r.first_order_ok);
  EXPECT_TRUE(r.second_order_ok);
}

TEST(VerifyLne, PipelineOverloadEnforcesParameterCap) {
  const Dataset ds = toy_dataset(3, 4, 3, 21);
  const GamePipeline p = toy_pipeline(ds, 1.0, 1.0);
  LneOptions opts;
  opts.max_params = 10;
  EXPECT_EQ(thrown_code([&] { verify_lne(p, ds, opts); }), ErrorCode::InvalidParams);
  const LneReport r = verify_lne(p, ds);
  EXPECT_GT(r.tol_grad, 0.0);
  EXPECT_GE(r.tol_hess, 1e-2);
}

TEST(AdversarialTestset, LabelsPreservedAndTagged) {
  const Dataset ds = toy_dataset(6, 4, 3, 22);
  GamePipeline p = toy_pipeline(ds, 1.0, 1.0);
  Dataset adv = make_adversarial_testset(ds, p);
  EXPECT_EQ(adv.kind, Kind::adv);
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(adv.samples[i].s_h, ds.samples[i].s_h);

  randomize_adversary(p, 23, 0.3);
  adv = make_adversarial_testset(ds, p);
  double total = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(adv.samples[i].s_f, ds.samples[i].s_f);
    EXPECT_EQ(adv.samples[i].x0, ds.samples[i].x0);
    total += (adv.samples[i].s_h - ds.samples[i].s_h).norm();
  }
  EXPECT_GT(total, 0.0);
}

TEST(Checkpoint, PipelineRoundTrip) {
  const Dataset ds = toy_dataset(6, 4, 3, 24);
  GamePipeline p = toy_pipeline(ds, 2.0, 0.5);
  randomize_adversary(p, 25, 0.3);
  const nlohmann::json doc = nlohmann::json::parse(pipeline_to_json(p).dump());
  const GamePipeline back = pipeline_from_json(doc, p.controller);
  EXPECT_EQ(back.forecaster.flat(), p.forecaster.flat());
  EXPECT_EQ(back.adversary.flat(), p.adversary.flat());
  EXPECT_EQ(back.norm.mean, p.norm.mean);
  EXPECT_EQ(back.norm.std, p.norm.std);
  EXPECT_EQ(back.lambda_a, 0.5);
  EXPECT_EQ(batch_cost_and_grads(back, ds, Wrt::none).mean_j, batch_cost_and_grads(p, ds, Wrt::none).mean_j);
}

}  // namespace
}  // namespace advcast
