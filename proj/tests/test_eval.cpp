#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "advcast/eval.hpp"
#include "support.hpp"

namespace advcast {
namespace {

using test::thrown_code;

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

TEST(Wilcoxon, ThreeIncreasingDifferences) {
  const WilcoxonResult r = wilcoxon_signed_rank(vec({1, 2, 3}), Vector::Zero(3));
  EXPECT_EQ(r.w, 0.0);
  EXPECT_NEAR(r.p, 0.25, 1e-15);
  EXPECT_EQ(r.n_used, 3u);
}

TEST(Wilcoxon, SymmetricTie) {
  const WilcoxonResult r = wilcoxon_signed_rank(vec({5, -5}), Vector::Zero(2));
  EXPECT_EQ(r.w, 1.5);
  EXPECT_NEAR(r.p, 1.0, 1e-15);
}

TEST(Wilcoxon, Errors) {
  const Vector a = vec({1, 2, 3});
  EXPECT_EQ(thrown_code([&] { wilcoxon_signed_rank(a, a); }), ErrorCode::AllZeroDifferences);
  EXPECT_EQ(thrown_code([&] { wilcoxon_signed_rank(a, Vector::Zero(2)); }), ErrorCode::LengthMismatch);
  EXPECT_EQ(thrown_code([&] { wilcoxon_signed_rank(vec({1}), vec({0})); }), ErrorCode::LengthMismatch);
}

TEST(Wilcoxon, ZeroDifferencesAreDropped) {
  const WilcoxonResult r = wilcoxon_signed_rank(vec({1, 2, 3, 7}), vec({0, 0, 0, 7}));
  EXPECT_EQ(r.n_used, 3u);
  EXPECT_NEAR(r.p, 0.25, 1e-15);
}

TEST(Wilcoxon, ExactMatchesBruteForceUpToTen) {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> small(-4, 4);
  for (int n = 2; n <= 10; ++n) {
    for (int trial = 0; trial < 30; ++trial) {
      Vector d(n);
      // Integer differences produce plenty of ties and some zeros.
      for (int i = 0; i < n; ++i) d(i) = trial % 2 ? small(rng) : test::random_vector(1, rng)(0);
      if ((d.array() == 0.0).all()) continue;
      const WilcoxonResult r = wilcoxon_signed_rank(d, Vector::Zero(n), WilcoxonMethod::exact);
      ASSERT_NEAR(r.p, test::wilcoxon_brute_force_p(d), 1e-12) << "n=" << n << " trial=" << trial;
    }
  }
}

TEST(Wilcoxon, ExactAndNormalAgreeAtTwenty) {
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 50; ++trial) {
    const Vector a = test::random_vector(20, rng);
    const Vector b = test::random_vector(20, rng) + Vector::Constant(20, 0.3 * (trial % 3));
    const double exact = wilcoxon_signed_rank(a, b, WilcoxonMethod::exact).p;
    const double normal = wilcoxon_signed_rank(a, b, WilcoxonMethod::normal).p;
    EXPECT_NEAR(exact, normal, 0.02) << trial;
    EXPECT_EQ(wilcoxon_signed_rank(a, b).p, exact);
  }
}

TEST(Wilcoxon, LargeSampleUsesNormalApproximation) {
  std::mt19937_64 rng(33);
  const Vector a = test::random_vector(300, rng);
  const Vector b = a.array() + 0.5;
  const WilcoxonResult r = wilcoxon_signed_rank(a, b);
  EXPECT_EQ(r.w, 0.0);
  EXPECT_LT(r.p, 1e-40);
  EXPECT_GE(r.p, 0.0);
  EXPECT_EQ(r.p, wilcoxon_signed_rank(a, b, WilcoxonMethod::normal).p);
}

TEST(Improvement, Formula) {
  EXPECT_EQ(improvement_pct(10, 10), 0.0);
  EXPECT_EQ(improvement_pct(10, 5), 50.0);
  EXPECT_EQ(improvement_pct(4, 6), -50.0);
  for (double x : {0.3, 2.0, 17.5}) EXPECT_EQ(improvement_pct(x, x), 0.0);
  EXPECT_DOUBLE_EQ(improvement_pct(3.0, 1.2), 100.0 * (3.0 - 1.2) / 3.0);
  EXPECT_EQ(thrown_code([] { improvement_pct(0.0, 1.0); }), ErrorCode::NonPositiveBaseline);
  EXPECT_EQ(thrown_code([] { improvement_pct(-1.0, 1.0); }), ErrorCode::NonPositiveBaseline);
}

MpcProblem scalar_mpc(int horizon, double u_bound) {
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

Dataset arima_set(std::size_t n, std::uint64_t seed, double sigma) {
  ArimaParams a;
  a.sigma = sigma;
  a.H = 10;
  a.F = 6;
  a.T = 16;
  return arima_generate_mixed(a, ArimaPrior{}, n, seed);
}

TEST(Evaluate, OracleForecasterScoresZero) {
  const Controller ctl(scalar_mpc(6, 0.2));
  for (std::uint64_t seed : {1u, 2u}) {
    const Dataset ds = arima_set(40, seed, 0.3);
    const EvalResult r = evaluate_forecasts(ctl, ds, 2.0, [](const Sample& s) { return s.s_f; });
    EXPECT_LE(std::abs(r.mean_j), 1e-6);
    EXPECT_EQ(r.n, 40u);
  }
}

TEST(Evaluate, ControlGapIsNonNegative) {
  const Controller ctl(scalar_mpc(6, 0.3));
  const Dataset ds = arima_set(60, 3, 0.1);
  std::mt19937_64 rng(4);
  const std::vector<ForecastFn> forecasters = {
      [](const Sample& s) { return Matrix(s.s_f.array() + 0.5); },
      [](const Sample& s) { return Matrix::Constant(1, 6, s.s_h(0, 9)); },
      [&rng](const Sample& s) { return Matrix(s.s_f + test::random_matrix(1, 6, rng)); },
  };
  for (const ForecastFn& f : forecasters) {
    const EvalResult r = evaluate_forecasts(ctl, ds, 1.0, f);
    EXPECT_GE(r.mean_control_gap, -1e-8);
    EXPECT_NEAR(r.mean_j, r.per_sample_j.mean(), 1e-12 * std::max(1.0, std::abs(r.mean_j)));
    ASSERT_EQ(r.per_sample_j.size(), 60);
  }
  // Constant +0.5 offset: mse per entry is exactly 0.25.
  EXPECT_NEAR(evaluate_forecasts(ctl, ds, 1.0, forecasters[0]).mean_forecast_mse, 0.25, 1e-12);
}

ReportBundle sample_bundle() {
  ReportBundle b;
  b.experiment = "arima";
  b.config_hash = "0123456789abcdef";
  b.seed = 7;
  b.config = {{"seed", 7}};
  for (Scheme s : {Scheme::original, Scheme::robust}) {
    for (Kind k : {Kind::orig, Kind::ood}) {
      EvalResult r;
      r.scheme = s;
      r.condition = k;
      r.per_sample_j = vec({0.1, 1.0 / 3.0, 2.5});
      r.mean_j = r.per_sample_j.mean();
      r.mean_forecast_mse = 0.01;
      r.mean_control_gap = 0.2;
      r.n = 3;
      b.results.push_back(r);
    }
  }
  b.pairwise_tests.push_back({Scheme::original, Scheme::robust, "ood", 1.0, 0.5});
  b.improvements.push_back({Scheme::original, Kind::ood, 12.5});
  b.improvements.push_back({Scheme::original, Kind::orig, std::nullopt});
  LneReport lne;
  lne.grad_norm_f = 1e-4;
  lne.tol_grad = 1e-3;
  lne.first_order_ok = true;
  b.lne = lne;
  b.training = {{"robust", {{"rounds", 3}}}};
  return b;
}

TEST(Report, JsonRoundTrip) {
  const ReportBundle b = sample_bundle();
  const nlohmann::json doc = bundle_to_json(b);
  const ReportBundle back = bundle_from_json(nlohmann::json::parse(doc.dump()));
  EXPECT_EQ(bundle_to_json(back).dump(), doc.dump());
  ASSERT_NE(back.find(Scheme::robust, Kind::ood), nullptr);
  EXPECT_EQ(back.find(Scheme::robust, Kind::ood)->per_sample_j, b.results[3].per_sample_j);
  EXPECT_EQ(back.find(Scheme::data_added, Kind::ood), nullptr);
  ASSERT_NE(back.find_test(Scheme::original, Scheme::robust, "ood"), nullptr);
  EXPECT_FALSE(back.improvements[1].pct.has_value());
}

class ReportFiles : public ::testing::Test {
 protected:
  std::filesystem::path dir = std::filesystem::temp_directory_path() / "advcast_report_test";
  void TearDown() override { std::filesystem::remove_all(dir); }
  static std::vector<std::string> lines(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
  }
};

TEST_F(ReportFiles, EmptyBundleWritesHeadersOnly) {
  write_report(ReportBundle{}, dir.string());
  EXPECT_EQ(lines(dir / "costs.csv"),
            std::vector<std::string>{"scheme,condition,mean_J,mean_forecast_mse,mean_control_gap,n"});
  EXPECT_EQ(lines(dir / "tests.csv"), std::vector<std::string>{"scheme_a,scheme_b,condition,W,p"});
  EXPECT_EQ(lines(dir / "lne.csv").size(), 1u);
  EXPECT_NO_THROW(load_report((dir / "summary.json").string()));
}

TEST_F(ReportFiles, GridShapeAndReload) {
  const ReportBundle b = sample_bundle();
  write_report(b, dir.string());
  const auto costs = lines(dir / "costs.csv");
  ASSERT_EQ(costs.size(), 1u + 2u * 2u);
  for (const std::string& row : costs) EXPECT_EQ(std::count(row.begin(), row.end(), ','), 5);
  EXPECT_EQ(lines(dir / "tests.csv").size(), 2u);
  EXPECT_EQ(bundle_to_json(load_report((dir / "summary.json").string())).dump(), bundle_to_json(b).dump());
  EXPECT_EQ(thrown_code([&] { load_report((dir / "nope.json").string()); }), ErrorCode::MissingInput);
}

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.n_train = 24;
  c.n_test = 12;
  c.arima.H = 6;
  c.arima.F = 4;
  c.arima.T = 10;
  c.forecaster_hidden = 4;
  c.adversary_hidden = 4;
  c.pretrain_epochs = 5;
  c.game_rounds = 3;
  c.lne_enabled = false;
  c.seed = 3;
  return c;
}

TEST(Experiment, GridCoversConfiguredPairsAndIsReproducible) {
  const ExperimentConfig c = tiny_config();
  const ReportBundle a = run_experiment(c);
  EXPECT_EQ(a.results.size(), c.schemes.size() * c.conditions.size());
  for (Scheme s : c.schemes) {
    for (Kind k : c.conditions) {
      const EvalResult* r = a.find(s, k);
      ASSERT_NE(r, nullptr);
      EXPECT_EQ(r->n, 12u);
      EXPECT_GE(r->mean_control_gap, -1e-8);
    }
  }
  EXPECT_NE(a.find_test(Scheme::random, Scheme::robust, "ood"), nullptr);
  EXPECT_NE(a.find_test(Scheme::original, Scheme::original, "orig_vs_adv"), nullptr);
  EXPECT_FALSE(a.lne.has_value());

  ExperimentConfig c2 = c;
  c2.workers = 2;
  EXPECT_EQ(bundle_to_json(run_experiment(c2)).dump(), bundle_to_json(a).dump());
}

}  // namespace
}  // namespace advcast
