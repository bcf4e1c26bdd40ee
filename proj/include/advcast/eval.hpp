#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "advcast/config.hpp"
#include "advcast/data.hpp"
#include "advcast/game.hpp"

namespace advcast {

struct EvalResult {
  Kind condition = Kind::orig;
  Scheme scheme = Scheme::original;
  Vector per_sample_j;
  double mean_j = 0.0;
  double mean_forecast_mse = 0.0;  // per-entry squared error, averaged
  double mean_control_gap = 0.0;   // J^C(u_hat) - J^C(u)
  std::size_t n = 0;
};

using ForecastFn = std::function<Matrix(const Sample&)>;

/// Scores arbitrary forecasts: per sample
///   J = J^C(u_hat; x0, s_F) - J^C(u; x0, s_F) + lambda_f |s_F - s_hat|^2
/// using the stored history. No live adversary term.
EvalResult evaluate_forecasts(const Controller& controller, const Dataset& dataset, double lambda_f,
                              const ForecastFn& forecaster, int workers = 1);

/// evaluate_forecasts with the pipeline's forecaster on each stored history.
/// `condition` is taken from the dataset kind.
EvalResult evaluate(const GamePipeline& pipeline, const Dataset& dataset, double lambda_f, int workers = 1);

enum class WilcoxonMethod { automatic, exact, normal };

struct WilcoxonResult {
  double w = 0.0;
  double p = 1.0;
  std::size_t n_used = 0;  // nonzero differences
};

/// Two-sided paired signed-rank test on a - b. Zero differences are dropped,
/// tied magnitudes share average ranks, W = min(W+, W-). `automatic` is
/// exact for up to 20 nonzero differences and the tie-corrected normal
/// approximation (continuity 0.5) beyond.
WilcoxonResult wilcoxon_signed_rank(const Vector& a, const Vector& b,
                                    WilcoxonMethod method = WilcoxonMethod::automatic);

double improvement_pct(double baseline_mean, double ours_mean);

struct PairwiseTest {
  Scheme scheme_a = Scheme::original;
  Scheme scheme_b = Scheme::original;
  std::string condition;  // a condition name, or "orig_vs_adv" for a scheme against itself
  double w = 0.0;
  double p = 1.0;
};

struct Improvement {
  Scheme baseline = Scheme::original;
  Kind condition = Kind::orig;
  std::optional<double> pct;  // empty when the baseline mean is not positive
};

struct ReportBundle {
  std::string experiment;
  std::string config_hash;
  std::uint64_t seed = 0;
  nlohmann::json config;
  std::vector<EvalResult> results;
  std::vector<PairwiseTest> pairwise_tests;
  std::vector<Improvement> improvements;
  std::optional<LneReport> lne;
  std::string lne_note;
  nlohmann::json training;  // round counts, convergence verdicts, final losses

  const EvalResult* find(Scheme scheme, Kind condition) const;
  const PairwiseTest* find_test(Scheme a, Scheme b, const std::string& condition) const;
};

nlohmann::json bundle_to_json(const ReportBundle& bundle);
ReportBundle bundle_from_json(const nlohmann::json& doc);

struct ExperimentArtifacts {
  ReportBundle bundle;
  std::optional<GamePipeline> robust;
  TrainHistory robust_history;
};

/// Generates (or loads) the datasets, trains every configured scheme,
/// builds the adversarial test set from the robust adversary, evaluates the
/// scheme x condition grid, runs the paired tests and the local Nash check.
ExperimentArtifacts run_experiment_full(const ExperimentConfig& config);
ReportBundle run_experiment(const ExperimentConfig& config);

struct ExperimentData {
  Dataset train;
  Dataset test;
  Dataset ood;
  SampleGenerator train_generator;
};

ExperimentData make_experiment_data(const ExperimentConfig& config);

/// summary.json, costs.csv, tests.csv, lne.csv under out_dir.
void write_report(const ReportBundle& bundle, const std::string& out_dir);
ReportBundle load_report(const std::string& summary_path);

std::string costs_csv(const ReportBundle& bundle);
std::string tests_csv(const ReportBundle& bundle);
std::string lne_csv(const ReportBundle& bundle);

}  // namespace advcast
