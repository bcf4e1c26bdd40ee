#pragma once

// Run configuration. The on-disk format is JSON with a schema version; any
// leaf may be written either bare or as {"value": ..., "source": "paper" |
// "default"} so presets can say where each number came from.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "advcast/data.hpp"
#include "advcast/mpc.hpp"

namespace advcast {

inline constexpr int kConfigSchemaVersion = 1;

enum class Experiment { arima, lane_change };
std::string to_string(Experiment e);

struct MpcBounds {
  double u_bound = 5.0;   // |u_i| <= u_bound
  double x_bound = 1e4;   // |x_i| <= x_bound
  double q_weight = 1.0;  // Q = q_weight I
  double r_weight = 1.0;  // R = r_weight I
};

struct ExperimentConfig {
  Experiment experiment = Experiment::arima;
  std::size_t n_train = 1000;
  std::size_t n_test = 300;

  ArimaParams arima;
  ArimaPrior arima_prior;
  double sigma_ood = 0.05;
  /// true: each series draws its own coefficients; false: one draw shared
  /// by train and test, a fresh one for the ood set.
  bool arima_per_series = true;

  LaneChangeParams lane;
  double speed_threshold = 35.0;

  double lambda_f = 2.0;
  double lambda_a = 2.0;
  Eigen::Index forecaster_hidden = 11;
  Eigen::Index adversary_hidden = 11;
  MpcBounds mpc;

  int pretrain_epochs = 500;
  double pretrain_lr = 1e-3;
  int baseline_epochs = 0;  // 0: pretrain_epochs + game_rounds
  int game_rounds = 1000;
  double game_lr_f = 1e-3;
  double game_lr_a = 1e-4;
  double game_lr_final_scale = 1.0;
  double rel_change_tol = 1e-5;
  int patience = 10;

  bool lne_enabled = true;
  double lne_fd_step = 1e-4;
  Eigen::Index lne_max_params = 600;

  std::vector<Scheme> schemes{Scheme::original, Scheme::data_added, Scheme::random, Scheme::robust};
  std::vector<Kind> conditions{Kind::orig, Kind::adv, Kind::ood};

  std::optional<std::string> train_path;
  std::optional<std::string> test_path;
  std::optional<std::string> ood_path;

  std::uint64_t seed = 1;
  int workers = 1;

  int effective_baseline_epochs() const { return baseline_epochs > 0 ? baseline_epochs : pretrain_epochs + game_rounds; }
};

/// Throws ConfigInvalid naming the offending path on any schema violation,
/// including unknown keys.
ExperimentConfig config_from_json(const nlohmann::json& doc);
ExperimentConfig load_config(const std::string& path);

/// Fully resolved configuration (bare values, sorted keys).
nlohmann::json config_to_json(const ExperimentConfig& config);

/// FNV-1a over the canonical resolved JSON.
std::string config_hash(const ExperimentConfig& config);

/// Problem the controller solves for this experiment.
MpcProblem experiment_mpc(const ExperimentConfig& config);

}  // namespace advcast
