#pragma once

// The forecaster/adversary zero-sum game played through the MPC controller.
//
//   s_adv = s_H + delta(s_H; theta_a)             (masked channels only)
//   s_hat = f(s_adv; theta_f)
//   u_hat = pi(x0, s_hat),  u = pi(x0, s_F)
//   J     = J^C(u_hat; x0, s_F) - J^C(u; x0, s_F)
//           + lambda_f |s_F - s_hat|^2 - lambda_a |s_H - s_adv|^2
//
// The forecaster minimizes the dataset mean of J, the adversary maximizes it.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "advcast/data.hpp"
#include "advcast/mpc.hpp"
#include "advcast/net.hpp"

namespace advcast {

struct GameDims {
  Eigen::Index p_in = 1;
  Eigen::Index p_out = 1;
  Eigen::Index history = 1;
  Eigen::Index horizon = 1;
};

struct GamePipeline {
  Mlp forecaster;
  Mlp adversary;
  std::vector<bool> adversary_mask;            // per input channel
  std::vector<Eigen::Index> output_channels;   // input channel that scales output row k
  NormStats norm;
  std::shared_ptr<const Controller> controller;
  double lambda_f = 0.0;
  double lambda_a = 0.0;
  GameDims dims;

  const MpcProblem& mpc() const { return controller->problem(); }
  std::vector<Eigen::Index> masked_channels() const;
  void validate() const;
};

struct PipelineConfig {
  GameDims dims;
  Eigen::Index forecaster_hidden = 64;
  Eigen::Index adversary_hidden = 64;
  std::vector<bool> adversary_mask;
  std::vector<Eigen::Index> output_channels;
  MpcProblem mpc;
  double lambda_f = 1.0;
  double lambda_a = 1.0;
  std::uint64_t seed = 0;
};

/// Fresh forecaster (random init) and zero-output adversary.
GamePipeline make_pipeline(const PipelineConfig& config, const NormStats& norm);

/// Masked rows get the adversary's de-normalized residual; other rows are
/// copied verbatim.
Matrix adversary_perturb(const GamePipeline& pipeline, const Matrix& s_h);

/// Normalize, flatten, run the forecaster, reshape to p_out x F, de-normalize.
Matrix forecast(const GamePipeline& pipeline, const Matrix& s_in);

struct SampleEval {
  Matrix s_adv;
  Matrix s_hat_f;
  Matrix u_hat;
  Matrix u;
  double j_c_hat = 0.0;
  double j_c_star = 0.0;
  double forecast_error_sq = 0.0;  // |s_F - s_hat|^2
  double perturbation_sq = 0.0;    // |s_H - s_adv|^2
  double lambda_f_term = 0.0;
  double lambda_a_term = 0.0;      // lambda_a * perturbation_sq (subtracted)
  double j = 0.0;
};

/// J for given perturbed history and forecast (both controls are solved).
SampleEval score_forecast(const GamePipeline& pipeline, const Sample& sample, const Matrix& s_adv,
                          const Matrix& s_hat_f);

SampleEval overall_cost_sample(const GamePipeline& pipeline, const Sample& sample, bool use_adversary);

enum class Wrt { none, forecaster, adversary, both };

struct BatchResult {
  double mean_j = 0.0;
  double mean_perturbation_norm = 0.0;
  std::optional<Vector> grad_f;
  std::optional<Vector> grad_a;
};

/// Full-batch objective over a fixed dataset. Caches the oracle control cost
/// J^C(u; x0, s_F) per sample since it does not depend on either player.
/// The dataset must outlive the objective.
class GameObjective {
 public:
  GameObjective(const Dataset& dataset, std::shared_ptr<const Controller> controller, int workers = 1);

  BatchResult evaluate(const GamePipeline& pipeline, Wrt wrt, bool use_adversary = true) const;
  const Dataset& dataset() const { return *dataset_; }

 private:
  const Dataset* dataset_;
  std::shared_ptr<const Controller> controller_;
  std::vector<double> oracle_cost_;
  int workers_;
};

BatchResult batch_cost_and_grads(const GamePipeline& pipeline, const Dataset& dataset, Wrt wrt,
                                 int workers = 1);

struct MseResult {
  double loss = 0.0;
  Vector grad_f;
};

/// Mean over samples of |f(s_H) - s_F|^2 with clean histories, and its
/// gradient in the forecaster parameters.
MseResult forecast_mse_and_grad(const GamePipeline& pipeline, const Dataset& dataset, int workers = 1);

struct PretrainResult {
  Mlp forecaster;
  std::vector<double> loss_curve;  // loss before each epoch's step
};

PretrainResult pretrain_forecaster(const GamePipeline& pipeline, const Dataset& dataset, int epochs,
                                   double lr, int workers = 1);

struct GameConfig {
  int max_rounds = 2000;
  double lr_f = 1e-3;
  double lr_a = 1e-4;
  /// Both learning rates decay geometrically to this fraction of their
  /// start value by the last round; 1 keeps them constant.
  double lr_final_scale = 1.0;
  double rel_change_tol = 1e-5;
  int patience = 10;
  /// Absolute gradient tolerance; default 1e-3 (1 + |mean J|).
  std::optional<double> tol_grad;
  int workers = 1;
};

struct RoundRecord {
  int round = 0;
  double mean_j = 0.0;
  double grad_f_norm = 0.0;
  double grad_a_norm = 0.0;
  double mean_perturbation_norm = 0.0;
  double wall_seconds = 0.0;
};

struct TrainHistory {
  std::vector<RoundRecord> rounds;
  bool converged = false;
  bool round_cap_reached = false;
  int best_round = -1;
};

struct RobustResult {
  GamePipeline pipeline;
  TrainHistory history;
};

double default_tol_grad(double mean_j);

/// Alternating full-batch Adam: forecaster descent step, then adversary
/// ascent step evaluated with the updated forecaster. Stops when the mean J
/// has changed by less than rel_change_tol for `patience` consecutive rounds
/// and both gradient norms are under tol_grad; otherwise returns the round
/// with the smallest gradient norms once max_rounds is reached.
RobustResult train_robust(const GamePipeline& pipeline, const Dataset& dataset, const GameConfig& config);

/// CSV: round,mean_J,grad_f_norm,grad_a_norm,mean_perturbation_norm
std::string history_to_csv(const TrainHistory& history);

// ------------------------------------------------------ local Nash check

struct LneReport {
  double grad_norm_f = 0.0;
  double grad_norm_a = 0.0;
  double lambda_min_hff = 0.0;
  double lambda_max_hff = 0.0;
  double lambda_min_haa = 0.0;
  double lambda_max_haa = 0.0;
  double tol_grad = 0.0;
  double tol_hess = 0.0;
  double mean_j = 0.0;
  bool first_order_ok = false;
  bool second_order_ok = false;
};

struct GameGradient {
  double value = 0.0;
  Vector grad_f;
  Vector grad_a;
};

/// Objective and gradients at (theta_f, theta_a). Only the requested
/// gradients need to be filled.
using GameOracle = std::function<GameGradient(const Vector& theta_f, const Vector& theta_a, Wrt wrt)>;

struct LneOptions {
  std::optional<double> tol_grad;  // default 1e-3 (1 + |J|)
  std::optional<double> tol_hess;  // default 1e-2 max(1, |H|_F)
  double fd_step = 1e-4;
  Eigen::Index max_params = 600;
  int workers = 1;
};

/// First-order check on both gradients, second-order check on the block
/// Hessians (forecaster block PSD, adversary block NSD) built by central
/// differences of the gradients and symmetrized.
LneReport verify_lne(const GameOracle& oracle, const Vector& theta_f, const Vector& theta_a,
                     const LneOptions& options = {});

/// Same check on the pipeline's game over `dataset`. Throws InvalidParams if
/// either player has more than options.max_params parameters.
LneReport verify_lne(const GamePipeline& pipeline, const Dataset& dataset, const LneOptions& options = {});

/// The dataset with every history replaced by adversary_perturb(s_H).
Dataset make_adversarial_testset(const Dataset& test, const GamePipeline& pipeline);

nlohmann::json pipeline_to_json(const GamePipeline& pipeline);
/// Restores networks, mask, channel map, normalization and weights; the
/// controller must be supplied by the caller.
GamePipeline pipeline_from_json(const nlohmann::json& doc, std::shared_ptr<const Controller> controller);

}  // namespace advcast
