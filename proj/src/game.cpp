#include "advcast/game.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "advcast/errors.hpp"
#include "advcast/util.hpp"

namespace advcast {

namespace {

// Samples are reduced in fixed-size blocks so the summation order, and hence
// every bit of the result, is independent of the worker count.
constexpr std::size_t kReduceBlock = 32;

bool wants_f(Wrt w) { return w == Wrt::forecaster || w == Wrt::both; }
bool wants_a(Wrt w) { return w == Wrt::adversary || w == Wrt::both; }

Vector normalized_flat(const GamePipeline& p, const Matrix& s) {
  const Eigen::Index h = p.dims.history;
  Vector x(p.dims.p_in * h);
  for (Eigen::Index c = 0; c < p.dims.p_in; ++c) {
    for (Eigen::Index t = 0; t < h; ++t) x(c * h + t) = (s(c, t) - p.norm.mean(c)) / p.norm.std(c);
  }
  return x;
}

Vector adversary_input(const GamePipeline& p, const Matrix& s_h, const std::vector<Eigen::Index>& masked) {
  const Eigen::Index h = p.dims.history;
  Vector x(static_cast<Eigen::Index>(masked.size()) * h);
  for (std::size_t k = 0; k < masked.size(); ++k) {
    const Eigen::Index c = masked[k];
    for (Eigen::Index t = 0; t < h; ++t) {
      x(static_cast<Eigen::Index>(k) * h + t) = (s_h(c, t) - p.norm.mean(c)) / p.norm.std(c);
    }
  }
  return x;
}

// delta_raw (k x H) from the adversary's normalized output.
Matrix raw_perturbation(const GamePipeline& p, const Vector& y, const std::vector<Eigen::Index>& masked) {
  const Eigen::Index h = p.dims.history;
  Matrix d(static_cast<Eigen::Index>(masked.size()), h);
  for (std::size_t k = 0; k < masked.size(); ++k) {
    const double scale = p.norm.std(masked[k]);
    for (Eigen::Index t = 0; t < h; ++t) d(static_cast<Eigen::Index>(k), t) = y(static_cast<Eigen::Index>(k) * h + t) * scale;
  }
  return d;
}

Matrix forecast_from_output(const GamePipeline& p, const Vector& y) {
  const Eigen::Index f = p.dims.horizon;
  Matrix s(p.dims.p_out, f);
  for (Eigen::Index k = 0; k < p.dims.p_out; ++k) {
    const Eigen::Index c = p.output_channels[static_cast<std::size_t>(k)];
    for (Eigen::Index t = 0; t < f; ++t) s(k, t) = y(k * f + t) * p.norm.std(c) + p.norm.mean(c);
  }
  return s;
}

void check_sample(const GamePipeline& p, const Sample& s) {
  if (s.s_h.rows() != p.dims.p_in || s.s_h.cols() != p.dims.history || s.s_f.rows() != p.dims.p_out ||
      s.s_f.cols() != p.dims.horizon || s.x0.size() != p.mpc().state_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "sample does not match pipeline dimensions");
  }
}

struct Accumulator {
  double j = 0.0;
  double perturbation_norm = 0.0;
  Vector grad_f;
  Vector grad_a;

  void init(const GamePipeline& p, Wrt wrt) {
    if (wants_f(wrt)) grad_f = Vector::Zero(p.forecaster.param_count());
    if (wants_a(wrt)) grad_a = Vector::Zero(p.adversary.param_count());
  }
  void add(const Accumulator& o) {
    j += o.j;
    perturbation_norm += o.perturbation_norm;
    if (grad_f.size() > 0) grad_f += o.grad_f;
    if (grad_a.size() > 0) grad_a += o.grad_a;
  }
};

// Adds one sample's J and gradients into `acc`.
void accumulate_game_sample(const GamePipeline& p, const std::vector<Eigen::Index>& masked, const Sample& s,
                            double oracle_cost, Wrt wrt, bool use_adversary, Accumulator& acc) {
  const Controller& ctl = *p.controller;
  const Eigen::Index h = p.dims.history;

  ForwardCache cache_a;
  Matrix delta;
  Matrix s_adv = s.s_h;
  if (use_adversary) {
    const Vector ya = mlp_forward(p.adversary, adversary_input(p, s.s_h, masked), &cache_a);
    delta = raw_perturbation(p, ya, masked);
    for (std::size_t k = 0; k < masked.size(); ++k) s_adv.row(masked[k]) += delta.row(static_cast<Eigen::Index>(k));
  }

  ForwardCache cache_f;
  const Vector yf = mlp_forward(p.forecaster, normalized_flat(p, s_adv), &cache_f);
  const Matrix s_hat = forecast_from_output(p, yf);

  const MpcSolution sol = ctl.solve(s.x0, s_hat);
  const double jc_hat = ctl.control_cost(s.x0, sol.u, s.s_f);
  const Matrix err = s_hat - s.s_f;
  const double pert_sq = use_adversary ? delta.squaredNorm() : 0.0;
  const double j = jc_hat - oracle_cost + p.lambda_f * err.squaredNorm() - p.lambda_a * pert_sq;
  if (!std::isfinite(j)) throw Error(ErrorCode::NonFiniteEvaluation, "overall cost is not finite");
  acc.j += j;
  acc.perturbation_norm += std::sqrt(pert_sq);
  if (wrt == Wrt::none) return;

  const Matrix dj_du = ctl.control_cost_grad_u(s.x0, sol.u, s.s_f);
  const Matrix dj_dshat = ctl.vjp(sol, dj_du) + 2.0 * p.lambda_f * err;

  const Eigen::Index f = p.dims.horizon;
  Vector dj_dy(p.dims.p_out * f);
  for (Eigen::Index k = 0; k < p.dims.p_out; ++k) {
    const double scale = p.norm.std(p.output_channels[static_cast<std::size_t>(k)]);
    for (Eigen::Index t = 0; t < f; ++t) dj_dy(k * f + t) = dj_dshat(k, t) * scale;
  }
  const bool need_a = wants_a(wrt) && use_adversary;
  Vector dj_dinput;
  if (wants_f(wrt)) {
    mlp_backward_accumulate(p.forecaster, cache_f, dj_dy, acc.grad_f, need_a ? &dj_dinput : nullptr);
  } else if (need_a) {
    dj_dinput = mlp_input_grad(p.forecaster, cache_f, dj_dy);
  }
  if (!need_a) return;

  Vector dj_ddn(static_cast<Eigen::Index>(masked.size()) * h);
  for (std::size_t k = 0; k < masked.size(); ++k) {
    const Eigen::Index c = masked[k];
    const Eigen::Index row = static_cast<Eigen::Index>(k);
    const double sd = p.norm.std(c);
    for (Eigen::Index t = 0; t < h; ++t) {
      const double dj_dsadv = dj_dinput(c * h + t) / sd;
      const double dj_ddelta = dj_dsadv - 2.0 * p.lambda_a * delta(row, t);
      dj_ddn(row * h + t) = dj_ddelta * sd;
    }
  }
  mlp_backward_accumulate(p.adversary, cache_a, dj_ddn, acc.grad_a, nullptr);
}

void accumulate_mse_sample(const GamePipeline& p, const Sample& s, Accumulator& acc) {
  ForwardCache cache;
  const Vector y = mlp_forward(p.forecaster, normalized_flat(p, s.s_h), &cache);
  const Matrix err = forecast_from_output(p, y) - s.s_f;
  acc.j += err.squaredNorm();
  const Eigen::Index f = p.dims.horizon;
  Vector dl_dy(p.dims.p_out * f);
  for (Eigen::Index k = 0; k < p.dims.p_out; ++k) {
    const double scale = p.norm.std(p.output_channels[static_cast<std::size_t>(k)]);
    for (Eigen::Index t = 0; t < f; ++t) dl_dy(k * f + t) = 2.0 * err(k, t) * scale;
  }
  mlp_backward_accumulate(p.forecaster, cache, dl_dy, acc.grad_f, nullptr);
}

Accumulator reduce_blocks(std::size_t n, int workers, const GamePipeline& p, Wrt wrt,
                          const std::function<void(std::size_t, Accumulator&)>& per_sample) {
  const std::size_t blocks = (n + kReduceBlock - 1) / kReduceBlock;
  std::vector<Accumulator> partial(blocks);
  parallel_for(blocks, workers, [&](std::size_t b) {
    Accumulator& acc = partial[b];
    acc.init(p, wrt);
    const std::size_t end = std::min(n, (b + 1) * kReduceBlock);
    for (std::size_t i = b * kReduceBlock; i < end; ++i) per_sample(i, acc);
  });
  Accumulator total;
  total.init(p, wrt);
  for (const Accumulator& a : partial) total.add(a);
  return total;
}

void check_gradient(const Vector& g, const char* who) {
  if (!all_finite(g)) throw Error(ErrorCode::NonFiniteGradient, std::string(who) + " gradient is not finite");
}

}  // namespace

std::vector<Eigen::Index> GamePipeline::masked_channels() const {
  std::vector<Eigen::Index> out;
  for (std::size_t c = 0; c < adversary_mask.size(); ++c) {
    if (adversary_mask[c]) out.push_back(static_cast<Eigen::Index>(c));
  }
  return out;
}

void GamePipeline::validate() const {
  if (!controller) throw Error(ErrorCode::InvalidParams, "pipeline has no controller");
  if (dims.p_in < 1 || dims.p_out < 1 || dims.history < 1 || dims.horizon < 1) {
    throw Error(ErrorCode::InvalidParams, "pipeline dimensions must be >= 1");
  }
  if (dims.horizon != mpc().horizon || dims.p_out != mpc().state_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "forecast shape must be state_dim x mpc horizon");
  }
  if (static_cast<Eigen::Index>(adversary_mask.size()) != dims.p_in) {
    throw Error(ErrorCode::DimensionMismatch, "adversary mask length != p_in");
  }
  const auto masked = masked_channels();
  if (masked.empty()) throw Error(ErrorCode::InvalidParams, "adversary mask selects no channel");
  if (static_cast<Eigen::Index>(output_channels.size()) != dims.p_out) {
    throw Error(ErrorCode::DimensionMismatch, "output channel map length != p_out");
  }
  for (Eigen::Index c : output_channels) {
    if (c < 0 || c >= dims.p_in) throw Error(ErrorCode::InvalidParams, "output channel out of range");
  }
  if (norm.mean.size() != dims.p_in || norm.std.size() != dims.p_in) {
    throw Error(ErrorCode::DimensionMismatch, "normalization stats length != p_in");
  }
  if ((norm.std.array() <= 0.0).any()) throw Error(ErrorCode::InvalidParams, "normalization std must be > 0");
  const Eigen::Index k = static_cast<Eigen::Index>(masked.size());
  if (forecaster.in_dim() != dims.p_in * dims.history || forecaster.out_dim() != dims.p_out * dims.horizon) {
    throw Error(ErrorCode::DimensionMismatch, "forecaster dimensions do not match the pipeline");
  }
  if (adversary.in_dim() != k * dims.history || adversary.out_dim() != k * dims.history) {
    throw Error(ErrorCode::DimensionMismatch, "adversary dimensions do not match the mask");
  }
  if (lambda_f < 0.0 || lambda_a < 0.0) throw Error(ErrorCode::InvalidParams, "lambda weights must be >= 0");
}

GamePipeline make_pipeline(const PipelineConfig& config, const NormStats& norm) {
  GamePipeline p;
  p.dims = config.dims;
  p.adversary_mask = config.adversary_mask;
  p.output_channels = config.output_channels;
  p.norm = norm;
  p.lambda_f = config.lambda_f;
  p.lambda_a = config.lambda_a;
  p.controller = std::make_shared<const Controller>(config.mpc);
  const Eigen::Index k = static_cast<Eigen::Index>(std::count(p.adversary_mask.begin(), p.adversary_mask.end(), true));
  p.forecaster = mlp_init(p.dims.p_in * p.dims.history, config.forecaster_hidden, p.dims.p_out * p.dims.horizon,
                          config.seed, false);
  p.adversary = mlp_init(std::max<Eigen::Index>(k, 1) * p.dims.history, config.adversary_hidden,
                         std::max<Eigen::Index>(k, 1) * p.dims.history, config.seed + 1, true);
  p.validate();
  return p;
}

Matrix adversary_perturb(const GamePipeline& pipeline, const Matrix& s_h) {
  if (s_h.rows() != pipeline.dims.p_in || s_h.cols() != pipeline.dims.history) {
    throw Error(ErrorCode::DimensionMismatch, "adversary_perturb: history shape mismatch");
  }
  const auto masked = pipeline.masked_channels();
  const Matrix delta = raw_perturbation(pipeline, mlp_forward(pipeline.adversary, adversary_input(pipeline, s_h, masked)), masked);
  Matrix out = s_h;
  for (std::size_t k = 0; k < masked.size(); ++k) out.row(masked[k]) += delta.row(static_cast<Eigen::Index>(k));
  return out;
}

Matrix forecast(const GamePipeline& pipeline, const Matrix& s_in) {
  if (s_in.rows() != pipeline.dims.p_in || s_in.cols() != pipeline.dims.history) {
    throw Error(ErrorCode::DimensionMismatch, "forecast: history shape mismatch");
  }
  return forecast_from_output(pipeline, mlp_forward(pipeline.forecaster, normalized_flat(pipeline, s_in)));
}

SampleEval score_forecast(const GamePipeline& pipeline, const Sample& sample, const Matrix& s_adv,
                          const Matrix& s_hat_f) {
  check_sample(pipeline, sample);
  const Controller& ctl = *pipeline.controller;
  SampleEval e;
  e.s_adv = s_adv;
  e.s_hat_f = s_hat_f;
  e.u_hat = ctl.solve(sample.x0, s_hat_f).u;
  e.u = ctl.solve(sample.x0, sample.s_f).u;
  e.j_c_hat = ctl.control_cost(sample.x0, e.u_hat, sample.s_f);
  e.j_c_star = ctl.control_cost(sample.x0, e.u, sample.s_f);
  e.forecast_error_sq = (sample.s_f - s_hat_f).squaredNorm();
  e.perturbation_sq = (sample.s_h - s_adv).squaredNorm();
  e.lambda_f_term = pipeline.lambda_f * e.forecast_error_sq;
  e.lambda_a_term = pipeline.lambda_a * e.perturbation_sq;
  e.j = e.j_c_hat - e.j_c_star + e.lambda_f_term - e.lambda_a_term;
  return e;
}

SampleEval overall_cost_sample(const GamePipeline& pipeline, const Sample& sample, bool use_adversary) {
  check_sample(pipeline, sample);
  const Matrix s_adv = use_adversary ? adversary_perturb(pipeline, sample.s_h) : sample.s_h;
  return score_forecast(pipeline, sample, s_adv, forecast(pipeline, s_adv));
}

GameObjective::GameObjective(const Dataset& dataset, std::shared_ptr<const Controller> controller, int workers)
    : dataset_(&dataset), controller_(std::move(controller)), workers_(workers) {
  if (dataset.size() == 0) throw Error(ErrorCode::EmptyDataset, "game objective needs at least one sample");
  if (!controller_) throw Error(ErrorCode::InvalidParams, "game objective needs a controller");
  oracle_cost_.resize(dataset.size());
  parallel_for(dataset.size(), workers_, [&](std::size_t i) {
    const Sample& s = dataset.samples[i];
    const MpcSolution sol = controller_->solve(s.x0, s.s_f);
    oracle_cost_[i] = controller_->control_cost(s.x0, sol.u, s.s_f);
  });
}

BatchResult GameObjective::evaluate(const GamePipeline& pipeline, Wrt wrt, bool use_adversary) const {
  if (pipeline.controller.get() != controller_.get()) {
    throw Error(ErrorCode::InvalidParams, "pipeline controller differs from the objective's controller");
  }
  pipeline.validate();
  const auto masked = pipeline.masked_channels();
  for (const Sample& s : dataset_->samples) check_sample(pipeline, s);
  const Accumulator total = reduce_blocks(dataset_->size(), workers_, pipeline, wrt, [&](std::size_t i, Accumulator& acc) {
    accumulate_game_sample(pipeline, masked, dataset_->samples[i], oracle_cost_[i], wrt, use_adversary, acc);
  });
  const double n = static_cast<double>(dataset_->size());
  BatchResult r;
  r.mean_j = total.j / n;
  r.mean_perturbation_norm = total.perturbation_norm / n;
  if (wants_f(wrt)) {
    r.grad_f = total.grad_f / n;
    check_gradient(*r.grad_f, "forecaster");
  }
  if (wants_a(wrt)) {
    r.grad_a = use_adversary ? Vector(total.grad_a / n) : Vector::Zero(pipeline.adversary.param_count());
    check_gradient(*r.grad_a, "adversary");
  }
  return r;
}

BatchResult batch_cost_and_grads(const GamePipeline& pipeline, const Dataset& dataset, Wrt wrt, int workers) {
  return GameObjective(dataset, pipeline.controller, workers).evaluate(pipeline, wrt);
}

MseResult forecast_mse_and_grad(const GamePipeline& pipeline, const Dataset& dataset, int workers) {
  if (dataset.size() == 0) throw Error(ErrorCode::EmptyDataset, "forecast mse needs at least one sample");
  pipeline.validate();
  for (const Sample& s : dataset.samples) check_sample(pipeline, s);
  const Accumulator total = reduce_blocks(dataset.size(), workers, pipeline, Wrt::forecaster,
                                          [&](std::size_t i, Accumulator& acc) {
                                            accumulate_mse_sample(pipeline, dataset.samples[i], acc);
                                          });
  const double n = static_cast<double>(dataset.size());
  MseResult r{total.j / n, total.grad_f / n};
  check_gradient(r.grad_f, "forecaster");
  return r;
}

PretrainResult pretrain_forecaster(const GamePipeline& pipeline, const Dataset& dataset, int epochs, double lr,
                                   int workers) {
  if (epochs < 0) throw Error(ErrorCode::InvalidParams, "epochs must be >= 0");
  if (!(lr > 0.0)) throw Error(ErrorCode::InvalidParams, "learning rate must be > 0");
  GamePipeline p = pipeline;
  Vector theta = p.forecaster.flat();
  AdamState adam = AdamState::zeros(theta.size(), lr);
  PretrainResult out;
  out.loss_curve.reserve(static_cast<std::size_t>(epochs));
  for (int e = 0; e < epochs; ++e) {
    const MseResult m = forecast_mse_and_grad(p, dataset, workers);
    out.loss_curve.push_back(m.loss);
    adam_step(theta, m.grad_f, adam, Direction::minimize);
    p.forecaster.set_flat(theta);
  }
  out.forecaster = p.forecaster;
  return out;
}

double default_tol_grad(double mean_j) { return 1e-3 * (1.0 + std::abs(mean_j)); }

RobustResult train_robust(const GamePipeline& pipeline, const Dataset& dataset, const GameConfig& config) {
  if (config.max_rounds < 0) throw Error(ErrorCode::InvalidParams, "max_rounds must be >= 0");
  if (!(config.lr_final_scale > 0.0 && config.lr_final_scale <= 1.0)) {
    throw Error(ErrorCode::InvalidParams, "lr_final_scale must be in (0, 1]");
  }
  RobustResult result{pipeline, {}};
  if (config.max_rounds == 0) return result;

  const GameObjective objective(dataset, pipeline.controller, config.workers);
  GamePipeline p = pipeline;
  Vector theta_f = p.forecaster.flat();
  Vector theta_a = p.adversary.flat();
  AdamState adam_f = AdamState::zeros(theta_f.size(), config.lr_f);
  AdamState adam_a = AdamState::zeros(theta_a.size(), config.lr_a);

  double best_score = std::numeric_limits<double>::infinity();
  GamePipeline best = p;
  int stable = 0;
  double previous_j = 0.0;

  for (int round = 0; round < config.max_rounds; ++round) {
    const auto start = std::chrono::steady_clock::now();
    // Both gradients at the same point; this is where convergence is judged.
    const BatchResult at_round = objective.evaluate(p, Wrt::both);
    const double tol = config.tol_grad.value_or(default_tol_grad(at_round.mean_j));
    RoundRecord rec;
    rec.round = round;
    rec.mean_j = at_round.mean_j;
    rec.grad_f_norm = at_round.grad_f->norm();
    rec.grad_a_norm = at_round.grad_a->norm();
    rec.mean_perturbation_norm = at_round.mean_perturbation_norm;

    const double score = std::max(rec.grad_f_norm, rec.grad_a_norm) / tol;
    if (score < best_score) {
      best_score = score;
      best = p;
      result.history.best_round = round;
    }
    if (round > 0) {
      const double rel = std::abs(rec.mean_j - previous_j) / std::max(std::abs(previous_j), 1e-12);
      stable = rel < config.rel_change_tol ? stable + 1 : 0;
    }
    previous_j = rec.mean_j;
    if (stable >= config.patience && rec.grad_f_norm < tol && rec.grad_a_norm < tol) {
      rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      result.history.rounds.push_back(rec);
      result.history.converged = true;
      result.history.best_round = round;
      result.pipeline = p;
      return result;
    }

    const double decay =
        config.max_rounds > 1 ? std::pow(config.lr_final_scale, static_cast<double>(round) / (config.max_rounds - 1)) : 1.0;
    adam_f.lr = config.lr_f * decay;
    adam_a.lr = config.lr_a * decay;
    adam_step(theta_f, *at_round.grad_f, adam_f, Direction::minimize);
    p.forecaster.set_flat(theta_f);
    // The adversary responds to the forecaster it will face next.
    const BatchResult after_f = objective.evaluate(p, Wrt::adversary);
    adam_step(theta_a, *after_f.grad_a, adam_a, Direction::maximize);
    p.adversary.set_flat(theta_a);

    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.rounds.push_back(rec);
    if (log_level() >= LogLevel::debug && round % 50 == 0) {
      std::ostringstream msg;
      msg << "round " << round << " J=" << rec.mean_j << " |gf|=" << rec.grad_f_norm << " |ga|=" << rec.grad_a_norm
          << " tol=" << tol;
      log(LogLevel::debug, msg.str());
    }
  }

  result.history.round_cap_reached = true;
  result.pipeline = best;
  log(LogLevel::info, "round cap reached after " + std::to_string(config.max_rounds) +
                          " rounds; returning round " + std::to_string(result.history.best_round));
  return result;
}

std::string history_to_csv(const TrainHistory& history) {
  std::string out = "round,mean_J,grad_f_norm,grad_a_norm,mean_perturbation_norm\n";
  for (const RoundRecord& r : history.rounds) {
    out += std::to_string(r.round) + "," + format_decimal(r.mean_j) + "," + format_decimal(r.grad_f_norm) + "," +
           format_decimal(r.grad_a_norm) + "," + format_decimal(r.mean_perturbation_norm) + "\n";
  }
  return out;
}

// ------------------------------------------------------ local Nash check

namespace {

Matrix fd_hessian(const std::function<Vector(const Vector&)>& grad, const Vector& theta, double step) {
  const Eigen::Index n = theta.size();
  Matrix hess(n, n);
  Vector probe = theta;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double h = step * std::max(1.0, std::abs(theta(i)));
    probe(i) = theta(i) + h;
    const Vector gp = grad(probe);
    probe(i) = theta(i) - h;
    const Vector gm = grad(probe);
    probe(i) = theta(i);
    if (gp.size() != n || gm.size() != n) {
      throw Error(ErrorCode::DimensionMismatch, "oracle gradient length differs from parameter count");
    }
    hess.col(i) = (gp - gm) / (2.0 * h);
  }
  if (!all_finite(hess)) throw Error(ErrorCode::NonFiniteGradient, "finite-difference Hessian is not finite");
  return 0.5 * (hess + hess.transpose());
}

}  // namespace

LneReport verify_lne(const GameOracle& oracle, const Vector& theta_f, const Vector& theta_a,
                     const LneOptions& options) {
  if (!(options.fd_step > 0.0)) throw Error(ErrorCode::InvalidParams, "fd_step must be > 0");
  const GameGradient at = oracle(theta_f, theta_a, Wrt::both);
  if (!std::isfinite(at.value)) throw Error(ErrorCode::NonFiniteEvaluation, "game value is not finite");
  if (!all_finite(at.grad_f) || !all_finite(at.grad_a)) {
    throw Error(ErrorCode::NonFiniteGradient, "game gradient is not finite");
  }

  const Matrix hff = fd_hessian([&](const Vector& tf) { return oracle(tf, theta_a, Wrt::forecaster).grad_f; },
                                theta_f, options.fd_step);
  const Matrix haa = fd_hessian([&](const Vector& ta) { return oracle(theta_f, ta, Wrt::adversary).grad_a; },
                                theta_a, options.fd_step);
  const linalg::EigenExtremes ef = linalg::sym_eig_extremes(hff);
  const linalg::EigenExtremes ea = linalg::sym_eig_extremes(haa);

  LneReport r;
  r.mean_j = at.value;
  r.grad_norm_f = at.grad_f.norm();
  r.grad_norm_a = at.grad_a.norm();
  r.lambda_min_hff = ef.lambda_min;
  r.lambda_max_hff = ef.lambda_max;
  r.lambda_min_haa = ea.lambda_min;
  r.lambda_max_haa = ea.lambda_max;
  r.tol_grad = options.tol_grad.value_or(default_tol_grad(at.value));
  r.tol_hess = options.tol_hess.value_or(1e-2 * std::max({1.0, hff.norm(), haa.norm()}));
  r.first_order_ok = r.grad_norm_f <= r.tol_grad && r.grad_norm_a <= r.tol_grad;
  r.second_order_ok = r.lambda_min_hff >= -r.tol_hess && r.lambda_max_haa <= r.tol_hess;
  return r;
}

LneReport verify_lne(const GamePipeline& pipeline, const Dataset& dataset, const LneOptions& options) {
  pipeline.validate();
  if (pipeline.forecaster.param_count() > options.max_params || pipeline.adversary.param_count() > options.max_params) {
    throw Error(ErrorCode::InvalidParams,
                "dense-Hessian check is capped at " + std::to_string(options.max_params) + " parameters per player (have " +
                    std::to_string(pipeline.forecaster.param_count()) + " and " +
                    std::to_string(pipeline.adversary.param_count()) + ")");
  }
  const GameObjective objective(dataset, pipeline.controller, options.workers);
  const GameOracle oracle = [&](const Vector& tf, const Vector& ta, Wrt wrt) {
    GamePipeline p = pipeline;
    p.forecaster.set_flat(tf);
    p.adversary.set_flat(ta);
    const BatchResult b = objective.evaluate(p, wrt);
    GameGradient g;
    g.value = b.mean_j;
    if (b.grad_f) g.grad_f = *b.grad_f;
    if (b.grad_a) g.grad_a = *b.grad_a;
    return g;
  };
  return verify_lne(oracle, pipeline.forecaster.flat(), pipeline.adversary.flat(), options);
}

Dataset make_adversarial_testset(const Dataset& test, const GamePipeline& pipeline) {
  Dataset out = test;
  out.kind = Kind::adv;
  for (Sample& s : out.samples) s.s_h = adversary_perturb(pipeline, s.s_h);
  return out;
}

// ------------------------------------------------------------ checkpoint

namespace {

nlohmann::json vector_json(const Vector& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(format_decimal(v(i)));
  return a;
}

Vector vector_from_json(const nlohmann::json& a, const char* what) {
  if (!a.is_array()) throw Error(ErrorCode::ParseError, std::string(what) + " must be an array");
  Vector v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    v(static_cast<Eigen::Index>(i)) = a[i].is_string() ? parse_decimal(a[i].get<std::string>(), what) : a[i].get<double>();
  }
  return v;
}

}  // namespace

nlohmann::json pipeline_to_json(const GamePipeline& pipeline) {
  nlohmann::json doc;
  doc["dims"] = {{"p_in", pipeline.dims.p_in},
                 {"p_out", pipeline.dims.p_out},
                 {"history", pipeline.dims.history},
                 {"horizon", pipeline.dims.horizon}};
  doc["forecaster"] = mlp_to_json(pipeline.forecaster);
  doc["adversary"] = mlp_to_json(pipeline.adversary);
  doc["adversary_mask"] = pipeline.adversary_mask;
  doc["output_channels"] = pipeline.output_channels;
  doc["norm"] = {{"mean", vector_json(pipeline.norm.mean)}, {"std", vector_json(pipeline.norm.std)}};
  doc["lambda_f"] = format_decimal(pipeline.lambda_f);
  doc["lambda_a"] = format_decimal(pipeline.lambda_a);
  return doc;
}

GamePipeline pipeline_from_json(const nlohmann::json& doc, std::shared_ptr<const Controller> controller) {
  try {
    GamePipeline p;
    const auto& d = doc.at("dims");
    p.dims.p_in = d.at("p_in").get<Eigen::Index>();
    p.dims.p_out = d.at("p_out").get<Eigen::Index>();
    p.dims.history = d.at("history").get<Eigen::Index>();
    p.dims.horizon = d.at("horizon").get<Eigen::Index>();
    p.forecaster = mlp_from_json(doc.at("forecaster"));
    p.adversary = mlp_from_json(doc.at("adversary"));
    p.adversary_mask = doc.at("adversary_mask").get<std::vector<bool>>();
    p.output_channels = doc.at("output_channels").get<std::vector<Eigen::Index>>();
    p.norm.mean = vector_from_json(doc.at("norm").at("mean"), "norm.mean");
    p.norm.std = vector_from_json(doc.at("norm").at("std"), "norm.std");
    p.lambda_f = parse_decimal(doc.at("lambda_f").get<std::string>(), "lambda_f");
    p.lambda_a = parse_decimal(doc.at("lambda_a").get<std::string>(), "lambda_a");
    p.controller = std::move(controller);
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("pipeline checkpoint: ") + e.what());
  }
}

}  // namespace advcast
