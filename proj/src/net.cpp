#include "advcast/net.hpp"

#include <cmath>
#include <random>

#include "advcast/errors.hpp"
#include "advcast/util.hpp"

namespace advcast {

Eigen::Index Mlp::param_count() const {
  return w1.size() + b1.size() + w2.size() + b2.size();
}

Vector Mlp::flat() const {
  Vector out(param_count());
  Eigen::Index k = 0;
  out.segment(k, w1.size()) = Eigen::Map<const Vector>(w1.data(), w1.size());
  k += w1.size();
  out.segment(k, b1.size()) = b1;
  k += b1.size();
  out.segment(k, w2.size()) = Eigen::Map<const Vector>(w2.data(), w2.size());
  k += w2.size();
  out.segment(k, b2.size()) = b2;
  return out;
}

void Mlp::set_flat(const Vector& params) {
  if (params.size() != param_count()) {
    throw Error(ErrorCode::DimensionMismatch, "mlp set_flat: expected " +
                                                  std::to_string(param_count()) + " parameters, got " +
                                                  std::to_string(params.size()));
  }
  Eigen::Index k = 0;
  Eigen::Map<Vector>(w1.data(), w1.size()) = params.segment(k, w1.size());
  k += w1.size();
  b1 = params.segment(k, b1.size());
  k += b1.size();
  Eigen::Map<Vector>(w2.data(), w2.size()) = params.segment(k, w2.size());
  k += w2.size();
  b2 = params.segment(k, b2.size());
}

Mlp mlp_init(Eigen::Index in_dim, Eigen::Index hidden_dim, Eigen::Index out_dim,
             std::uint64_t seed, bool zero_output_layer) {
  if (in_dim < 1 || hidden_dim < 1 || out_dim < 1) {
    throw Error(ErrorCode::InvalidParams, "mlp_init: dimensions must be >= 1");
  }
  std::mt19937_64 rng(seed);
  Mlp mlp;
  mlp.w1.resize(hidden_dim, in_dim);
  mlp.b1 = Vector::Zero(hidden_dim);
  mlp.w2 = Matrix::Zero(out_dim, hidden_dim);
  mlp.b2 = Vector::Zero(out_dim);

  std::normal_distribution<double> first(0.0, std::sqrt(2.0 / static_cast<double>(in_dim)));
  for (Eigen::Index i = 0; i < mlp.w1.size(); ++i) mlp.w1.data()[i] = first(rng);
  for (Eigen::Index i = 0; i < mlp.b1.size(); ++i) mlp.b1(i) = first(rng);
  if (!zero_output_layer) {
    std::normal_distribution<double> second(0.0, std::sqrt(2.0 / static_cast<double>(hidden_dim)));
    for (Eigen::Index i = 0; i < mlp.w2.size(); ++i) mlp.w2.data()[i] = second(rng);
  }
  return mlp;
}

Vector mlp_forward(const Mlp& mlp, const Vector& x, ForwardCache* cache) {
  if (x.size() != mlp.in_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "mlp_forward: input length " + std::to_string(x.size()) +
                                                  " != " + std::to_string(mlp.in_dim()));
  }
  Vector pre = mlp.w1 * x + mlp.b1;
  Vector act = pre.cwiseMax(0.0);
  Vector y = mlp.w2 * act + mlp.b2;
  if (cache != nullptr) {
    cache->input = x;
    cache->hidden_preactivation = std::move(pre);
    cache->hidden_activation = std::move(act);
    cache->output = y;
  }
  return y;
}

void mlp_backward_accumulate(const Mlp& mlp, const ForwardCache& cache, const Vector& dl_dy, Vector& param_grads,
                             Vector* input_grad) {
  if (dl_dy.size() != mlp.out_dim() || cache.input.size() != mlp.in_dim() ||
      cache.hidden_activation.size() != mlp.hidden_dim() || param_grads.size() != mlp.param_count()) {
    throw Error(ErrorCode::DimensionMismatch, "mlp_backward: cache, upstream or accumulator has wrong shape");
  }
  const Vector dl_dact = mlp.w2.transpose() * dl_dy;
  Vector dl_dpre(mlp.hidden_dim());
  for (Eigen::Index i = 0; i < dl_dpre.size(); ++i) {
    dl_dpre(i) = cache.hidden_preactivation(i) > 0.0 ? dl_dact(i) : 0.0;
  }

  // Writes straight into the flat layout; no per-call parameter-sized temporaries.
  double* at = param_grads.data();
  Eigen::Map<Matrix>(at, mlp.w1.rows(), mlp.w1.cols()).noalias() += dl_dpre * cache.input.transpose();
  at += mlp.w1.size();
  Eigen::Map<Vector>(at, dl_dpre.size()) += dl_dpre;
  at += dl_dpre.size();
  Eigen::Map<Matrix>(at, mlp.w2.rows(), mlp.w2.cols()).noalias() += dl_dy * cache.hidden_activation.transpose();
  at += mlp.w2.size();
  Eigen::Map<Vector>(at, dl_dy.size()) += dl_dy;

  if (input_grad != nullptr) *input_grad = mlp.w1.transpose() * dl_dpre;
}

Vector mlp_input_grad(const Mlp& mlp, const ForwardCache& cache, const Vector& dl_dy) {
  if (dl_dy.size() != mlp.out_dim() || cache.hidden_preactivation.size() != mlp.hidden_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "mlp_input_grad: cache or upstream has wrong shape");
  }
  const Vector dl_dpre =
      (cache.hidden_preactivation.array() > 0.0).select(mlp.w2.transpose() * dl_dy, Vector::Zero(mlp.hidden_dim()));
  return mlp.w1.transpose() * dl_dpre;
}

MlpGradients mlp_backward(const Mlp& mlp, const ForwardCache& cache, const Vector& dl_dy) {
  MlpGradients g;
  g.params = Vector::Zero(mlp.param_count());
  mlp_backward_accumulate(mlp, cache, dl_dy, g.params, &g.input);
  return g;
}

AdamState AdamState::zeros(Eigen::Index size, double lr, double beta1, double beta2, double eps) {
  AdamState s;
  s.first_moment = Vector::Zero(size);
  s.second_moment = Vector::Zero(size);
  s.lr = lr;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.eps = eps;
  return s;
}

void adam_step(Vector& params, const Vector& grads, AdamState& state, Direction direction) {
  if (params.size() != grads.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw Error(ErrorCode::DimensionMismatch, "adam_step: params, grads and moments differ in length");
  }
  if (!grads.allFinite()) throw Error(ErrorCode::NonFiniteGradient, "adam_step: non-finite gradient");

  const Vector g = direction == Direction::maximize ? Vector(-grads) : grads;
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double gi = g(i);
    state.first_moment(i) = state.beta1 * state.first_moment(i) + (1.0 - state.beta1) * gi;
    state.second_moment(i) = state.beta2 * state.second_moment(i) + (1.0 - state.beta2) * gi * gi;
    const double m_hat = state.first_moment(i) / bc1;
    const double v_hat = state.second_moment(i) / bc2;
    params(i) -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

nlohmann::json mlp_to_json(const Mlp& mlp) {
  nlohmann::json doc;
  doc["dims"] = {{"in", mlp.in_dim()}, {"hidden", mlp.hidden_dim()}, {"out", mlp.out_dim()}};
  auto params = nlohmann::json::array();
  const Vector flat = mlp.flat();
  for (Eigen::Index i = 0; i < flat.size(); ++i) params.push_back(format_decimal(flat(i)));
  doc["params"] = std::move(params);
  return doc;
}

Mlp mlp_from_json(const nlohmann::json& doc) {
  try {
    const auto& dims = doc.at("dims");
    const Eigen::Index in = dims.at("in").get<Eigen::Index>();
    const Eigen::Index hidden = dims.at("hidden").get<Eigen::Index>();
    const Eigen::Index out = dims.at("out").get<Eigen::Index>();
    Mlp mlp = mlp_init(in, hidden, out, 0, true);
    const auto& arr = doc.at("params");
    if (!arr.is_array() || static_cast<Eigen::Index>(arr.size()) != mlp.param_count()) {
      throw Error(ErrorCode::ParseError, "mlp json: parameter count does not match dims");
    }
    Vector flat(mlp.param_count());
    for (std::size_t i = 0; i < arr.size(); ++i) {
      flat(static_cast<Eigen::Index>(i)) = parse_decimal(arr[i].get<std::string>(), "mlp param");
    }
    mlp.set_flat(flat);
    return mlp;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("mlp json: ") + e.what());
  }
}

}  // namespace advcast
