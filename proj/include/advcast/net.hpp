#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

#include "advcast/linalg.hpp"

namespace advcast {

/// Two-layer perceptron y = W2 relu(W1 x + b1) + b2. Used for both the
/// forecaster and the adversary.
///
/// The flat parameter layout is (W1 row-major, b1, W2 row-major, b2). Adam
/// moments, finite-difference Hessians and checkpoints all use this order.
struct Mlp {
  Matrix w1;  // hidden x in
  Vector b1;  // hidden
  Matrix w2;  // out x hidden
  Vector b2;  // out

  Eigen::Index in_dim() const { return w1.cols(); }
  Eigen::Index hidden_dim() const { return w1.rows(); }
  Eigen::Index out_dim() const { return w2.rows(); }
  Eigen::Index param_count() const;

  Vector flat() const;
  void set_flat(const Vector& params);
};

struct ForwardCache {
  Vector input;
  Vector hidden_preactivation;
  Vector hidden_activation;
  Vector output;
};

struct MlpGradients {
  Vector params;  // flat layout
  Vector input;
};

Mlp mlp_init(Eigen::Index in_dim, Eigen::Index hidden_dim, Eigen::Index out_dim,
             std::uint64_t seed, bool zero_output_layer);

Vector mlp_forward(const Mlp& mlp, const Vector& x, ForwardCache* cache = nullptr);

/// Reverse-mode pass. The rectifier subgradient at exactly zero is zero.
MlpGradients mlp_backward(const Mlp& mlp, const ForwardCache& cache, const Vector& dl_dy);

/// Adds the parameter gradient into `param_grads` (flat layout) and, when
/// asked, writes the input gradient.
void mlp_backward_accumulate(const Mlp& mlp, const ForwardCache& cache, const Vector& dl_dy, Vector& param_grads,
                             Vector* input_grad);

Vector mlp_input_grad(const Mlp& mlp, const ForwardCache& cache, const Vector& dl_dy);

enum class Direction { minimize, maximize };

struct AdamState {
  Vector first_moment;
  Vector second_moment;
  long step_count = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState zeros(Eigen::Index size, double lr, double beta1 = 0.9, double beta2 = 0.999,
                         double eps = 1e-8);
};

/// One bias-corrected Adam update in place. `maximize` is exactly the
/// minimize update applied to the negated gradient.
void adam_step(Vector& params, const Vector& grads, AdamState& state, Direction direction);

nlohmann::json mlp_to_json(const Mlp& mlp);
Mlp mlp_from_json(const nlohmann::json& doc);

}  // namespace advcast
