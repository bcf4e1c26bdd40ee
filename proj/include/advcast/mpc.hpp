#pragma once

// Linear-quadratic tracking MPC with box bounds, solved as a condensed QP in
// the stacked control sequence z = (u_0, ..., u_{F-1}):
//
//   stacked states  xbar = Phi x0 + Gamma z        (x_1 .. x_F)
//   J^C(z)          = (xbar - sbar)' Qbar (xbar - sbar) + z' Rbar z
//                   = 1/2 z' H z + g' z + constant
//   H = 2 (Gamma' Qbar Gamma + Rbar),  g = 2 Gamma' Qbar (Phi x0 - sbar)
//
// Constraint rows are all control bounds (identity) followed by all state
// bounds (rows of Gamma, shifted by Phi x0).

#include <memory>
#include <vector>

#include "advcast/linalg.hpp"

namespace advcast {

struct MpcProblem {
  Matrix a;  // n x n
  Matrix b;  // n x m
  Matrix q;  // n x n, SPD
  Matrix r;  // m x m, SPD
  int horizon = 1;
  Vector u_min, u_max;  // m
  Vector x_min, x_max;  // n

  Eigen::Index state_dim() const { return a.rows(); }
  Eigen::Index control_dim() const { return b.cols(); }

  /// Throws DimensionMismatch / InvalidParams on inconsistent data.
  void validate() const;
};

/// n x F matrix whose column t holds s_{t+1}.
using Reference = Matrix;

struct CondensedQp {
  Matrix h;
  Vector g;
  Matrix constraint_matrix;
  Vector lower;
  Vector upper;
  double constant = 0.0;
};

struct QpOptions {
  double tol = 1e-8;
  int max_iterations = 100;
};

struct QpSolution {
  Vector z;
  Vector duals_lower;
  Vector duals_upper;
  int iterations = 0;
};

/// Boxed convex QP  min 1/2 z'Hz + g'z  s.t.  lower <= Mz <= upper.
///
/// Returns the unconstrained minimizer directly when it is strictly feasible;
/// otherwise runs a Mehrotra predictor-corrector interior-point method and
/// polishes the result on the identified active set.
QpSolution solve_qp(const CondensedQp& qp, const QpOptions& options = {});

enum class BoundSide { lower, upper };

struct ActiveConstraint {
  Eigen::Index row = 0;
  BoundSide side = BoundSide::lower;
  bool operator==(const ActiveConstraint&) const = default;
};

struct MpcSolution {
  Matrix u;  // m x F
  Matrix x;  // n x (F+1), column 0 is x0
  Vector duals_lower;
  Vector duals_upper;
  std::vector<ActiveConstraint> active_set;
  /// Rows with both slack and dual below 1e-5; treated as inactive.
  std::vector<Eigen::Index> weakly_active;
  double qp_objective = 0.0;
};

inline constexpr double kActiveSlack = 1e-6;
inline constexpr double kActiveDual = 1e-6;
inline constexpr double kWeakThreshold = 1e-5;

/// A problem with its horizon-dependent matrices (Phi, Gamma, H and its
/// inverse) built once. All per-sample operations go through this.
class Controller {
 public:
  explicit Controller(MpcProblem problem, QpOptions options = {});

  const MpcProblem& problem() const { return problem_; }
  Eigen::Index stacked_controls() const { return gamma_.cols(); }

  CondensedQp condense(const Vector& x0, const Reference& ref) const;
  MpcSolution solve(const Vector& x0, const Reference& ref) const;
  Matrix rollout(const Vector& x0, const Matrix& u) const;
  double control_cost(const Vector& x0, const Matrix& u, const Reference& ref) const;
  Matrix control_cost_grad_u(const Vector& x0, const Matrix& u, const Reference& ref) const;

  /// Pullback of dL/du* through the solution map u*(ref) with the active set
  /// of `solution` held fixed. Returns dL/dref (n x F).
  Matrix vjp(const MpcSolution& solution, const Matrix& upstream) const;

 private:
  void check_dims(const Vector& x0, const Reference* ref, const Matrix* u) const;
  Vector stacked_reference(const Reference& ref) const;

  MpcProblem problem_;
  QpOptions options_;
  Matrix phi_;          // nF x n
  Matrix gamma_;        // nF x mF
  Matrix qbar_gamma_;   // nF x mF
  Matrix h_;            // mF x mF
  Matrix h_inv_;        // mF x mF
  std::shared_ptr<const linalg::Cholesky> h_factor_;
  Matrix constraints_;  // (mF + nF) x mF
};

CondensedQp condense(const MpcProblem& problem, const Vector& x0, const Reference& ref);
MpcSolution solve_mpc(const MpcProblem& problem, const Vector& x0, const Reference& ref);
double control_cost(const MpcProblem& problem, const Vector& x0, const Matrix& u,
                    const Reference& ref);
Matrix control_cost_grad_u(const MpcProblem& problem, const Vector& x0, const Matrix& u,
                           const Reference& ref);
Matrix mpc_vjp(const MpcProblem& problem, const MpcSolution& solution, const Matrix& upstream);

/// Unconstrained finite-horizon LQ tracking by backward Riccati recursion.
/// Independent of the condensed formulation; used as an oracle.
Matrix riccati_lqt(const MpcProblem& problem, const Vector& x0, const Reference& ref);

}  // namespace advcast
