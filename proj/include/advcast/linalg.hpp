#pragma once

// Dense kernels shared by the controller, the networks and the game
// verifier. Matrices are row-major so that flattening a weight matrix gives
// the canonical parameter layout.

#include <Eigen/Dense>

#include <functional>

namespace advcast {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

bool all_finite(const Matrix& m);
bool all_finite(const Vector& v);

namespace linalg {

/// Cholesky factor of a symmetric positive-definite matrix, kept around so
/// repeated solves against the same matrix (the condensed MPC Hessian, the
/// interior-point normal equations) pay for one factorization.
class Cholesky {
 public:
  explicit Cholesky(const Matrix& m);

  Vector solve(const Vector& b) const;
  Matrix solve(const Matrix& b) const;
  Eigen::Index size() const { return lower_.rows(); }

 private:
  Matrix lower_;
};

/// Solves M x = b for symmetric positive-definite M. Throws
/// NotPositiveDefinite when a pivot falls to 1e-14 or below.
Vector solve_psd(const Matrix& m, const Vector& b);

struct EigenExtremes {
  double lambda_min = 0.0;
  double lambda_max = 0.0;
};

/// Smallest and largest eigenvalue of a symmetric matrix by cyclic Jacobi
/// rotations run to full convergence.
EigenExtremes sym_eig_extremes(const Matrix& m);

using ScalarFunction = std::function<double(const Vector&)>;

inline constexpr double kDefaultFiniteDiffStep = 1e-5;

/// Central-difference gradient (f(x+h e_i) - f(x-h e_i)) / 2h.
Vector finite_diff_grad(const ScalarFunction& f, const Vector& x,
                        double h = kDefaultFiniteDiffStep);

}  // namespace linalg
}  // namespace advcast
