#include "advcast/linalg.hpp"

#include <cmath>
#include <string>

#include "advcast/errors.hpp"

namespace advcast {

bool all_finite(const Matrix& m) { return m.allFinite(); }
bool all_finite(const Vector& v) { return v.allFinite(); }

namespace linalg {
namespace {

constexpr double kPivotFloor = 1e-14;
constexpr double kSolveSymmetryTol = 1e-12;
constexpr double kEigSymmetryTol = 1e-10;

void require_square(const Matrix& m, const char* what) {
  if (m.rows() != m.cols()) {
    throw Error(ErrorCode::DimensionMismatch,
                std::string(what) + ": matrix is " + std::to_string(m.rows()) + "x" +
                    std::to_string(m.cols()));
  }
}

double asymmetry(const Matrix& m) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < m.cols(); ++j) {
      worst = std::max(worst, std::abs(m(i, j) - m(j, i)));
    }
  }
  return worst;
}

}  // namespace

Cholesky::Cholesky(const Matrix& m) {
  require_square(m, "cholesky");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if (asymmetry(m) > kSolveSymmetryTol * scale) {
    throw Error(ErrorCode::NotPositiveDefinite, "cholesky: matrix is not symmetric");
  }
  const Eigen::Index n = m.rows();
  lower_ = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double pivot = m(j, j) - lower_.row(j).head(j).squaredNorm();
    if (!(pivot > kPivotFloor)) {
      throw Error(ErrorCode::NotPositiveDefinite,
                  "cholesky: pivot " + std::to_string(pivot) + " at column " + std::to_string(j));
    }
    const double d = std::sqrt(pivot);
    lower_(j, j) = d;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      lower_(i, j) = (m(i, j) - lower_.row(i).head(j).dot(lower_.row(j).head(j))) / d;
    }
  }
}

Vector Cholesky::solve(const Vector& b) const {
  if (b.size() != lower_.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "cholesky solve: rhs has wrong length");
  }
  const Eigen::Index n = lower_.rows();
  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i) = (b(i) - lower_.row(i).head(i).dot(y.head(i))) / lower_(i, i);
  }
  Vector x(n);
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    double acc = y(i);
    for (Eigen::Index k = i + 1; k < n; ++k) acc -= lower_(k, i) * x(k);
    x(i) = acc / lower_(i, i);
  }
  return x;
}

Matrix Cholesky::solve(const Matrix& b) const {
  Matrix out(b.rows(), b.cols());
  for (Eigen::Index c = 0; c < b.cols(); ++c) {
    out.col(c) = solve(Vector(b.col(c)));
  }
  return out;
}

Vector solve_psd(const Matrix& m, const Vector& b) {
  require_square(m, "solve_psd");
  if (b.size() != m.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "solve_psd: rhs has wrong length");
  }
  return Cholesky(m).solve(b);
}

EigenExtremes sym_eig_extremes(const Matrix& m) {
  require_square(m, "sym_eig_extremes");
  const Eigen::Index n = m.rows();
  if (n == 0) throw Error(ErrorCode::DimensionMismatch, "sym_eig_extremes: empty matrix");
  if (!m.allFinite()) throw Error(ErrorCode::NonFiniteEvaluation, "sym_eig_extremes: non-finite entry");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if (asymmetry(m) > kEigSymmetryTol * scale) {
    throw Error(ErrorCode::NonSymmetric, "sym_eig_extremes: matrix is not symmetric");
  }

  Matrix a = 0.5 * (m + m.transpose());
  const double frob = a.norm();
  constexpr int kMaxSweeps = 100;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    }
    if (std::sqrt(2.0 * off) <= 1e-15 * frob || off == 0.0) break;

    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double app = a(p, p);
        const double aqq = a(q, q);
        // Skip rotations that can no longer change the diagonal.
        if (sweep > 3 && std::abs(apq) < 1e-300 + 1e-18 * (std::abs(app) + std::abs(aqq))) {
          a(p, q) = a(q, p) = 0.0;
          continue;
        }
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          if (k == p || k == q) continue;
          const double akp = a(k, p);
          const double akq = a(k, q);
          const double new_kp = c * akp - s * akq;
          const double new_kq = s * akp + c * akq;
          a(k, p) = a(p, k) = new_kp;
          a(k, q) = a(q, k) = new_kq;
        }
        a(p, p) = app - t * apq;
        a(q, q) = aqq + t * apq;
        a(p, q) = a(q, p) = 0.0;
      }
    }
  }
  const Vector diag = a.diagonal();
  return {diag.minCoeff(), diag.maxCoeff()};
}

Vector finite_diff_grad(const ScalarFunction& f, const Vector& x, double h) {
  if (!(h > 0.0)) throw Error(ErrorCode::InvalidParams, "finite_diff_grad: step must be positive");
  Vector grad(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double xi = x(i);
    probe(i) = xi + h;
    const double up = f(probe);
    probe(i) = xi - h;
    const double down = f(probe);
    probe(i) = xi;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw Error(ErrorCode::NonFiniteEvaluation,
                  "finite_diff_grad: non-finite value at coordinate " + std::to_string(i));
    }
    grad(i) = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace linalg
}  // namespace advcast
