#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "advcast/errors.hpp"
#include "advcast/linalg.hpp"
#include "advcast/mpc.hpp"

namespace advcast::test {

template <typename F>
std::optional<ErrorCode> thrown_code(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline Vector random_vector(Eigen::Index n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = d(rng);
  return v;
}

inline Matrix random_spd(Eigen::Index n, std::mt19937_64& rng) {
  const Matrix g = random_matrix(n, n, rng);
  return g * g.transpose() + Matrix::Identity(n, n);
}

/// ||a - b|| / max(||b||, floor)
template <typename A, typename B>
double rel_err(const A& a, const B& b, double floor = 1e-8) {
  return (a - b).norm() / std::max(b.norm(), floor);
}

/// A stable-ish random linear system with box bounds of the given half-width.
inline MpcProblem random_problem(int n, int m, int horizon, std::mt19937_64& rng, double u_bound, double x_bound) {
  MpcProblem p;
  p.a = Matrix::Identity(n, n) + random_matrix(n, n, rng, 0.3 / n);
  p.b = random_matrix(n, m, rng);
  p.q = random_spd(n, rng);
  p.r = random_spd(m, rng);
  p.horizon = horizon;
  p.u_min = Vector::Constant(m, -u_bound);
  p.u_max = Vector::Constant(m, u_bound);
  p.x_min = Vector::Constant(n, -x_bound);
  p.x_max = Vector::Constant(n, x_bound);
  return p;
}

/// Slack of every constraint row of the condensed QP at the solution, in
/// row order (controls then states), for the side that is closer.
struct RowState {
  double slack = 0.0;
  double dual = 0.0;
};

inline std::vector<RowState> row_states(const MpcProblem& p, const MpcSolution& sol) {
  const Eigen::Index n = p.state_dim();
  const Eigen::Index m = p.control_dim();
  std::vector<RowState> out;
  Eigen::Index row = 0;
  for (int t = 0; t < p.horizon; ++t) {
    for (Eigen::Index i = 0; i < m; ++i, ++row) {
      const double lo = sol.u(i, t) - p.u_min(i);
      const double hi = p.u_max(i) - sol.u(i, t);
      out.push_back(lo < hi ? RowState{lo, sol.duals_lower(row)} : RowState{hi, sol.duals_upper(row)});
    }
  }
  for (int t = 1; t <= p.horizon; ++t) {
    for (Eigen::Index i = 0; i < n; ++i, ++row) {
      const double lo = sol.x(i, t) - p.x_min(i);
      const double hi = p.x_max(i) - sol.x(i, t);
      out.push_back(lo < hi ? RowState{lo, sol.duals_lower(row)} : RowState{hi, sol.duals_upper(row)});
    }
  }
  return out;
}

/// Every row is either clearly inactive or clearly active with the margin.
inline bool strictly_classified(const MpcProblem& p, const MpcSolution& sol, double margin) {
  for (const RowState& r : row_states(p, sol)) {
    const bool inactive = r.slack > margin && r.dual < 1e-9;
    const bool active = r.slack < 1e-9 && r.dual > margin;
    if (!inactive && !active) return false;
  }
  return true;
}

/// Two-sided signed-rank p by listing every sign assignment of the ranked
/// nonzero |differences|. Exponential; meant for n <= ~16.
inline double wilcoxon_brute_force_p(const Vector& d) {
  std::vector<double> mags;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (d(i) != 0.0) mags.push_back(std::abs(d(i)));
  }
  const std::size_t n = mags.size();
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    double below = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (mags[j] < mags[i]) ++below;
      if (mags[j] == mags[i]) ++equal;
    }
    rank[i] = below + (equal + 1) / 2;
  }
  double total = 0;
  for (double r : rank) total += r;
  double w_plus = 0;
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (d(i) > 0.0) w_plus += rank[k];
    if (d(i) != 0.0) ++k;
  }
  const double w = std::min(w_plus, total - w_plus);
  std::size_t extreme = 0;
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    double wp = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (std::size_t{1} << i)) wp += rank[i];
    }
    if (std::min(wp, total - wp) <= w + 1e-9) ++extreme;
  }
  return static_cast<double>(extreme) / static_cast<double>(std::size_t{1} << n);
}

}  // namespace advcast::test
