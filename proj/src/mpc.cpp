#include "advcast/mpc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include "advcast/errors.hpp"
#include "advcast/util.hpp"

namespace advcast {
namespace {

using linalg::Cholesky;

struct QpView {
  const Matrix& h;
  const Vector& g;
  const Matrix& m;
  const Vector& lower;
  const Vector& upper;
};

double inf_norm(const Vector& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

struct KktResiduals {
  double stationarity = 0.0;
  double primal = 0.0;
  double complementarity = 0.0;
  double min_dual = 0.0;
};

KktResiduals kkt_residuals(const QpView& qp, const Vector& z, const Vector& dl, const Vector& du) {
  KktResiduals res;
  const Vector mz = qp.m * z;
  res.stationarity = inf_norm(qp.h * z + qp.g + qp.m.transpose() * (du - dl));
  const Vector slack_l = mz - qp.lower;
  const Vector slack_u = qp.upper - mz;
  res.primal = std::max({0.0, -slack_l.minCoeff(), -slack_u.minCoeff()});
  res.complementarity = std::max(inf_norm(slack_l.cwiseProduct(dl)), inf_norm(slack_u.cwiseProduct(du)));
  res.min_dual = std::min(dl.size() ? dl.minCoeff() : 0.0, du.size() ? du.minCoeff() : 0.0);
  return res;
}

bool kkt_ok(const KktResiduals& r, double tol) {
  return r.stationarity <= tol && r.primal <= tol && r.complementarity <= tol && r.min_dual >= -1e-10;
}

// Largest step in (0, 1] keeping v + alpha dv >= 0.
double max_step(const Vector& v, const Vector& dv) {
  double alpha = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (dv(i) < 0.0) alpha = std::min(alpha, -v(i) / dv(i));
  }
  return alpha;
}

// Re-solves the QP with the guessed active rows as equalities. Returns
// nothing if the guess is inconsistent (dependent rows, wrong-signed duals,
// violated inactive rows).
std::optional<QpSolution> polish(const QpView& qp, const Cholesky& hfac, const Vector& z_free,
                                 const std::vector<ActiveConstraint>& guess, double tol) {
  const Eigen::Index rows = qp.m.rows();
  const Eigen::Index k = static_cast<Eigen::Index>(guess.size());
  QpSolution out;
  out.duals_lower = Vector::Zero(rows);
  out.duals_upper = Vector::Zero(rows);
  if (k == 0) {
    out.z = z_free;
  } else {
    Matrix ma(k, qp.m.cols());
    Vector ba(k);
    for (Eigen::Index i = 0; i < k; ++i) {
      const auto& c = guess[static_cast<std::size_t>(i)];
      ma.row(i) = qp.m.row(c.row);
      ba(i) = c.side == BoundSide::lower ? qp.lower(c.row) : qp.upper(c.row);
    }
    const Matrix y = hfac.solve(Matrix(ma.transpose()));
    Matrix s = ma * y;
    s = 0.5 * (s + s.transpose());
    Vector nu;
    try {
      nu = Cholesky(s).solve(Vector(ma * z_free - ba));
    } catch (const Error&) {
      return std::nullopt;
    }
    out.z = z_free - y * nu;
    for (Eigen::Index i = 0; i < k; ++i) {
      const auto& c = guess[static_cast<std::size_t>(i)];
      if (c.side == BoundSide::upper) {
        out.duals_upper(c.row) = nu(i);
      } else {
        out.duals_lower(c.row) = -nu(i);
      }
    }
  }
  if (!kkt_ok(kkt_residuals(qp, out.z, out.duals_lower, out.duals_upper), tol)) return std::nullopt;
  return out;
}

QpSolution solve_qp_impl(const QpView& qp, const Cholesky& hfac, const QpOptions& opt) {
  const Eigen::Index nz = qp.h.rows();
  const Eigen::Index rows = qp.m.rows();

  const Vector z_free = hfac.solve(Vector(-qp.g));
  {
    const Vector mz = qp.m * z_free;
    if (rows == 0 || ((mz - qp.lower).minCoeff() >= 0.0 && (qp.upper - mz).minCoeff() >= 0.0)) {
      QpSolution sol;
      sol.z = z_free;
      sol.duals_lower = Vector::Zero(rows);
      sol.duals_upper = Vector::Zero(rows);
      return sol;
    }
  }

  // Mehrotra predictor-corrector on
  //   Mz - s_l = lower,  Mz + s_u = upper,  s, lambda >= 0.
  Vector z = z_free;
  Vector mz = qp.m * z;
  Vector sl = (mz - qp.lower).cwiseMax(1.0);
  Vector su = (qp.upper - mz).cwiseMax(1.0);
  Vector ll = Vector::Ones(rows);
  Vector lu = Vector::Ones(rows);
  const Matrix mt = qp.m.transpose();
  const double denom = 2.0 * static_cast<double>(rows);

  int iter = 0;
  bool converged = false;
  for (; iter < opt.max_iterations; ++iter) {
    mz = qp.m * z;
    const Vector r_d = qp.h * z + qp.g + mt * (lu - ll);
    const Vector r_pl = mz - sl - qp.lower;
    const Vector r_pu = mz + su - qp.upper;
    const double mu = (sl.dot(ll) + su.dot(lu)) / denom;
    const double comp = std::max(inf_norm(sl.cwiseProduct(ll)), inf_norm(su.cwiseProduct(lu)));
    if (inf_norm(r_d) <= opt.tol && std::max(inf_norm(r_pl), inf_norm(r_pu)) <= opt.tol &&
        comp <= opt.tol) {
      converged = true;
      break;
    }

    const Vector d = ll.cwiseQuotient(sl) + lu.cwiseQuotient(su);
    Matrix kmat = qp.h + mt * d.asDiagonal() * qp.m;
    kmat = 0.5 * (kmat + kmat.transpose());
    std::optional<Cholesky> kfac;
    try {
      kfac.emplace(kmat);
    } catch (const Error&) {
      break;
    }

    struct Step {
      Vector dz, dsl, dsu, dll, dlu;
    };
    auto direction = [&](const Vector& rcl, const Vector& rcu) {
      Step s;
      const Vector wl = (-rcl - ll.cwiseProduct(r_pl)).cwiseQuotient(sl);
      const Vector wu = (-rcu + lu.cwiseProduct(r_pu)).cwiseQuotient(su);
      s.dz = kfac->solve(Vector(-r_d + mt * wl - mt * wu));
      const Vector mdz = qp.m * s.dz;
      s.dsl = mdz + r_pl;
      s.dsu = -mdz - r_pu;
      s.dll = (-rcl - ll.cwiseProduct(s.dsl)).cwiseQuotient(sl);
      s.dlu = (-rcu - lu.cwiseProduct(s.dsu)).cwiseQuotient(su);
      return s;
    };
    auto step_length = [&](const Step& s) {
      return std::min({max_step(sl, s.dsl), max_step(su, s.dsu), max_step(ll, s.dll),
                       max_step(lu, s.dlu)});
    };

    const Step aff = direction(sl.cwiseProduct(ll), su.cwiseProduct(lu));
    const double a_aff = step_length(aff);
    const double mu_aff = ((sl + a_aff * aff.dsl).dot(ll + a_aff * aff.dll) +
                           (su + a_aff * aff.dsu).dot(lu + a_aff * aff.dlu)) /
                          denom;
    const double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);

    const Vector rcl = sl.cwiseProduct(ll) + aff.dsl.cwiseProduct(aff.dll) -
                       Vector::Constant(rows, sigma * mu);
    const Vector rcu = su.cwiseProduct(lu) + aff.dsu.cwiseProduct(aff.dlu) -
                       Vector::Constant(rows, sigma * mu);
    const Step cor = direction(rcl, rcu);
    const double alpha = std::min(1.0, 0.99 * step_length(cor));

    z += alpha * cor.dz;
    sl += alpha * cor.dsl;
    su += alpha * cor.dsu;
    ll += alpha * cor.dll;
    lu += alpha * cor.dlu;
  }

  std::vector<ActiveConstraint> guess;
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (ll(i) > sl(i)) guess.push_back({i, BoundSide::lower});
    if (lu(i) > su(i)) guess.push_back({i, BoundSide::upper});
  }
  if (auto polished = polish(qp, hfac, z_free, guess, opt.tol)) {
    polished->iterations = iter;
    return *polished;
  }
  if (!converged) {
    throw Error(ErrorCode::MaxIterations,
                "solve_qp: interior point did not converge in " + std::to_string(opt.max_iterations) +
                    " iterations");
  }
  QpSolution sol;
  sol.z = z;
  sol.duals_lower = ll;
  sol.duals_upper = lu;
  sol.iterations = iter;
  return sol;
}

void validate_qp(const CondensedQp& qp) {
  const Eigen::Index nz = qp.h.rows();
  if (qp.h.cols() != nz || qp.g.size() != nz || qp.constraint_matrix.cols() != nz ||
      qp.lower.size() != qp.constraint_matrix.rows() || qp.upper.size() != qp.constraint_matrix.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "solve_qp: inconsistent QP dimensions");
  }
  for (Eigen::Index i = 0; i < qp.lower.size(); ++i) {
    if (!(qp.lower(i) < qp.upper(i))) {
      throw Error(ErrorCode::Infeasible, "solve_qp: bound row " + std::to_string(i) +
                                             " has lower >= upper");
    }
  }
}

}  // namespace

void MpcProblem::validate() const {
  const Eigen::Index n = a.rows();
  const Eigen::Index m = b.cols();
  if (n < 1 || m < 1 || a.cols() != n || b.rows() != n || q.rows() != n || q.cols() != n ||
      r.rows() != m || r.cols() != m || u_min.size() != m || u_max.size() != m ||
      x_min.size() != n || x_max.size() != n) {
    throw Error(ErrorCode::DimensionMismatch, "mpc problem: inconsistent matrix dimensions");
  }
  if (horizon < 1) throw Error(ErrorCode::InvalidParams, "mpc problem: horizon must be >= 1");
  if (!a.allFinite() || !b.allFinite() || !q.allFinite() || !r.allFinite()) {
    throw Error(ErrorCode::InvalidParams, "mpc problem: non-finite matrix entry");
  }
  for (Eigen::Index i = 0; i < m; ++i) {
    if (!(u_min(i) < u_max(i))) throw Error(ErrorCode::InvalidParams, "mpc problem: u_min >= u_max");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(x_min(i) < x_max(i))) throw Error(ErrorCode::InvalidParams, "mpc problem: x_min >= x_max");
  }
  try {
    linalg::Cholesky qf(q);
    linalg::Cholesky rf(r);
  } catch (const Error&) {
    throw Error(ErrorCode::InvalidParams, "mpc problem: Q and R must be symmetric positive definite");
  }
}

QpSolution solve_qp(const CondensedQp& qp, const QpOptions& options) {
  validate_qp(qp);
  const Cholesky hfac(qp.h);
  return solve_qp_impl({qp.h, qp.g, qp.constraint_matrix, qp.lower, qp.upper}, hfac, options);
}

Controller::Controller(MpcProblem problem, QpOptions options)
    : problem_(std::move(problem)), options_(options) {
  problem_.validate();
  const Eigen::Index n = problem_.state_dim();
  const Eigen::Index m = problem_.control_dim();
  const Eigen::Index f = problem_.horizon;

  phi_ = Matrix::Zero(n * f, n);
  gamma_ = Matrix::Zero(n * f, m * f);
  // powers[k] = A^k B, k = 0..F-1
  std::vector<Matrix> powers_b;
  Matrix apow = Matrix::Identity(n, n);
  for (Eigen::Index t = 0; t < f; ++t) {
    powers_b.push_back(apow * problem_.b);
    apow = problem_.a * apow;
    phi_.block(t * n, 0, n, n) = apow;
  }
  for (Eigen::Index t = 0; t < f; ++t) {
    for (Eigen::Index k = 0; k <= t; ++k) {
      gamma_.block(t * n, k * m, n, m) = powers_b[static_cast<std::size_t>(t - k)];
    }
  }
  qbar_gamma_.resize(n * f, m * f);
  for (Eigen::Index t = 0; t < f; ++t) {
    qbar_gamma_.middleRows(t * n, n) = problem_.q * gamma_.middleRows(t * n, n);
  }
  h_ = 2.0 * (gamma_.transpose() * qbar_gamma_);
  for (Eigen::Index t = 0; t < f; ++t) h_.block(t * m, t * m, m, m) += 2.0 * problem_.r;
  h_ = 0.5 * (h_ + h_.transpose());
  h_factor_ = std::make_shared<const Cholesky>(h_);
  h_inv_ = h_factor_->solve(Matrix(Matrix::Identity(m * f, m * f)));
  h_inv_ = 0.5 * (h_inv_ + h_inv_.transpose());

  constraints_ = Matrix::Zero(m * f + n * f, m * f);
  constraints_.topRows(m * f) = Matrix::Identity(m * f, m * f);
  constraints_.bottomRows(n * f) = gamma_;
}

void Controller::check_dims(const Vector& x0, const Reference* ref, const Matrix* u) const {
  const Eigen::Index n = problem_.state_dim();
  const Eigen::Index m = problem_.control_dim();
  if (x0.size() != n) throw Error(ErrorCode::DimensionMismatch, "mpc: x0 has wrong length");
  if (ref != nullptr && (ref->rows() != n || ref->cols() != problem_.horizon)) {
    throw Error(ErrorCode::DimensionMismatch, "mpc: reference must be " + std::to_string(n) + "x" +
                                                  std::to_string(problem_.horizon));
  }
  if (u != nullptr && (u->rows() != m || u->cols() != problem_.horizon)) {
    throw Error(ErrorCode::DimensionMismatch, "mpc: controls must be " + std::to_string(m) + "x" +
                                                  std::to_string(problem_.horizon));
  }
}

Vector Controller::stacked_reference(const Reference& ref) const {
  // Column-major stacking of an n x F row-major matrix: (s_1, ..., s_F).
  const Eigen::Index n = problem_.state_dim();
  Vector out(n * problem_.horizon);
  for (Eigen::Index t = 0; t < problem_.horizon; ++t) out.segment(t * n, n) = ref.col(t);
  return out;
}

CondensedQp Controller::condense(const Vector& x0, const Reference& ref) const {
  check_dims(x0, &ref, nullptr);
  const Eigen::Index n = problem_.state_dim();
  const Eigen::Index m = problem_.control_dim();
  const Eigen::Index f = problem_.horizon;
  const Vector free_states = phi_ * x0;
  const Vector offset = free_states - stacked_reference(ref);

  CondensedQp qp;
  qp.h = h_;
  qp.g = 2.0 * (qbar_gamma_.transpose() * offset);
  qp.constant = 0.0;
  for (Eigen::Index t = 0; t < f; ++t) {
    const auto e = offset.segment(t * n, n);
    qp.constant += e.dot(problem_.q * e);
  }
  qp.constraint_matrix = constraints_;
  qp.lower.resize(m * f + n * f);
  qp.upper.resize(m * f + n * f);
  for (Eigen::Index t = 0; t < f; ++t) {
    qp.lower.segment(t * m, m) = problem_.u_min;
    qp.upper.segment(t * m, m) = problem_.u_max;
    qp.lower.segment(m * f + t * n, n) = problem_.x_min - free_states.segment(t * n, n);
    qp.upper.segment(m * f + t * n, n) = problem_.x_max - free_states.segment(t * n, n);
  }
  return qp;
}

Matrix Controller::rollout(const Vector& x0, const Matrix& u) const {
  check_dims(x0, nullptr, &u);
  Matrix x(problem_.state_dim(), problem_.horizon + 1);
  x.col(0) = x0;
  for (Eigen::Index t = 0; t < problem_.horizon; ++t) {
    x.col(t + 1) = problem_.a * x.col(t) + problem_.b * u.col(t);
  }
  return x;
}

MpcSolution Controller::solve(const Vector& x0, const Reference& ref) const {
  const CondensedQp qp = condense(x0, ref);
  const QpSolution qs =
      solve_qp_impl({qp.h, qp.g, qp.constraint_matrix, qp.lower, qp.upper}, *h_factor_, options_);

  const Eigen::Index m = problem_.control_dim();
  const Eigen::Index f = problem_.horizon;
  MpcSolution sol;
  sol.u.resize(m, f);
  for (Eigen::Index t = 0; t < f; ++t) sol.u.col(t) = qs.z.segment(t * m, m);
  sol.x = rollout(x0, sol.u);
  sol.duals_lower = qs.duals_lower;
  sol.duals_upper = qs.duals_upper;
  sol.qp_objective = 0.5 * qs.z.dot(qp.h * qs.z) + qp.g.dot(qs.z) + qp.constant;

  const Vector mz = qp.constraint_matrix * qs.z;
  for (Eigen::Index i = 0; i < mz.size(); ++i) {
    const double slack_l = mz(i) - qp.lower(i);
    const double slack_u = qp.upper(i) - mz(i);
    if (slack_l < kActiveSlack && qs.duals_lower(i) > kActiveDual) {
      sol.active_set.push_back({i, BoundSide::lower});
    } else if (slack_u < kActiveSlack && qs.duals_upper(i) > kActiveDual) {
      sol.active_set.push_back({i, BoundSide::upper});
    } else if ((slack_l < kWeakThreshold && qs.duals_lower(i) < kWeakThreshold) ||
               (slack_u < kWeakThreshold && qs.duals_upper(i) < kWeakThreshold)) {
      sol.weakly_active.push_back(i);
    }
  }
  return sol;
}

double Controller::control_cost(const Vector& x0, const Matrix& u, const Reference& ref) const {
  check_dims(x0, &ref, &u);
  const Matrix x = rollout(x0, u);
  double cost = 0.0;
  for (Eigen::Index t = 0; t < problem_.horizon; ++t) {
    const Vector e = x.col(t + 1) - ref.col(t);
    const Vector ut = u.col(t);
    cost += e.dot(problem_.q * e) + ut.dot(problem_.r * ut);
  }
  return cost;
}

Matrix Controller::control_cost_grad_u(const Vector& x0, const Matrix& u, const Reference& ref) const {
  check_dims(x0, &ref, &u);
  const Eigen::Index m = problem_.control_dim();
  const Eigen::Index f = problem_.horizon;
  const Vector offset = phi_ * x0 - stacked_reference(ref);
  Vector z(m * f);
  for (Eigen::Index t = 0; t < f; ++t) z.segment(t * m, m) = u.col(t);
  const Vector grad = h_ * z + 2.0 * (qbar_gamma_.transpose() * offset);
  Matrix out(m, f);
  for (Eigen::Index t = 0; t < f; ++t) out.col(t) = grad.segment(t * m, m);
  return out;
}

Matrix Controller::vjp(const MpcSolution& solution, const Matrix& upstream) const {
  const Eigen::Index n = problem_.state_dim();
  const Eigen::Index m = problem_.control_dim();
  const Eigen::Index f = problem_.horizon;
  if (upstream.rows() != m || upstream.cols() != f) {
    throw Error(ErrorCode::DimensionMismatch, "mpc_vjp: upstream must be m x F");
  }
  if (!solution.weakly_active.empty()) {
    log(LogLevel::debug, "mpc_vjp: WeaklyActive constraints present (" +
                             std::to_string(solution.weakly_active.size()) +
                             "); derivative is a subgradient choice");
  }
  Vector v(m * f);
  for (Eigen::Index t = 0; t < f; ++t) v.segment(t * m, m) = upstream.col(t);

  // Adjoint of the equality-constrained KKT system on the active rows:
  //   P v = H^-1 v - H^-1 M_A' (M_A H^-1 M_A')^-1 M_A H^-1 v
  Vector pv = h_inv_ * v;
  const auto k = static_cast<Eigen::Index>(solution.active_set.size());
  if (k > 0) {
    Matrix ma(k, m * f);
    for (Eigen::Index i = 0; i < k; ++i) {
      ma.row(i) = constraints_.row(solution.active_set[static_cast<std::size_t>(i)].row);
    }
    const Matrix hinv_mat = h_inv_ * ma.transpose();
    Matrix s = ma * hinv_mat;
    s = 0.5 * (s + s.transpose());
    Vector t;
    try {
      t = Cholesky(s).solve(Vector(ma * pv));
    } catch (const Error&) {
      throw Error(ErrorCode::SingularReducedSystem,
                  "mpc_vjp: active constraint rows are linearly dependent");
    }
    pv -= hinv_mat * t;
  }
  // dz*/dsbar = 2 P Gamma' Qbar, so the pullback is 2 Qbar Gamma P v.
  const Vector grad = 2.0 * (qbar_gamma_ * pv);
  Matrix out(n, f);
  for (Eigen::Index t = 0; t < f; ++t) out.col(t) = grad.segment(t * n, n);
  return out;
}

CondensedQp condense(const MpcProblem& problem, const Vector& x0, const Reference& ref) {
  return Controller(problem).condense(x0, ref);
}

MpcSolution solve_mpc(const MpcProblem& problem, const Vector& x0, const Reference& ref) {
  return Controller(problem).solve(x0, ref);
}

double control_cost(const MpcProblem& problem, const Vector& x0, const Matrix& u, const Reference& ref) {
  return Controller(problem).control_cost(x0, u, ref);
}

Matrix control_cost_grad_u(const MpcProblem& problem, const Vector& x0, const Matrix& u,
                           const Reference& ref) {
  return Controller(problem).control_cost_grad_u(x0, u, ref);
}

Matrix mpc_vjp(const MpcProblem& problem, const MpcSolution& solution, const Matrix& upstream) {
  return Controller(problem).vjp(solution, upstream);
}

Matrix riccati_lqt(const MpcProblem& problem, const Vector& x0, const Reference& ref) {
  problem.validate();
  const Eigen::Index n = problem.state_dim();
  const Eigen::Index m = problem.control_dim();
  const int f = problem.horizon;
  if (x0.size() != n || ref.rows() != n || ref.cols() != f) {
    throw Error(ErrorCode::DimensionMismatch, "riccati_lqt: x0 or reference has wrong shape");
  }
  const Eigen::MatrixXd a = problem.a;
  const Eigen::MatrixXd b = problem.b;
  const Eigen::MatrixXd q = problem.q;
  const Eigen::MatrixXd r = problem.r;

  // V_t(x) = x' P_t x - 2 p_t' x + const; control law u_t = -K_t x_t + k_t.
  std::vector<Eigen::MatrixXd> gains(static_cast<std::size_t>(f));
  std::vector<Eigen::VectorXd> feedforward(static_cast<std::size_t>(f));
  Eigen::MatrixXd p = q;
  Eigen::VectorXd pv = q * Eigen::VectorXd(ref.col(f - 1));
  for (int t = f - 1; t >= 0; --t) {
    const Eigen::MatrixXd bt_p = b.transpose() * p;
    const Eigen::LLT<Eigen::MatrixXd> g(r + bt_p * b);
    const auto ut = static_cast<std::size_t>(t);
    gains[ut] = g.solve(bt_p * a);
    feedforward[ut] = g.solve(b.transpose() * pv);
    const Eigen::MatrixXd at_p_b = a.transpose() * p * b;
    Eigen::MatrixXd p_next = a.transpose() * p * a - at_p_b * gains[ut];
    Eigen::VectorXd pv_next = a.transpose() * pv - at_p_b * feedforward[ut];
    if (t >= 1) {
      p_next += q;
      pv_next += q * Eigen::VectorXd(ref.col(t - 1));
    }
    p = 0.5 * (p_next + p_next.transpose());
    pv = pv_next;
  }
  Matrix u(m, f);
  Eigen::VectorXd x = x0;
  for (int t = 0; t < f; ++t) {
    const auto ut = static_cast<std::size_t>(t);
    const Eigen::VectorXd ctl = -gains[ut] * x + feedforward[ut];
    u.col(t) = ctl;
    x = a * x + b * ctl;
  }
  return u;
}

}  // namespace advcast
