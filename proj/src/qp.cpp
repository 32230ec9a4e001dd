#include "xjunction/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/SparseCholesky>

namespace xjunction {

namespace {

using Eigen::Index;
using Eigen::VectorXd;
using Triplets = std::vector<Eigen::Triplet<double>>;

constexpr double kInf = std::numeric_limits<double>::infinity();

double inf_norm(const VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

// Columns of a column-major sparse matrix, infinity norm.
VectorXd col_norms(const SparseMatrix& M) {
  VectorXd n = VectorXd::Zero(M.cols());
  for (Index j = 0; j < M.outerSize(); ++j)
    for (SparseMatrix::InnerIterator it(M, j); it; ++it)
      n[j] = std::max(n[j], std::abs(it.value()));
  return n;
}

VectorXd row_norms(const SparseMatrix& M) {
  VectorXd n = VectorXd::Zero(M.rows());
  for (Index j = 0; j < M.outerSize(); ++j)
    for (SparseMatrix::InnerIterator it(M, j); it; ++it)
      n[it.row()] = std::max(n[it.row()], std::abs(it.value()));
  return n;
}

VectorXd clamp(const VectorXd& v, const VectorXd& l, const VectorXd& u) {
  return v.cwiseMax(l).cwiseMin(u);
}

// Support function of the box [l, u] at y, skipping zero entries so that
// infinite bounds with zero multipliers do not contribute.
double support(const VectorXd& y, const VectorXd& l, const VectorXd& u) {
  double s = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    if (y[i] > 0.0) s += u[i] * y[i];
    else if (y[i] < 0.0) s += l[i] * y[i];
  }
  return s;
}

// The program in the form ½xᵀPx + qᵀx, l ≤ Ax ≤ u.
struct Standard {
  SparseMatrix P;  // full symmetric
  VectorXd q;
  SparseMatrix A;
  VectorXd l, u;
  Index m_eq = 0, m_ineq = 0, m_box = 0;
};

Standard standardize(const QuadraticProgram& qp) {
  Standard s;
  const Index n = qp.variables();
  s.P = qp.P;
  s.q = qp.q;
  s.m_eq = qp.A_eq.rows();
  s.m_ineq = qp.A_ineq.rows();
  s.m_box = qp.has_box() ? n : 0;
  const Index m = s.m_eq + s.m_ineq + s.m_box;
  Triplets t;
  t.reserve(qp.A_eq.nonZeros() + qp.A_ineq.nonZeros() + s.m_box);
  auto append = [&](const SparseMatrix& M, Index offset) {
    for (Index j = 0; j < M.outerSize(); ++j)
      for (SparseMatrix::InnerIterator it(M, j); it; ++it)
        t.emplace_back(offset + it.row(), it.col(), it.value());
  };
  if (qp.A_eq.rows()) append(qp.A_eq, 0);
  if (qp.A_ineq.rows()) append(qp.A_ineq, s.m_eq);
  for (Index i = 0; i < s.m_box; ++i) t.emplace_back(s.m_eq + s.m_ineq + i, i, 1.0);
  s.A.resize(m, n);
  s.A.setFromTriplets(t.begin(), t.end());
  s.l.resize(m);
  s.u.resize(m);
  s.l << qp.b_eq, VectorXd::Constant(s.m_ineq, -kInf), (s.m_box ? qp.lo : VectorXd());
  s.u << qp.b_eq, qp.b_ineq, (s.m_box ? qp.hi : VectorXd());
  return s;
}

struct Scaling {
  VectorXd D, E;
  double c = 1.0;
};

Scaling ruiz(Standard& s, int iterations) {
  const Index n = s.q.size(), m = s.l.size();
  Scaling sc{VectorXd::Ones(n), VectorXd::Ones(m), 1.0};
  auto factor = [](double norm) {
    if (norm < 1e-4) return 1.0;
    return std::clamp(1.0 / std::sqrt(norm), 1e-4, 1e4);
  };
  for (int k = 0; k < iterations; ++k) {
    const VectorXd pc = col_norms(s.P), ac = col_norms(s.A), ar = row_norms(s.A);
    VectorXd dD(n), dE(m);
    for (Index j = 0; j < n; ++j) dD[j] = factor(std::max(pc[j], ac[j]));
    for (Index i = 0; i < m; ++i) dE[i] = factor(ar[i]);
    s.P = dD.asDiagonal() * s.P * dD.asDiagonal();
    s.A = dE.asDiagonal() * s.A * dD.asDiagonal();
    s.q = dD.cwiseProduct(s.q);
    sc.D = sc.D.cwiseProduct(dD);
    sc.E = sc.E.cwiseProduct(dE);

    const VectorXd pn = col_norms(s.P);
    const double mean = n ? pn.mean() : 0.0;
    double g = std::max(mean, inf_norm(s.q));
    g = g < 1e-4 ? 1.0 : std::clamp(1.0 / g, 1e-4, 1e4);
    s.P *= g;
    s.q *= g;
    sc.c *= g;
  }
  s.l = sc.E.cwiseProduct(s.l);
  s.u = sc.E.cwiseProduct(s.u);
  return sc;
}

// Quasi-definite KKT matrix [[P + σI, Aᵀ], [A, -diag(1/ρ)]], lower triangle.
SparseMatrix kkt_matrix(const SparseMatrix& P, const SparseMatrix& A, double sigma,
                        const VectorXd& neg_diag) {
  const Index n = P.rows(), m = A.rows();
  Triplets t;
  t.reserve(P.nonZeros() + A.nonZeros() + n + m);
  for (Index j = 0; j < P.outerSize(); ++j)
    for (SparseMatrix::InnerIterator it(P, j); it; ++it)
      if (it.row() >= it.col()) t.emplace_back(it.row(), it.col(), it.value());
  for (Index i = 0; i < n; ++i) t.emplace_back(i, i, sigma);
  for (Index j = 0; j < A.outerSize(); ++j)
    for (SparseMatrix::InnerIterator it(A, j); it; ++it)
      t.emplace_back(n + it.row(), it.col(), it.value());
  for (Index i = 0; i < m; ++i) t.emplace_back(n + i, n + i, -neg_diag[i]);
  SparseMatrix K(n + m, n + m);
  K.setFromTriplets(t.begin(), t.end());
  return K;
}

class KktSolver {
 public:
  void factor(const SparseMatrix& K) {
    if (!analyzed_) {
      ldlt_.analyzePattern(K);
      analyzed_ = true;
    }
    ldlt_.factorize(K);
    if (ldlt_.info() != Eigen::Success) throw QpError("KKT factorization failed");
  }
  VectorXd solve(const VectorXd& rhs) const { return ldlt_.solve(rhs); }

 private:
  Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower> ldlt_;
  bool analyzed_ = false;
};

struct Unscaled {
  VectorXd x, z, y;
};

Unscaled unscale(const Scaling& sc, const VectorXd& x, const VectorXd& z, const VectorXd& y) {
  return {sc.D.cwiseProduct(x), z.cwiseQuotient(sc.E), sc.E.cwiseProduct(y) / sc.c};
}

struct Tolerances {
  double primal = 0.0;
  double dual = 0.0;
};

struct Measures {
  QpResiduals r;
  Tolerances tol;
  double admm_primal = 0.0;  // ‖Ax − z‖∞
};

Measures measure(const Standard& o, const QpSettings& st, const Unscaled& u) {
  Measures m;
  const VectorXd Ax = o.A * u.x;
  const VectorXd Px = o.P * u.x;
  const VectorXd Aty = o.A.transpose() * u.y;
  m.admm_primal = inf_norm(Ax - u.z);
  m.r.primal = inf_norm(Ax - clamp(Ax, o.l, o.u));
  m.r.dual = inf_norm(Px + o.q + Aty);
  m.r.gap = std::abs(u.x.dot(Px) + o.q.dot(u.x) + support(u.y, o.l, o.u));
  m.tol.primal = st.eps_abs + st.eps_rel * std::max(inf_norm(Ax), inf_norm(u.z));
  m.tol.dual =
      st.eps_abs + st.eps_rel * std::max({inf_norm(Px), inf_norm(Aty), inf_norm(o.q)});
  return m;
}

VectorXd row_rho(const Standard& s, double rho) {
  VectorXd r(s.l.size());
  for (Index i = 0; i < r.size(); ++i) {
    if (std::isinf(s.l[i]) && std::isinf(s.u[i])) r[i] = 1e-6;
    else if (s.l[i] == s.u[i]) r[i] = 1e3 * rho;
    else r[i] = rho;
  }
  return r;
}

struct Polished {
  VectorXd x, y;
};

// Solves the equality-constrained problem on the guessed active set.
std::optional<Polished> polish(const Standard& s, const VectorXd& z, const VectorXd& y) {
  const Index n = s.q.size(), m = s.l.size();
  std::vector<Index> rows;
  VectorXd target(m);
  for (Index i = 0; i < m; ++i) {
    if (s.l[i] == s.u[i]) {
      rows.push_back(i);
      target[i] = s.l[i];
    } else if (z[i] - s.l[i] < -y[i]) {
      rows.push_back(i);
      target[i] = s.l[i];
    } else if (s.u[i] - z[i] < y[i]) {
      rows.push_back(i);
      target[i] = s.u[i];
    }
  }
  const Index k = static_cast<Index>(rows.size());
  Triplets t;
  for (Index j = 0; j < s.A.outerSize(); ++j)
    for (SparseMatrix::InnerIterator it(s.A, j); it; ++it) {
      const auto pos = std::lower_bound(rows.begin(), rows.end(), it.row());
      if (pos != rows.end() && *pos == it.row())
        t.emplace_back(pos - rows.begin(), it.col(), it.value());
    }
  SparseMatrix Ar(k, n);
  Ar.setFromTriplets(t.begin(), t.end());
  VectorXd b(k);
  for (Index i = 0; i < k; ++i) b[i] = target[rows[i]];

  constexpr double delta = 1e-9;
  const SparseMatrix Kd = kkt_matrix(s.P, Ar, delta, VectorXd::Constant(k, delta));
  const SparseMatrix K0 = kkt_matrix(s.P, Ar, 0.0, VectorXd::Zero(k));
  const SparseMatrix K0full = SparseMatrix(K0.selfadjointView<Eigen::Lower>());
  Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower> ldlt(Kd);
  if (ldlt.info() != Eigen::Success) return std::nullopt;
  VectorXd rhs(n + k);
  rhs << -s.q, b;
  VectorXd sol = ldlt.solve(rhs);
  for (int it = 0; it < 5; ++it) sol += ldlt.solve(rhs - K0full * sol);
  if (!sol.allFinite()) return std::nullopt;
  Polished p{sol.head(n), VectorXd::Zero(m)};
  for (Index i = 0; i < k; ++i) p.y[rows[i]] = sol[n + i];
  return p;
}

bool signs_consistent(const Standard& s, const VectorXd& x, const VectorXd& y, double tol) {
  const VectorXd Ax = s.A * x;
  for (Index i = 0; i < y.size(); ++i) {
    if (s.l[i] == s.u[i]) continue;
    // A positive multiplier needs the upper bound active, a negative one the lower.
    if (y[i] > tol && !(std::abs(Ax[i] - s.u[i]) <= 1e-6 * (1.0 + std::abs(s.u[i]))))
      return false;
    if (y[i] < -tol && !(std::abs(Ax[i] - s.l[i]) <= 1e-6 * (1.0 + std::abs(s.l[i]))))
      return false;
  }
  return true;
}

bool primal_infeasible(const Standard& o, const VectorXd& dy, double eps) {
  const double ny = inf_norm(dy);
  if (!(ny > 1e-12)) return false;
  if (inf_norm(o.A.transpose() * dy) > eps * ny) return false;
  double s = 0.0;
  for (Index i = 0; i < dy.size(); ++i) {
    if (std::abs(dy[i]) <= eps * ny) continue;
    const double bound = dy[i] > 0.0 ? o.u[i] : o.l[i];
    if (std::isinf(bound)) return false;
    s += bound * dy[i];
  }
  return s < -eps * ny;
}

bool dual_infeasible(const Standard& o, const VectorXd& dx, double eps) {
  const double nx = inf_norm(dx);
  if (!(nx > 1e-12)) return false;
  if (inf_norm(o.P * dx) > eps * nx) return false;
  if (!(o.q.dot(dx) < -eps * nx)) return false;
  const VectorXd Adx = o.A * dx;
  for (Index i = 0; i < Adx.size(); ++i) {
    const bool lo = std::isfinite(o.l[i]), hi = std::isfinite(o.u[i]);
    if (lo && hi && std::abs(Adx[i]) > eps * nx) return false;
    if (lo && !hi && Adx[i] < -eps * nx) return false;
    if (!lo && hi && Adx[i] > eps * nx) return false;
  }
  return true;
}

void fill_solution(QpSolution& out, const Standard& o, const Unscaled& u, const Measures& m) {
  out.v = u.x;
  out.residuals = m.r;
  out.lambda_eq = u.y.head(o.m_eq);
  out.mu_ineq = u.y.segment(o.m_eq, o.m_ineq);
  out.mu_box = u.y.tail(o.m_box);
  out.objective = 0.5 * u.x.dot(o.P * u.x) + o.q.dot(u.x);
}

}  // namespace

QuadraticProgram QuadraticProgram::empty(Eigen::Index n) {
  QuadraticProgram qp;
  qp.P.resize(n, n);
  qp.q = VectorXd::Zero(n);
  qp.A_eq.resize(0, n);
  qp.b_eq.resize(0);
  qp.A_ineq.resize(0, n);
  qp.b_ineq.resize(0);
  return qp;
}

void QuadraticProgram::validate() const {
  const Index n = q.size();
  if (P.rows() != n || P.cols() != n) throw QpError("P must be n x n with n = size of q");
  if ((A_eq.rows() > 0 && A_eq.cols() != n) || A_eq.rows() != b_eq.size())
    throw QpError("equality constraints have inconsistent dimensions");
  if ((A_ineq.rows() > 0 && A_ineq.cols() != n) || A_ineq.rows() != b_ineq.size())
    throw QpError("inequality constraints have inconsistent dimensions");
  if (lo.size() != hi.size() || (lo.size() != 0 && lo.size() != n))
    throw QpError("bounds must be empty or of size n");
  const SparseMatrix asym = SparseMatrix(P.transpose()) - P;
  double scale = 1.0;
  for (Index j = 0; j < P.outerSize(); ++j)
    for (SparseMatrix::InnerIterator it(P, j); it; ++it)
      scale = std::max(scale, std::abs(it.value()));
  for (Index j = 0; j < asym.outerSize(); ++j)
    for (SparseMatrix::InnerIterator it(asym, j); it; ++it)
      if (std::abs(it.value()) > 1e-12 * scale) throw QpError("P is not symmetric");
  for (Index i = 0; i < lo.size(); ++i)
    if (!(lo[i] <= hi[i])) throw QpError("lower bound exceeds upper bound at " + std::to_string(i));
  if (!q.allFinite() || !b_eq.allFinite()) throw QpError("q and b_eq must be finite");
}

nlohmann::json QuadraticProgram::to_json() const {
  auto dense = [](const SparseMatrix& M) {
    nlohmann::json rows = nlohmann::json::array();
    const Eigen::MatrixXd D(M);
    for (Index i = 0; i < D.rows(); ++i) {
      nlohmann::json r = nlohmann::json::array();
      for (Index j = 0; j < D.cols(); ++j) r.push_back(D(i, j));
      rows.push_back(r);
    }
    return rows;
  };
  auto vec = [](const VectorXd& v) {
    nlohmann::json a = nlohmann::json::array();
    for (Index i = 0; i < v.size(); ++i) {
      if (std::isinf(v[i])) a.push_back(v[i] > 0 ? "inf" : "-inf");
      else a.push_back(v[i]);
    }
    return a;
  };
  return {{"P", dense(P)},       {"q", vec(q)},         {"A_eq", dense(A_eq)},
          {"b_eq", vec(b_eq)},   {"A_ineq", dense(A_ineq)}, {"b_ineq", vec(b_ineq)},
          {"lo", vec(lo)},       {"hi", vec(hi)}};
}

const char* to_string(QpStatus status) {
  switch (status) {
    case QpStatus::optimal: return "optimal";
    case QpStatus::infeasible: return "infeasible";
    case QpStatus::unbounded: return "unbounded";
    case QpStatus::max_iter: return "max_iter";
  }
  return "unknown";
}

QpSolution solve(const QuadraticProgram& qp, const QpSettings& st) {
  qp.validate();
  const Standard original = standardize(qp);
  Standard s = original;
  const Scaling sc = ruiz(s, st.scaling_iterations);
  const Index n = s.q.size(), m = s.l.size();

  double rho = st.rho;
  VectorXd rho_vec = row_rho(s, rho);
  KktSolver kkt;
  kkt.factor(kkt_matrix(s.P, s.A, st.sigma, rho_vec.cwiseInverse()));

  VectorXd x = VectorXd::Zero(n), z = VectorXd::Zero(m), y = VectorXd::Zero(m);
  z = clamp(z, s.l, s.u);
  VectorXd rhs(n + m);

  QpSolution out;
  double best_score = kInf;
  double last_polish = kInf;

  for (int k = 1; k <= st.max_iterations; ++k) {
    rhs << st.sigma * x - s.q, z - y.cwiseQuotient(rho_vec);
    const VectorXd sol = kkt.solve(rhs);
    const VectorXd xt = sol.head(n);
    const VectorXd zt = z + (sol.tail(m) - y).cwiseQuotient(rho_vec);
    const VectorXd x_new = st.alpha * xt + (1.0 - st.alpha) * x;
    const VectorXd z_hat = st.alpha * zt + (1.0 - st.alpha) * z;
    const VectorXd z_new = clamp(z_hat + y.cwiseQuotient(rho_vec), s.l, s.u);
    const VectorXd y_new = y + rho_vec.cwiseProduct(z_hat - z_new);
    const VectorXd dx = x_new - x, dy = y_new - y;
    x = x_new;
    z = z_new;
    y = y_new;
    out.iterations = k;

    const bool last = k == st.max_iterations;
    if (k % st.check_interval != 0 && !last) continue;

    const Unscaled u = unscale(sc, x, z, y);
    const Measures ms = measure(original, st, u);
    const double score = std::max(ms.admm_primal / ms.tol.primal, ms.r.dual / ms.tol.dual);
    if (score < best_score) {
      best_score = score;
      fill_solution(out, original, u, ms);
    }
    if (ms.admm_primal <= ms.tol.primal && ms.r.dual <= ms.tol.dual) {
      out.status = QpStatus::optimal;
      fill_solution(out, original, u, ms);
      break;
    }

    if (st.polish && score < 1e4 && score < 0.1 * last_polish) {
      last_polish = score;
      if (const auto p = polish(s, z, y)) {
        const VectorXd zp = clamp(s.A * p->x, s.l, s.u);
        const Unscaled up = unscale(sc, p->x, zp, p->y);
        const Measures mp = measure(original, st, up);
        if (mp.r.primal <= mp.tol.primal && mp.r.dual <= mp.tol.dual &&
            signs_consistent(original, up.x, up.y, mp.tol.dual)) {
          out.status = QpStatus::optimal;
          out.polished = true;
          fill_solution(out, original, up, mp);
          break;
        }
      }
    }

    const VectorXd dy_u = sc.E.cwiseProduct(dy) / sc.c;
    if (primal_infeasible(original, dy_u, st.eps_infeasible)) {
      out.status = QpStatus::infeasible;
      out.certificate = dy_u / inf_norm(dy_u);
      break;
    }
    const VectorXd dx_u = sc.D.cwiseProduct(dx);
    if (dual_infeasible(original, dx_u, st.eps_infeasible)) {
      out.status = QpStatus::unbounded;
      out.certificate = dx_u / inf_norm(dx_u);
      break;
    }

    if (k % st.adapt_interval == 0 && m > 0) {
      const VectorXd Ax = s.A * x, Px = s.P * x, Aty = s.A.transpose() * y;
      const double pn = inf_norm(Ax - z) / std::max({inf_norm(Ax), inf_norm(z), 1e-30});
      const double dn = inf_norm(Px + s.q + Aty) /
                        std::max({inf_norm(Px), inf_norm(Aty), inf_norm(s.q), 1e-30});
      if (pn > 0.0 && dn > 0.0) {
        const double rho_new = std::clamp(rho * std::sqrt(pn / dn), 1e-6, 1e6);
        if (rho_new > 5.0 * rho || rho_new < 0.2 * rho) {
          rho = rho_new;
          rho_vec = row_rho(s, rho);
          kkt.factor(kkt_matrix(s.P, s.A, st.sigma, rho_vec.cwiseInverse()));
        }
      }
    }
  }
  return out;
}

Eigen::VectorXd solve_equality_ls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                                  const Eigen::MatrixXd& C, const Eigen::VectorXd& d) {
  const Index n = A.cols();
  if (A.rows() != b.size()) throw QpError("A and b have inconsistent dimensions");
  if (C.rows() != d.size() || (C.rows() > 0 && C.cols() != n))
    throw QpError("C and d have inconsistent dimensions");
  const Index p = C.rows();

  // Rows that lie in the span of the earlier ones.
  std::vector<Index> dependent;
  Eigen::MatrixXd basis(n, 0);
  for (Index i = 0; i < p; ++i) {
    VectorXd r = C.row(i).transpose();
    const double norm = r.norm();
    for (int pass = 0; pass < 2; ++pass) r -= basis * (basis.transpose() * r);
    if (norm == 0.0 || r.norm() <= 1e-10 * norm) {
      dependent.push_back(i);
      continue;
    }
    basis.conservativeResize(n, basis.cols() + 1);
    basis.col(basis.cols() - 1) = r.normalized();
  }
  if (!dependent.empty()) {
    std::string rows;
    for (const Index i : dependent) rows += (rows.empty() ? "" : ", ") + std::to_string(i);
    throw QpError("constraint matrix is rank deficient; dependent rows: " + rows);
  }

  VectorXd vp = VectorXd::Zero(n);
  Eigen::MatrixXd N = Eigen::MatrixXd::Identity(n, n);
  if (p > 0) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(C.transpose());
    const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
    const Eigen::MatrixXd R = qr.matrixQR().topRows(p).triangularView<Eigen::Upper>();
    const VectorXd w = R.transpose().triangularView<Eigen::Lower>().solve(d);
    vp = Q.leftCols(p) * w;
    N = Q.rightCols(n - p);
  }
  if (N.cols() == 0) return vp;
  const Eigen::MatrixXd AN = A * N;
  const VectorXd w = AN.completeOrthogonalDecomposition().solve(b - A * vp);
  return vp + N * w;
}

}  // namespace xjunction
