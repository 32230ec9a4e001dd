#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <json.hpp>

namespace xjunction {

class QpError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using SparseMatrix = Eigen::SparseMatrix<double>;

/// minimize ½ vᵀPv + qᵀv
/// subject to A_eq v = b_eq, A_ineq v ≤ b_ineq, lo ≤ v ≤ hi.
/// Empty lo/hi mean no box; infinite entries are allowed.
struct QuadraticProgram {
  SparseMatrix P;
  Eigen::VectorXd q;
  SparseMatrix A_eq;
  Eigen::VectorXd b_eq;
  SparseMatrix A_ineq;
  Eigen::VectorXd b_ineq;
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;

  /// An n-variable program with no constraints and zero cost.
  static QuadraticProgram empty(Eigen::Index n);

  Eigen::Index variables() const { return q.size(); }
  bool has_box() const { return lo.size() > 0; }
  /// Throws QpError on inconsistent sizes, asymmetric P or lo > hi.
  void validate() const;

  nlohmann::json to_json() const;
};

struct QpSettings {
  double eps_abs = 1e-8;
  double eps_rel = 1e-8;
  double eps_infeasible = 1e-7;
  int max_iterations = 20000;
  double rho = 0.1;
  double sigma = 1e-6;
  double alpha = 1.6;
  int scaling_iterations = 10;
  int check_interval = 10;
  int adapt_interval = 50;
  bool polish = true;
};

enum class QpStatus { optimal, infeasible, unbounded, max_iter };
const char* to_string(QpStatus status);

struct QpResiduals {
  double primal = 0.0;  // largest constraint violation
  double dual = 0.0;    // ‖Pv + q + Aᵀy‖∞
  double gap = 0.0;     // |primal objective − dual objective|
};

struct QpSolution {
  Eigen::VectorXd v;
  QpStatus status = QpStatus::max_iter;
  QpResiduals residuals;
  int iterations = 0;
  bool polished = false;
  // Multipliers: equality rows, inequality rows (≥ 0), box rows (positive at
  // the upper bound, negative at the lower bound).
  Eigen::VectorXd lambda_eq;
  Eigen::VectorXd mu_ineq;
  Eigen::VectorXd mu_box;
  // For infeasible programs: the multiplier direction proving infeasibility,
  // in the stacked row order (equalities, inequalities, box). For unbounded
  // ones: the descent direction in v.
  Eigen::VectorXd certificate;
  double objective = 0.0;
};

QpSolution solve(const QuadraticProgram& qp, const QpSettings& settings = {});

/// min ‖Av − b‖² subject to Cv = d. C may have zero rows. Among several
/// minimizers the one of least norm is returned. Throws QpError naming the
/// dependent rows when C is rank deficient.
Eigen::VectorXd solve_equality_ls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                                  const Eigen::MatrixXd& C, const Eigen::VectorXd& d);

}  // namespace xjunction
