#pragma once

#include <functional>

#include <Eigen/Dense>

namespace durastack::detail {

/// Column means and population standard deviations (1/n).
struct ColumnScale {
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;
};

ColumnScale column_scale(const Eigen::MatrixXd& X);

/// Orthonormal basis of the null space of the row vector c (length q): a
/// q x (q-1) matrix Z with c * Z = 0.
Eigen::MatrixXd null_space_of_row(const Eigen::RowVectorXd& c);

/// Objective returning f(x) and writing the gradient into g.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& g)>;

struct LbfgsResult {
  Eigen::VectorXd x;
  double f = 0.0;
  double grad_norm = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Limited-memory BFGS with a backtracking Armijo line search. Stops when the
/// gradient Euclidean norm is <= tol.
LbfgsResult lbfgs(const Objective& objective, Eigen::VectorXd x0, double tol = 1e-6,
                  std::size_t max_iterations = 2000, std::size_t memory = 8);

/// Solves (A + ridge * I) x = b for symmetric positive semi-definite A.
Eigen::VectorXd ridge_solve(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, double ridge);

}  // namespace durastack::detail
