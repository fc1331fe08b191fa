#include "durastack/detail/linalg.hpp"

#include <cmath>
#include <deque>

#include "durastack/errors.hpp"

namespace durastack::detail {

ColumnScale column_scale(const Eigen::MatrixXd& X) {
  ColumnScale s;
  const auto n = static_cast<double>(X.rows());
  s.mean = X.colwise().mean().transpose();
  s.sd.resize(X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    double ss = 0.0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const double d = X(i, j) - s.mean(j);
      ss += d * d;
    }
    s.sd(j) = n > 0 ? std::sqrt(ss / n) : 0.0;
  }
  return s;
}

Eigen::MatrixXd null_space_of_row(const Eigen::RowVectorXd& c) {
  const Eigen::Index q = c.size();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(c.transpose());
  Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(q, q);
  return Q.rightCols(q - 1);
}

LbfgsResult lbfgs(const Objective& objective, Eigen::VectorXd x0, double tol,
                  std::size_t max_iterations, std::size_t memory) {
  LbfgsResult r;
  r.x = std::move(x0);
  Eigen::VectorXd g(r.x.size());
  r.f = objective(r.x, g);
  if (!std::isfinite(r.f)) throw NumericError("non-finite objective at the starting point");
  std::deque<Eigen::VectorXd> S, Y;
  std::deque<double> rho;
  Eigen::VectorXd x_new(r.x.size()), g_new(r.x.size());

  for (r.iterations = 0; r.iterations < max_iterations; ++r.iterations) {
    r.grad_norm = g.norm();
    if (r.grad_norm <= tol) {
      r.converged = true;
      return r;
    }
    // two-loop recursion
    Eigen::VectorXd q = g;
    std::vector<double> a(S.size());
    for (std::size_t k = S.size(); k-- > 0;) {
      a[k] = rho[k] * S[k].dot(q);
      q -= a[k] * Y[k];
    }
    if (!S.empty()) q *= S.back().dot(Y.back()) / Y.back().squaredNorm();
    for (std::size_t k = 0; k < S.size(); ++k) {
      const double b = rho[k] * Y[k].dot(q);
      q += (a[k] - b) * S[k];
    }
    Eigen::VectorXd d = -q;
    double slope = g.dot(d);
    if (!(slope < 0.0)) {
      d = -g;
      slope = -g.squaredNorm();
      S.clear();
      Y.clear();
      rho.clear();
    }

    double step = 1.0;
    if (S.empty()) step = std::min(1.0, 1.0 / std::max(r.grad_norm, 1e-300));
    double f_new = 0.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = r.x + step * d;
      f_new = objective(x_new, g_new);
      if (std::isfinite(f_new) && f_new <= r.f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      // No descent possible at working precision.
      r.grad_norm = g.norm();
      r.converged = r.grad_norm <= tol;
      return r;
    }
    Eigen::VectorXd s = x_new - r.x;
    Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      S.push_back(std::move(s));
      Y.push_back(std::move(y));
      rho.push_back(1.0 / sy);
      if (S.size() > memory) {
        S.pop_front();
        Y.pop_front();
        rho.pop_front();
      }
    }
    r.x = x_new;
    g = g_new;
    r.f = f_new;
  }
  r.grad_norm = g.norm();
  r.converged = r.grad_norm <= tol;
  return r;
}

Eigen::VectorXd ridge_solve(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, double ridge) {
  Eigen::MatrixXd M = A;
  M.diagonal().array() += ridge;
  Eigen::LLT<Eigen::MatrixXd> llt(M);
  if (llt.info() == Eigen::Success) return llt.solve(b);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
  if (ldlt.info() != Eigen::Success) throw NumericError("ridge system could not be factorised");
  return ldlt.solve(b);
}

}  // namespace durastack::detail
