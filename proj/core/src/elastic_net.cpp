#include <cmath>
#include <vector>

#include <fmt/format.h>

#include "durastack/detail/linalg.hpp"
#include "durastack/errors.hpp"
#include "durastack/learners.hpp"

namespace durastack {

namespace {

constexpr double kTolerance = 1e-7;
constexpr std::size_t kMaxSweeps = 100000;

double soft_threshold(double z, double g) {
  if (z > g) return z - g;
  if (z < -g) return z + g;
  return 0.0;
}

}  // namespace

ElasticNetModel fit_elastic_net(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda,
                                double alpha) {
  const Eigen::Index n = X.rows(), p = X.cols();
  if (n < 2) throw DataError("elastic net needs at least two rows");
  if (y.size() != n) throw DataError("elastic net: outcome length does not match design rows");
  if (!X.allFinite() || !y.allFinite()) throw NumericError("elastic net: non-finite input");
  if (!(lambda >= 0.0) || !(alpha >= 0.0 && alpha <= 1.0)) {
    throw UsageError(fmt::format("elastic net: invalid lambda={} alpha={}", lambda, alpha));
  }

  const auto scale = detail::column_scale(X);
  const double y_mean = y.mean();
  const double dn = static_cast<double>(n);

  std::vector<Eigen::Index> usable;
  Eigen::MatrixXd Z(n, p);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    if (!(scale.sd(j) > 1e-12 * (1.0 + std::abs(scale.mean(j))))) {
      Z.col(j).setZero();
      continue;
    }
    Z.col(j) = (X.col(j).array() - scale.mean(j)) / scale.sd(j);
    v(j) = Z.col(j).squaredNorm() / dn;
    usable.push_back(j);
  }

  const double l1 = lambda * alpha;
  const double l2 = lambda * (1.0 - alpha);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd r = y.array() - y_mean;

  auto sweep = [&](const std::vector<Eigen::Index>& cols) {
    double max_change = 0.0;
    for (auto j : cols) {
      const double z = Z.col(j).dot(r) / dn + v(j) * beta(j);
      const double b = soft_threshold(z, l1) / (v(j) + l2);
      const double delta = b - beta(j);
      if (delta != 0.0) {
        r.noalias() -= delta * Z.col(j);
        beta(j) = b;
        max_change = std::max(max_change, std::abs(delta));
      }
    }
    return max_change;
  };

  std::size_t sweeps = 0;
  bool converged = false;
  while (sweeps < kMaxSweeps) {
    ++sweeps;
    if (sweep(usable) <= kTolerance) {
      converged = true;
      break;
    }
    std::vector<Eigen::Index> active;
    for (auto j : usable) {
      if (beta(j) != 0.0) active.push_back(j);
    }
    while (sweeps < kMaxSweeps) {
      ++sweeps;
      if (sweep(active) <= kTolerance) break;
    }
  }
  if (!converged) {
    throw NumericError(fmt::format("elastic net did not converge in {} sweeps (lambda={}, alpha={})",
                                   kMaxSweeps, lambda, alpha));
  }

  ElasticNetModel m;
  m.sweeps = sweeps;
  m.beta = Eigen::VectorXd::Zero(p);
  m.intercept = y_mean;
  for (auto j : usable) {
    m.beta(j) = beta(j) / scale.sd(j);
    m.intercept -= m.beta(j) * scale.mean(j);
  }
  return m;
}

}  // namespace durastack
