#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "durastack/detail/linalg.hpp"
#include "durastack/errors.hpp"
#include "durastack/learners.hpp"
#include "durastack/metrics.hpp"

namespace durastack {

namespace {

constexpr int kDegree = 3;

// All cubic B-spline basis values at u in [0, 1] (and first derivatives).
void bspline(const std::vector<double>& t, double u, Eigen::VectorXd& value, Eigen::VectorXd* deriv) {
  const auto q = static_cast<Eigen::Index>(t.size()) - kDegree - 1;
  // knot span: t[mu] <= u < t[mu + 1], clamped so u == 1 uses the last span
  std::size_t mu = kDegree;
  while (mu + 1 < t.size() - kDegree - 1 && u >= t[mu + 1]) ++mu;

  // Cox-de Boor on the nonzero functions N_{mu-d..mu, d}
  std::array<double, kDegree + 1> N{};
  std::array<double, kDegree> N2{};  // degree-2 values for the derivative
  N[0] = 1.0;
  for (int d = 1; d <= kDegree; ++d) {
    if (d == kDegree) std::copy_n(N.begin(), kDegree, N2.begin());
    std::array<double, kDegree + 1> next{};
    for (int r = 0; r <= d; ++r) {
      const std::size_t i = mu - d + r;  // function index
      double v = 0.0;
      if (r > 0) {
        const double den = t[i + d] - t[i];
        if (den > 0) v += (u - t[i]) / den * N[r - 1];
      }
      if (r < d) {
        const double den = t[i + d + 1] - t[i + 1];
        if (den > 0) v += (t[i + d + 1] - u) / den * N[r];
      }
      next[r] = v;
    }
    N = next;
  }
  value = Eigen::VectorXd::Zero(q);
  for (int r = 0; r <= kDegree; ++r) value(static_cast<Eigen::Index>(mu - kDegree + r)) = N[r];
  if (deriv) {
    *deriv = Eigen::VectorXd::Zero(q);
    // B'_{i,3} = 3 [N_{i,2} / (t_{i+3} - t_i) - N_{i+1,2} / (t_{i+4} - t_{i+1})]
    auto n2 = [&](std::size_t i) -> double {
      if (i < mu - (kDegree - 1) || i > mu) return 0.0;
      return N2[i - (mu - (kDegree - 1))];
    };
    for (std::size_t i = mu - kDegree; i <= mu; ++i) {
      double d = 0.0;
      const double a = t[i + kDegree] - t[i];
      const double b = t[i + kDegree + 1] - t[i + 1];
      if (a > 0) d += n2(i) / a;
      if (b > 0) d -= n2(i + 1) / b;
      (*deriv)(static_cast<Eigen::Index>(i)) = kDegree * d;
    }
  }
}

Eigen::VectorXd basis_at(const std::vector<double>& t, double u) {
  Eigen::VectorXd v, d;
  if (u < 0.0) {
    bspline(t, 0.0, v, &d);
    return v + u * d;
  }
  if (u > 1.0) {
    bspline(t, 1.0, v, &d);
    return v + (u - 1.0) * d;
  }
  bspline(t, u, v, nullptr);
  return v;
}

std::vector<double> knot_vector(std::vector<double> u, std::size_t knots) {
  std::vector<double> pts(knots);
  for (std::size_t i = 0; i < knots; ++i) {
    pts[i] = quantile(u, static_cast<double>(i) / static_cast<double>(knots - 1));
  }
  pts.front() = 0.0;
  pts.back() = 1.0;
  bool distinct = true;
  for (std::size_t i = 1; i < knots; ++i) distinct = distinct && pts[i] > pts[i - 1];
  if (!distinct) {
    for (std::size_t i = 0; i < knots; ++i) pts[i] = static_cast<double>(i) / static_cast<double>(knots - 1);
  }
  std::vector<double> t(kDegree, 0.0);
  t.insert(t.end(), pts.begin(), pts.end());
  t.insert(t.end(), kDegree, 1.0);
  return t;
}

// Second divided differences over the Greville abscissae, scaled by their
// mean spacing; the null space is exactly the linear functions.
Eigen::MatrixXd difference_penalty(const std::vector<double>& t) {
  const std::size_t q = t.size() - kDegree - 1;
  std::vector<double> g(q);
  for (std::size_t j = 0; j < q; ++j) g[j] = (t[j + 1] + t[j + 2] + t[j + 3]) / 3.0;
  const double h = (g.back() - g.front()) / static_cast<double>(q - 1);
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(q - 2), static_cast<Eigen::Index>(q));
  for (std::size_t j = 0; j + 2 < q; ++j) {
    const double a = 1.0 / (g[j + 1] - g[j]);
    const double b = 1.0 / (g[j + 2] - g[j + 1]);
    const auto r = static_cast<Eigen::Index>(j);
    D(r, r) = h * a;
    D(r, r + 1) = -h * (a + b);
    D(r, r + 2) = h * b;
  }
  return D;
}

}  // namespace

Eigen::VectorXd SplineTerm::basis(double x) const { return basis_at(knots, (x - lo) / (hi - lo)); }

double SplineTerm::eval(double x) const { return basis(x).dot(Z * coef); }

GamModel fit_gam(const TrainingView& data, double lambda_s, std::size_t knots) {
  const auto& X = data.X;
  const auto& y = data.y;
  const Eigen::Index n = X.rows();
  if (knots < 4) throw UsageError(fmt::format("gam needs at least 4 knots, got {}", knots));
  if (!(lambda_s >= 0.0)) throw UsageError(fmt::format("gam: invalid lambda_s={}", lambda_s));
  if (y.size() != n || n < 2) throw DataError("gam: outcome length does not match design rows");
  if (!X.allFinite() || !y.allFinite()) throw NumericError("gam: non-finite input");

  GamModel m;
  std::vector<bool> smooth(static_cast<std::size_t>(X.cols()), false);
  for (auto name : kSmoothFields) {
    auto col = data.meta.column(name);
    if (!col) continue;
    const double lo = X.col(static_cast<Eigen::Index>(*col)).minCoeff();
    const double hi = X.col(static_cast<Eigen::Index>(*col)).maxCoeff();
    smooth[*col] = true;
    if (!(hi > lo)) continue;  // constant: nothing to smooth
    SplineTerm s;
    s.column = *col;
    s.lo = lo;
    s.hi = hi;
    std::vector<double> u(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) u[static_cast<std::size_t>(i)] = (X(i, static_cast<Eigen::Index>(*col)) - lo) / (hi - lo);
    s.knots = knot_vector(std::move(u), knots);
    m.smooths.push_back(std::move(s));
  }

  // Linear columns, dropping those aliased with the intercept or each other.
  std::vector<std::size_t> candidates;
  for (std::size_t j = 0; j < smooth.size(); ++j) {
    if (!smooth[j]) candidates.push_back(j);
  }
  if (!candidates.empty()) {
    Eigen::MatrixXd L(n, static_cast<Eigen::Index>(candidates.size()));
    for (std::size_t k = 0; k < candidates.size(); ++k) {
      auto c = X.col(static_cast<Eigen::Index>(candidates[k]));
      L.col(static_cast<Eigen::Index>(k)) = c.array() - c.mean();
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(L);
    qr.setThreshold(1e-9);
    qr.compute(L);
    std::vector<std::size_t> keep;
    for (Eigen::Index k = 0; k < qr.rank(); ++k) {
      keep.push_back(candidates[static_cast<std::size_t>(qr.colsPermutation().indices()(k))]);
    }
    std::sort(keep.begin(), keep.end());
    m.linear_columns = std::move(keep);
  }

  // Constrained spline blocks.
  std::vector<Eigen::MatrixXd> blocks;
  Eigen::Index width = 1 + static_cast<Eigen::Index>(m.linear_columns.size());
  Eigen::Index penalty_rows = 0;
  for (auto& s : m.smooths) {
    const auto q = static_cast<Eigen::Index>(s.basis_size());
    Eigen::MatrixXd B(n, q);
    for (Eigen::Index i = 0; i < n; ++i) B.row(i) = s.basis(X(i, static_cast<Eigen::Index>(s.column))).transpose();
    s.Z = detail::null_space_of_row(B.colwise().sum());
    blocks.push_back(B * s.Z);
    width += q - 1;
    penalty_rows += q - 2;
  }

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n + penalty_rows, width);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + penalty_rows);
  A.col(0).head(n).setOnes();
  rhs.head(n) = y;
  Eigen::Index col = 1;
  for (auto j : m.linear_columns) A.col(col++).head(n) = X.col(static_cast<Eigen::Index>(j));
  Eigen::Index row = n;
  const double root = std::sqrt(lambda_s);
  for (std::size_t k = 0; k < m.smooths.size(); ++k) {
    const auto& s = m.smooths[k];
    const auto q = blocks[k].cols();
    A.block(0, col, n, q) = blocks[k];
    if (lambda_s > 0.0) {
      Eigen::MatrixXd P = difference_penalty(s.knots) * s.Z;
      A.block(row, col, P.rows(), q) = root * P;
    }
    row += q - 1;
    col += q;
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  if (qr.rank() < width) {
    throw NumericError(fmt::format(
        "gam: penalized system is singular (rank {} < {} with lambda_s={}); not regularising silently",
        qr.rank(), width, lambda_s));
  }
  Eigen::VectorXd beta = qr.solve(rhs);
  m.intercept = beta(0);
  m.linear_coef = beta.segment(1, static_cast<Eigen::Index>(m.linear_columns.size()));
  col = 1 + static_cast<Eigen::Index>(m.linear_columns.size());
  for (auto& s : m.smooths) {
    const auto q = s.Z.cols();
    s.coef = beta.segment(col, q);
    col += q;
  }
  return m;
}

}  // namespace durastack
