#include "durastack/mice.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "durastack/detail/linalg.hpp"
#include "durastack/errors.hpp"
#include "durastack/parallel.hpp"
#include "durastack/random.hpp"

namespace durastack {

namespace {

constexpr std::size_t kNewtonIterations = 100;
constexpr double kNewtonTolerance = 1e-8;
constexpr double kSoftmaxTolerance = 1e-6;

using Rows = std::vector<std::size_t>;

bool is_missing(const Eigen::MatrixXd& X, std::size_t row, const FieldInfo& f) {
  return std::isnan(X(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(f.columns.front())));
}

double class_value(const FieldInfo& f, std::size_t k) {
  return f.kind == FieldKind::categorical ? static_cast<double>(f.levels[k]) : static_cast<double>(k);
}

std::size_t class_of(const FieldInfo& f, double value) {
  if (f.kind != FieldKind::categorical) return value != 0.0 ? 1 : 0;
  for (std::size_t k = 0; k < f.levels.size(); ++k) {
    if (static_cast<double>(f.levels[k]) == value) return k;
  }
  throw DataError(fmt::format("field {}: value {} is not a level", f.name, value));
}

// Builds predictor rows for one field.
class Designer {
 public:
  Designer(const EncodingMeta& meta, const ImputationModelSet& ms, const std::vector<int>& cluster_index)
      : meta_(meta), ms_(ms), cluster_index_(cluster_index) {
    others_.resize(meta.fields.size());
    for (std::size_t f = 0; f < meta.fields.size(); ++f) {
      std::vector<bool> own(meta.width(), false);
      for (auto c : meta.fields[f].columns) own[c] = true;
      for (std::size_t c = 0; c < meta.width(); ++c) {
        if (!own[c]) others_[f].push_back(c);
      }
    }
  }

  Eigen::Index width(std::size_t field, bool with_outcome) const {
    return static_cast<Eigen::Index>(1 + others_[field].size() + ms_.clusters.size() + (with_outcome ? 1 : 0));
  }

  Eigen::MatrixXd build(std::size_t field, bool with_outcome, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                        const Rows& rows) const {
    const auto& other = others_[field];
    const auto K = ms_.clusters.size();
    Eigen::MatrixXd A(static_cast<Eigen::Index>(rows.size()), width(field, with_outcome));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto i = static_cast<Eigen::Index>(rows[r]);
      const auto rr = static_cast<Eigen::Index>(r);
      Eigen::Index c = 0;
      A(rr, c++) = 1.0;
      for (auto j : other) {
        const auto jj = static_cast<Eigen::Index>(j);
        A(rr, c++) = (X(i, jj) - ms_.column_mean(jj)) / ms_.column_sd(jj);
      }
      const int ci = cluster_index_[rows[r]];
      for (std::size_t k = 0; k < K; ++k) {
        A(rr, c++) = ci < 0 ? 1.0 / static_cast<double>(K) : (static_cast<std::size_t>(ci) == k ? 1.0 : 0.0);
      }
      if (with_outcome) A(rr, c++) = (y(i) - ms_.outcome_mean) / ms_.outcome_sd;
    }
    return A;
  }

 private:
  const EncodingMeta& meta_;
  const ImputationModelSet& ms_;
  const std::vector<int>& cluster_index_;
  std::vector<std::vector<std::size_t>> others_;
};

Eigen::VectorXd fit_linear(const Eigen::MatrixXd& A, const Eigen::VectorXd& v) {
  const double n = static_cast<double>(A.rows());
  Eigen::MatrixXd G = A.transpose() * A / n;
  return detail::ridge_solve(G, A.transpose() * v / n, kImputationRidge);
}

double logistic_loss(const Eigen::MatrixXd& A, const Eigen::VectorXd& v, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = A * beta;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double e = eta(i);
    const double log1pexp = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
    loss += log1pexp - v(i) * e;
  }
  return loss / static_cast<double>(A.rows()) + 0.5 * kImputationRidge * beta.squaredNorm();
}

Eigen::VectorXd fit_logistic(const Eigen::MatrixXd& A, const Eigen::VectorXd& v, Eigen::VectorXd beta) {
  const double n = static_cast<double>(A.rows());
  if (beta.size() != A.cols()) beta = Eigen::VectorXd::Zero(A.cols());
  double loss = logistic_loss(A, v, beta);
  for (std::size_t it = 0; it < kNewtonIterations; ++it) {
    const Eigen::VectorXd eta = A * beta;
    Eigen::VectorXd p(eta.size()), w(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      p(i) = 1.0 / (1.0 + std::exp(-eta(i)));
      w(i) = p(i) * (1.0 - p(i));
    }
    const Eigen::VectorXd g = A.transpose() * (p - v) / n + kImputationRidge * beta;
    const Eigen::MatrixXd H = A.transpose() * (A.array().colwise() * w.array()).matrix() / n;
    Eigen::VectorXd step = detail::ridge_solve(H, g, kImputationRidge);
    double scale = 1.0;
    Eigen::VectorXd next = beta - step;
    double next_loss = logistic_loss(A, v, next);
    while (next_loss > loss && scale > 1e-10) {
      scale *= 0.5;
      next = beta - scale * step;
      next_loss = logistic_loss(A, v, next);
    }
    const double change = (scale * step).cwiseAbs().maxCoeff();
    beta = std::move(next);
    loss = next_loss;
    if (change < kNewtonTolerance) break;
  }
  return beta;
}

Eigen::MatrixXd fit_softmax(const Eigen::MatrixXd& A, const std::vector<std::size_t>& cls, std::size_t classes,
                            Eigen::MatrixXd start) {
  const Eigen::Index q = A.cols();
  const auto C = static_cast<Eigen::Index>(classes);
  const double n = static_cast<double>(A.rows());
  if (start.rows() != q || start.cols() != C) start = Eigen::MatrixXd::Zero(q, C);
  detail::Objective objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    const Eigen::Map<const Eigen::MatrixXd> B(x.data(), q, C);
    Eigen::MatrixXd P = A * B;
    double loss = 0.0;
    for (Eigen::Index i = 0; i < P.rows(); ++i) {
      const double mx = P.row(i).maxCoeff();
      double z = 0.0;
      for (Eigen::Index c = 0; c < C; ++c) z += std::exp(P(i, c) - mx);
      const double lse = mx + std::log(z);
      loss += lse - P(i, static_cast<Eigen::Index>(cls[static_cast<std::size_t>(i)]));
      for (Eigen::Index c = 0; c < C; ++c) P(i, c) = std::exp(P(i, c) - lse);
      P(i, static_cast<Eigen::Index>(cls[static_cast<std::size_t>(i)])) -= 1.0;
    }
    g.resize(q * C);
    Eigen::Map<Eigen::MatrixXd> G(g.data(), q, C);
    G = A.transpose() * P / n + kImputationRidge * B;
    return loss / n + 0.5 * kImputationRidge * x.squaredNorm();
  };
  Eigen::VectorXd x0 = Eigen::Map<const Eigen::VectorXd>(start.data(), q * C);
  auto r = detail::lbfgs(objective, std::move(x0), kSoftmaxTolerance, 5000);
  if (!r.x.allFinite()) throw NumericError("polytomous imputation model diverged");
  return Eigen::Map<const Eigen::MatrixXd>(r.x.data(), q, C);
}

double logistic(double eta) { return 1.0 / (1.0 + std::exp(-eta)); }

// Index of one of the k donors nearest to target, drawn uniformly.
std::size_t pick_donor(const std::vector<double>& means, double target, Rng& rng) {
  const std::size_t n = means.size();
  const std::size_t k = std::min(kPmmDonors, n);
  auto hi = static_cast<std::size_t>(std::lower_bound(means.begin(), means.end(), target) - means.begin());
  std::size_t lo = hi;  // candidates are [lo, hi)
  while (hi - lo < k) {
    if (lo == 0) {
      ++hi;
    } else if (hi == n) {
      --lo;
    } else if (target - means[lo - 1] <= means[hi] - target) {
      --lo;
    } else {
      ++hi;
    }
  }
  return lo + uniform_index(rng, k);
}

void sort_donors(FieldModel& m) {
  std::vector<std::size_t> order(m.donor_means.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (m.donor_means[a] != m.donor_means[b]) return m.donor_means[a] < m.donor_means[b];
    return m.donor_values[a] < m.donor_values[b];
  });
  std::vector<double> means, values;
  means.reserve(order.size());
  values.reserve(order.size());
  for (auto i : order) {
    means.push_back(m.donor_means[i]);
    values.push_back(m.donor_values[i]);
  }
  m.donor_means = std::move(means);
  m.donor_values = std::move(values);
}

// Fits a field model on rows whose values are known.
FieldModel fit_field(const Designer& d, const EncodingMeta& meta, std::size_t field, bool with_outcome,
                     const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Rows& observed,
                     const FieldModel* warm) {
  const auto& f = meta.fields[field];
  FieldModel m;
  m.field = field;
  m.with_outcome = with_outcome;
  const Eigen::MatrixXd A = d.build(field, with_outcome, X, y, observed);
  const auto n = static_cast<Eigen::Index>(observed.size());
  switch (f.kind) {
    case FieldKind::continuous: {
      Eigen::VectorXd v(n);
      for (Eigen::Index r = 0; r < n; ++r) {
        v(r) = X(static_cast<Eigen::Index>(observed[static_cast<std::size_t>(r)]),
                 static_cast<Eigen::Index>(f.columns.front()));
      }
      m.coef = fit_linear(A, v);
      const Eigen::VectorXd fitted = A * m.coef.col(0);
      m.donor_means.assign(fitted.data(), fitted.data() + fitted.size());
      m.donor_values.assign(v.data(), v.data() + v.size());
      sort_donors(m);
      break;
    }
    case FieldKind::binary: {
      Eigen::VectorXd v(n);
      for (Eigen::Index r = 0; r < n; ++r) {
        v(r) = X(static_cast<Eigen::Index>(observed[static_cast<std::size_t>(r)]),
                 static_cast<Eigen::Index>(f.columns.front())) != 0.0 ? 1.0 : 0.0;
      }
      Eigen::VectorXd start = warm ? Eigen::VectorXd(warm->coef.col(0)) : Eigen::VectorXd();
      m.coef = fit_logistic(A, v, std::move(start));
      break;
    }
    case FieldKind::categorical: {
      std::vector<std::size_t> cls(observed.size());
      for (std::size_t r = 0; r < observed.size(); ++r) {
        cls[r] = class_of(f, decode_field(X.row(static_cast<Eigen::Index>(observed[r])), f));
      }
      m.coef = fit_softmax(A, cls, f.levels.size(), warm ? warm->coef : Eigen::MatrixXd());
      break;
    }
  }
  return m;
}

// Redraws the field's cells on the given rows from a frozen model.
void draw_field(const Designer& d, const EncodingMeta& meta, const FieldModel& m, Eigen::MatrixXd& X,
                const Eigen::VectorXd& y, const Rows& rows, Rng& rng) {
  if (rows.empty()) return;
  const auto& f = meta.fields[m.field];
  const Eigen::MatrixXd A = d.build(m.field, m.with_outcome, X, y, rows);
  const Eigen::MatrixXd eta = A * m.coef;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto rr = static_cast<Eigen::Index>(r);
    double value = 0.0;
    switch (f.kind) {
      case FieldKind::continuous:
        value = m.donor_values[pick_donor(m.donor_means, eta(rr, 0), rng)];
        break;
      case FieldKind::binary:
        value = uniform01(rng) < logistic(eta(rr, 0)) ? 1.0 : 0.0;
        break;
      case FieldKind::categorical: {
        const Eigen::RowVectorXd p = softmax(eta.row(rr));
        const double u = uniform01(rng);
        double acc = 0.0;
        std::size_t k = 0;
        for (; k + 1 < static_cast<std::size_t>(p.size()); ++k) {
          acc += p(static_cast<Eigen::Index>(k));
          if (u < acc) break;
        }
        value = class_value(f, k);
        break;
      }
    }
    encode_field(X.row(static_cast<Eigen::Index>(rows[r])), f, value);
  }
}

std::vector<int> cluster_indices(const std::vector<ClusterKey>& known, const std::vector<ClusterKey>& rows) {
  std::vector<int> idx(rows.size(), -1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto it = std::lower_bound(known.begin(), known.end(), rows[i]);
    if (it != known.end() && *it == rows[i]) idx[i] = static_cast<int>(it - known.begin());
  }
  return idx;
}

void check_holdout(const ImputationModelSet& models, const EncodedDataset& data) {
  if (data.meta.fingerprint() != models.fingerprint) {
    throw DataError("holdout encoding does not match the imputation models' training encoding");
  }
  if (data.X.cols() != models.column_mean.size()) throw DataError("holdout width does not match the imputation models");
}

}  // namespace

Eigen::RowVectorXd softmax(const Eigen::RowVectorXd& eta) {
  const double mx = eta.maxCoeff();
  Eigen::RowVectorXd p = (eta.array() - mx).exp().matrix();
  return p / p.sum();
}

std::uint64_t stream_seed(std::uint64_t seed, std::size_t stream) { return derive_seed(seed, "mice-stream", stream); }

StreamResult fit_imputer_stream(const EncodedDataset& train, std::size_t stream, std::size_t iterations,
                                std::uint64_t seed) {
  if (iterations == 0) throw UsageError("imputation needs at least one iteration");
  if (train.size() == 0) throw DataError("imputation needs training rows");
  if (!train.y.allFinite()) throw DataError("imputation training outcome must be fully observed");
  const auto& meta = train.meta;
  const std::size_t n = train.size();
  const auto p = static_cast<Eigen::Index>(meta.width());

  StreamResult out;
  auto& ms = out.models;
  ms.stream = stream;
  ms.seed = seed;
  ms.iterations = iterations;
  ms.fingerprint = meta.fingerprint();
  ms.clusters = train.distinct_clusters();
  ms.column_mean = Eigen::VectorXd::Zero(p);
  ms.column_sd = Eigen::VectorXd::Ones(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    double sum = 0.0, ss = 0.0;
    std::size_t count = 0;
    for (Eigen::Index i = 0; i < train.X.rows(); ++i) {
      const double v = train.X(i, j);
      if (std::isnan(v)) continue;
      ++count;
      const double delta = v - sum;
      sum += delta / static_cast<double>(count);
      ss += delta * (v - sum);
    }
    if (count > 0) ms.column_mean(j) = sum;
    const double sd = count > 0 ? std::sqrt(ss / static_cast<double>(count)) : 0.0;
    ms.column_sd(j) = sd > 1e-12 ? sd : 1.0;
  }
  ms.outcome_mean = train.y.mean();
  const double ysd = std::sqrt((train.y.array() - ms.outcome_mean).square().mean());
  ms.outcome_sd = ysd > 1e-12 ? ysd : 1.0;

  const auto F = meta.fields.size();
  std::vector<Rows> observed(F), missing(F);
  ms.marginals.resize(F);
  for (std::size_t f = 0; f < F; ++f) {
    const auto& info = meta.fields[f];
    if (info.columns.empty()) continue;
    std::map<double, std::uint64_t> counts;
    for (std::size_t i = 0; i < n; ++i) {
      if (is_missing(train.X, i, info)) {
        missing[f].push_back(i);
      } else {
        observed[f].push_back(i);
        ++counts[decode_field(train.X.row(static_cast<Eigen::Index>(i)), info)];
      }
    }
    if (observed[f].empty()) {
      throw DataError(fmt::format("field {} is missing in every training row; it cannot be imputed", info.name));
    }
    for (const auto& [v, c] : counts) {
      ms.marginals[f].values.push_back(v);
      ms.marginals[f].counts.push_back(c);
    }
  }

  Rng rng(seed);
  out.completed = train;
  auto& X = out.completed.X;
  const auto cluster_index = cluster_indices(ms.clusters, train.clusters);
  Designer designer(meta, ms, cluster_index);

  // start from random observed values
  for (std::size_t f = 0; f < F; ++f) {
    const auto& info = meta.fields[f];
    for (auto i : missing[f]) {
      const auto donor = observed[f][uniform_index(rng, observed[f].size())];
      for (auto c : info.columns) {
        X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) =
            X(static_cast<Eigen::Index>(donor), static_cast<Eigen::Index>(c));
      }
    }
  }

  std::vector<std::size_t> order;
  for (std::size_t f = 0; f < F; ++f) {
    if (!missing[f].empty()) order.push_back(f);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return missing[a].size() < missing[b].size(); });

  ms.primary.resize(F);
  ms.companion.resize(F);
  std::vector<bool> fitted(F, false);
  for (std::size_t it = 0; it < iterations; ++it) {
    for (auto f : order) {
      ms.primary[f] = fit_field(designer, meta, f, true, X, train.y, observed[f], fitted[f] ? &ms.primary[f] : nullptr);
      fitted[f] = true;
      draw_field(designer, meta, ms.primary[f], X, train.y, missing[f], rng);
    }
  }
  ms.visit_order = order;
  for (std::size_t f = 0; f < F; ++f) {
    if (meta.fields[f].columns.empty() || !missing[f].empty()) continue;
    ms.primary[f] = fit_field(designer, meta, f, true, X, train.y, observed[f], nullptr);
    ms.visit_order.push_back(f);
  }
  for (auto f : ms.visit_order) {
    ms.companion[f] = fit_field(designer, meta, f, false, X, train.y, observed[f], nullptr);
  }
  return out;
}

std::vector<StreamResult> fit_imputer(const EncodedDataset& train, std::size_t m, std::size_t iterations,
                                      std::uint64_t seed) {
  if (m == 0) throw UsageError("imputation needs m >= 1");
  if (iterations == 0) throw UsageError("imputation needs at least one iteration");
  std::vector<StreamResult> out(m);
  parallel_for(m, [&](std::size_t j) { out[j] = fit_imputer_stream(train, j, iterations, stream_seed(seed, j)); });
  return out;
}

EncodedDataset apply_imputer(const ImputationModelSet& models, const EncodedDataset& holdout, bool use_outcome,
                             std::uint64_t seed) {
  check_holdout(models, holdout);
  EncodedDataset out = holdout;
  if (!holdout.has_missing()) return out;
  if (use_outcome && !holdout.y.allFinite()) {
    throw DataError("outcome-assisted imputation needs a fully observed holdout outcome");
  }
  const auto& meta = holdout.meta;
  const auto F = meta.fields.size();
  std::vector<Rows> missing(F);
  for (std::size_t f = 0; f < F; ++f) {
    if (meta.fields[f].columns.empty()) continue;
    for (std::size_t i = 0; i < holdout.size(); ++i) {
      if (is_missing(holdout.X, i, meta.fields[f])) missing[f].push_back(i);
    }
  }

  Rng rng(seed);
  auto& X = out.X;
  for (std::size_t f = 0; f < F; ++f) {
    if (missing[f].empty()) continue;
    const auto& mg = models.marginals[f];
    const std::uint64_t total = std::accumulate(mg.counts.begin(), mg.counts.end(), std::uint64_t{0});
    for (auto i : missing[f]) {
      auto u = static_cast<std::uint64_t>(uniform01(rng) * static_cast<double>(total));
      std::size_t k = 0;
      while (k + 1 < mg.counts.size() && u >= mg.counts[k]) u -= mg.counts[k++];
      encode_field(X.row(static_cast<Eigen::Index>(i)), meta.fields[f], mg.values[k]);
    }
  }

  const auto cluster_index = cluster_indices(models.clusters, holdout.clusters);
  Designer designer(meta, models, cluster_index);
  const auto& chosen = use_outcome ? models.primary : models.companion;
  for (std::size_t it = 0; it < models.iterations; ++it) {
    for (auto f : models.visit_order) {
      draw_field(designer, meta, chosen[f], X, holdout.y, missing[f], rng);
    }
  }
  return out;
}

SingleImputation impute_single(const ImputationModelSet& models, const EncodingMeta& meta,
                               const PredictorInput& input, std::uint64_t seed) {
  EncodedDataset one;
  one.meta = meta;
  one.rows = {"request"};
  one.X = encode_predictors(input, meta);
  one.y = Eigen::VectorXd::Constant(1, std::numeric_limits<double>::quiet_NaN());
  one.missing_mask = one.X.array().isNaN();
  one.clusters = {ClusterKey{input.site_id.value_or(""), input.surgery_date ? input.surgery_date->year : 0}};
  SingleImputation out;
  out.row = apply_imputer(models, one, false, seed).X.row(0);
  out.imputed_fields = input.absent_fields();
  return out;
}

}  // namespace durastack
