#include "durastack/stack.hpp"

#include <cmath>

#include <fmt/format.h>

#include "durastack/errors.hpp"
#include "durastack/parallel.hpp"
#include "durastack/random.hpp"

namespace durastack {

StackWeights fit_stack_weights(const Eigen::MatrixXd& oof, const Eigen::VectorXd& y) {
  if (oof.cols() != 4) throw DataError(fmt::format("stacking expects 4 learner columns, got {}", oof.cols()));
  if (oof.rows() != y.size()) throw DataError("stacking: prediction rows do not match the outcome");
  if (oof.rows() < 4) throw DataError("stacking needs at least 4 rows");
  if (!oof.allFinite() || !y.allFinite()) throw NumericError("stacking: non-finite out-of-fold input");
  const double n = static_cast<double>(oof.rows());

  struct Candidate {
    std::array<double, 4> w{};
    double mse = 0.0;
    double entropy = 0.0;
  };
  std::vector<Candidate> feasible;
  for (unsigned mask = 1; mask < 16; ++mask) {
    std::vector<Eigen::Index> cols;
    for (Eigen::Index k = 0; k < 4; ++k) {
      if (mask & (1u << k)) cols.push_back(k);
    }
    const auto s = static_cast<Eigen::Index>(cols.size());
    Eigen::MatrixXd A(oof.rows(), s);
    for (Eigen::Index c = 0; c < s; ++c) A.col(c) = oof.col(cols[static_cast<std::size_t>(c)]);
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(s + 1, s + 1);
    K.topLeftCorner(s, s) = 2.0 * A.transpose() * A / n;
    K.block(0, s, s, 1).setOnes();
    K.block(s, 0, 1, s).setOnes();
    Eigen::VectorXd rhs(s + 1);
    rhs.head(s) = 2.0 * A.transpose() * y / n;
    rhs(s) = 1.0;
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(K);
    const Eigen::VectorXd sol = cod.solve(rhs);
    if (!sol.allFinite()) continue;
    Candidate c;
    bool ok = true;
    double sum = 0.0;
    for (Eigen::Index k = 0; k < s; ++k) {
      const double v = sol(k);
      if (v < -kSimplexTolerance) ok = false;
      c.w[static_cast<std::size_t>(cols[static_cast<std::size_t>(k)])] = std::max(v, 0.0);
      sum += std::max(v, 0.0);
    }
    if (!ok || !(sum > 0.0)) continue;
    for (auto& v : c.w) v /= sum;
    Eigen::VectorXd r = y;
    for (Eigen::Index k = 0; k < 4; ++k) r -= c.w[static_cast<std::size_t>(k)] * oof.col(k);
    c.mse = r.squaredNorm() / n;
    for (double v : c.w) {
      if (v > 0) c.entropy -= v * std::log(v);
    }
    feasible.push_back(c);
  }
  if (feasible.empty()) throw NumericError("stacking: no feasible support found");
  double best = feasible.front().mse;
  for (const auto& c : feasible) best = std::min(best, c.mse);
  const double slack = std::min(1e-12 * best, 1e-13);
  const Candidate* chosen = nullptr;
  for (const auto& c : feasible) {
    if (c.mse > best + slack) continue;
    if (!chosen || c.entropy > chosen->entropy) chosen = &c;
  }
  StackWeights w;
  w.w = chosen->w;
  check_weights(w);
  return w;
}

void check_weights(const StackWeights& weights) {
  double sum = 0.0;
  for (double v : weights.w) {
    if (!(v >= 0.0)) throw NumericError(fmt::format("stack weight {} is negative", v));
    sum += v;
  }
  if (std::abs(sum - 1.0) > kSimplexTolerance) {
    throw NumericError(fmt::format("stack weights sum to {:.17g}, not 1", sum));
  }
}

double stacked(const StackWeights& weights, const std::array<double, 4>& predictions) {
  double v = 0.0;
  for (std::size_t k = 0; k < 4; ++k) v += weights.w[k] * predictions[k];
  return v;
}

Eigen::VectorXd stacked(const StackWeights& weights, const Eigen::MatrixXd& predictions) {
  Eigen::VectorXd out(predictions.rows());
  for (Eigen::Index i = 0; i < predictions.rows(); ++i) {
    out(i) = stacked(weights, std::array<double, 4>{predictions(i, 0), predictions(i, 1), predictions(i, 2), predictions(i, 3)});
  }
  return out;
}

std::uint64_t lock_seed(std::uint64_t seed, std::size_t imputation, LearnerKind kind) {
  return derive_seed(seed, "lock", imputation, to_string(kind));
}

LockedModel lock(const LockInput& input, Provenance provenance) {
  const std::size_t m = input.imputations.size();
  if (m == 0) throw UsageError("locking needs at least one imputation");
  if (input.specs.size() != m || input.weights.size() != m) {
    throw UsageError("locking needs one spec set and one weight vector per imputation");
  }
  LockedModel model;
  model.meta = input.development.meta;
  model.provenance = std::move(provenance);
  model.pipelines.resize(m);
  for (std::size_t j = 0; j < m; ++j) check_weights(input.weights[j]);
  parallel_for(m, [&](std::size_t j) {
    auto& p = model.pipelines[j];
    const auto& completed = input.imputations[j].completed;
    if (completed.meta.fingerprint() != model.meta.fingerprint()) {
      throw DataError("imputed development data uses a different encoding");
    }
    p.imputer = input.imputations[j].models;
    p.weights = input.weights[j];
    for (std::size_t k = 0; k < 4; ++k) {
      auto spec = input.specs[j][k];
      spec.seed = lock_seed(input.seed, j, spec.kind);
      p.learners[k] = fit_learner(spec, completed);
    }
  });
  return model;
}

namespace {

std::array<double, 4> learner_row(const Pipeline& p, const ConstRowRef& row) {
  std::array<double, 4> v{};
  for (std::size_t k = 0; k < 4; ++k) v[k] = p.learners[k].predict_row(row);
  return v;
}

}  // namespace

LockedPrediction predict_one(const LockedModel& model, const PredictorInput& record, std::uint64_t seed) {
  LockedPrediction out;
  const std::size_t m = model.pipelines.size();
  out.log_pred_per_pipeline.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    const auto& p = model.pipelines[j];
    auto single = impute_single(p.imputer, model.meta, record, derive_seed(seed, "pipeline", j));
    if (j == 0) out.imputed_fields = single.imputed_fields;
    out.log_pred_per_pipeline[j] = stacked(p.weights, learner_row(p, single.row));
  }
  double mean = 0.0, lo = out.log_pred_per_pipeline.front(), hi = lo;
  for (double v : out.log_pred_per_pipeline) {
    mean += v;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  out.log_pred_mean = mean / static_cast<double>(m);
  out.predicted_minutes = std::exp(out.log_pred_mean);
  out.pipeline_spread = hi - lo;
  if (!std::isfinite(out.predicted_minutes) || !(out.predicted_minutes > 0.0)) {
    throw NumericError("locked model produced a non-finite prediction");
  }
  return out;
}

std::vector<RecordOutcome> predict_locked(const LockedModel& model, const std::vector<PredictorInput>& records,
                                          std::uint64_t seed) {
  std::vector<RecordOutcome> out(records.size());
  parallel_for(records.size(), [&](std::size_t r) {
    try {
      out[r].prediction = predict_one(model, records[r], derive_seed(seed, "record", r));
    } catch (const Error& e) {
      out[r].error = e.what();
    }
  });
  return out;
}

Eigen::MatrixXd predict_pipelines(const LockedModel& model, const EncodedDataset& data, bool use_outcome,
                                  std::uint64_t seed) {
  if (data.meta.fingerprint() != model.meta.fingerprint()) {
    throw DataError("data encoding does not match the model's encoding");
  }
  const std::size_t m = model.pipelines.size();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(m));
  parallel_for(m, [&](std::size_t j) {
    const auto& p = model.pipelines[j];
    const auto completed = apply_imputer(p.imputer, data, use_outcome, derive_seed(seed, "pipeline", j));
    Eigen::MatrixXd preds(static_cast<Eigen::Index>(data.size()), 4);
    for (std::size_t k = 0; k < 4; ++k) preds.col(static_cast<Eigen::Index>(k)) = p.learners[k].predict(completed);
    out.col(static_cast<Eigen::Index>(j)) = stacked(p.weights, preds);
  });
  return out;
}

}  // namespace durastack
