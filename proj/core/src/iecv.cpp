#include "durastack/iecv.hpp"

#include <map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "durastack/errors.hpp"
#include "durastack/parallel.hpp"
#include "durastack/random.hpp"

namespace durastack {

FoldPlan make_folds(const EncodedDataset& data) {
  std::map<ClusterKey, std::vector<std::size_t>> by_cluster;
  for (std::size_t i = 0; i < data.size(); ++i) by_cluster[data.clusters[i]].push_back(i);
  if (by_cluster.size() < 2) {
    throw DataError(fmt::format("LOCO requires >=2 clusters (found {})", by_cluster.size()));
  }
  FoldPlan plan;
  for (const auto& [key, rows] : by_cluster) {
    Fold f;
    f.held_out = key;
    f.validation = rows;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data.clusters[i] != key) f.train.push_back(i);
    }
    plan.folds.push_back(std::move(f));
  }
  return plan;
}

std::uint64_t fold_seed(std::uint64_t seed, const ClusterKey& cluster) {
  return derive_seed(seed, "fold", cluster.hash());
}

std::uint64_t learner_seed(std::uint64_t fold_seed, std::size_t imputation, LearnerKind kind) {
  return derive_seed(fold_seed, "learner", imputation, to_string(kind));
}

nlohmann::json TuneResult::to_json() const {
  nlohmann::json j;
  j["kind"] = to_string(kind);
  auto& f = j["folds"] = nlohmann::json::array();
  for (std::size_t k = 0; k < folds.size(); ++k) f.push_back({{"cluster", folds[k].label()}, {"n", fold_n[k]}});
  auto& pts = j["grid"] = nlohmann::json::array();
  for (const auto& p : points) {
    nlohmann::json params = nlohmann::json::object();
    for (const auto& [k, v] : p.spec.params) params[k] = v;
    pts.push_back({{"params", params}, {"pooled_mse", p.pooled_mse}, {"fold_mse", p.fold_mse}});
  }
  j["selected"] = selected;
  j["selected_spec"] = points.at(selected).spec.label();
  return j;
}

FoldImputation impute_fold(const EncodedDataset& data, const Fold& fold, std::size_t imputation,
                           const ImputerContext& ctx) {
  const auto fs = fold_seed(ctx.seed, fold.held_out);
  auto train = data.subset(fold.train);
  auto valid = data.subset(fold.validation);
  auto stream = fit_imputer_stream(train, imputation, ctx.iterations, stream_seed(derive_seed(fs, "mice"), imputation));
  FoldImputation out;
  out.validation = apply_imputer(stream.models, valid, ctx.use_outcome, derive_seed(fs, "apply", imputation));
  out.models = std::move(stream.models);
  out.train = std::move(stream.completed);
  return out;
}

namespace {

[[noreturn]] void rethrow_with(const std::string& where) {
  try {
    throw;
  } catch (const NumericError& e) {
    throw NumericError(fmt::format("{}: {}", where, e.what()));
  } catch (const UsageError& e) {
    throw UsageError(fmt::format("{}: {}", where, e.what()));
  } catch (const DataError& e) {
    throw DataError(fmt::format("{}: {}", where, e.what()));
  }
}

// Validation predictions (rows x specs) for one fold and imputation stream.
Eigen::MatrixXd evaluate_fold(const EncodedDataset& data, const Fold& fold, std::size_t imputation,
                              const ImputerContext& ctx, const std::vector<LearnerSpec>& specs) {
  FoldImputation fi;
  try {
    fi = impute_fold(data, fold, imputation, ctx);
  } catch (const Error&) {
    rethrow_with(fmt::format("fold {} imputation {}", fold.held_out.label(), imputation));
  }
  const auto fs = fold_seed(ctx.seed, fold.held_out);
  Eigen::MatrixXd pred(static_cast<Eigen::Index>(fold.validation.size()), static_cast<Eigen::Index>(specs.size()));
  for (std::size_t g = 0; g < specs.size(); ++g) {
    auto spec = specs[g];
    spec.seed = learner_seed(fs, imputation, spec.kind);
    try {
      const auto fitted = fit_learner(spec, fi.train);
      pred.col(static_cast<Eigen::Index>(g)) = fitted.predict(fi.validation);
    } catch (const Error&) {
      rethrow_with(fmt::format("fold {} grid point {}", fold.held_out.label(), spec.label()));
    }
  }
  return pred;
}

std::vector<Eigen::MatrixXd> evaluate_folds(const EncodedDataset& data, const FoldPlan& folds,
                                            std::size_t imputation, const ImputerContext& ctx,
                                            const std::vector<LearnerSpec>& specs) {
  std::vector<Eigen::MatrixXd> out(folds.folds.size());
  parallel_for(out.size(), [&](std::size_t f) { out[f] = evaluate_fold(data, folds.folds[f], imputation, ctx, specs); });
  return out;
}

TuneResult summarize(const EncodedDataset& data, const FoldPlan& folds, LearnerKind kind,
                     const std::vector<LearnerSpec>& grid, const std::vector<Eigen::MatrixXd>& preds,
                     std::size_t first_column) {
  TuneResult t;
  t.kind = kind;
  for (const auto& f : folds.folds) {
    t.folds.push_back(f.held_out);
    t.fold_n.push_back(f.validation.size());
  }
  const double n = static_cast<double>(data.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    GridPointResult r;
    r.spec = grid[g];
    double sse_total = 0.0;
    for (std::size_t f = 0; f < folds.folds.size(); ++f) {
      const auto& rows = folds.folds[f].validation;
      double sse = 0.0;
      for (std::size_t k = 0; k < rows.size(); ++k) {
        const double e = data.y(static_cast<Eigen::Index>(rows[k])) -
                         preds[f](static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(first_column + g));
        sse += e * e;
      }
      r.fold_mse.push_back(sse / static_cast<double>(rows.size()));
      sse_total += sse;
    }
    r.pooled_mse = sse_total / n;
    t.points.push_back(std::move(r));
  }
  for (std::size_t g = 1; g < t.points.size(); ++g) {
    if (t.points[g].pooled_mse < t.points[t.selected].pooled_mse) t.selected = g;
  }
  return t;
}

void scatter_column(const FoldPlan& folds, const std::vector<Eigen::MatrixXd>& preds, std::size_t column,
                    Eigen::Ref<Eigen::VectorXd> out) {
  for (std::size_t f = 0; f < folds.folds.size(); ++f) {
    const auto& rows = folds.folds[f].validation;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      out(static_cast<Eigen::Index>(rows[k])) = preds[f](static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(column));
    }
  }
}

ImputationTuning assemble(const EncodedDataset& data, const FoldPlan& folds,
                          const std::array<std::vector<LearnerSpec>, 4>& grids, std::size_t imputation,
                          const std::vector<Eigen::MatrixXd>& preds) {
  ImputationTuning out;
  out.imputation = imputation;
  out.oof.resize(static_cast<Eigen::Index>(data.size()), 4);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    out.tune[k] = summarize(data, folds, kLearnerKinds[k], grids[k], preds, offset);
    scatter_column(folds, preds, offset + out.tune[k].selected, out.oof.col(static_cast<Eigen::Index>(k)));
    offset += grids[k].size();
  }
  return out;
}

std::array<std::vector<LearnerSpec>, 4> expand_all(const Grids& grids, std::size_t width) {
  std::array<std::vector<LearnerSpec>, 4> out;
  for (std::size_t k = 0; k < 4; ++k) out[k] = grids.expand(kLearnerKinds[k], width);
  return out;
}

std::vector<LearnerSpec> flatten(const std::array<std::vector<LearnerSpec>, 4>& grids) {
  std::vector<LearnerSpec> all;
  for (const auto& g : grids) all.insert(all.end(), g.begin(), g.end());
  return all;
}

}  // namespace

TuneResult tune(const EncodedDataset& data, LearnerKind kind, const std::vector<LearnerSpec>& grid,
                const FoldPlan& folds, std::size_t imputation, const ImputerContext& ctx) {
  if (grid.empty()) throw UsageError(fmt::format("empty tuning grid for {}", to_string(kind)));
  for (const auto& s : grid) {
    if (s.kind != kind) throw UsageError("tuning grid mixes learner kinds");
  }
  const auto preds = evaluate_folds(data, folds, imputation, ctx, grid);
  return summarize(data, folds, kind, grid, preds, 0);
}

Eigen::MatrixXd oof_predictions(const EncodedDataset& data, const FoldPlan& folds,
                                const std::array<LearnerSpec, 4>& specs, std::size_t imputation,
                                const ImputerContext& ctx) {
  for (std::size_t k = 0; k < 4; ++k) {
    if (specs[k].kind != kLearnerKinds[k]) throw UsageError("out-of-fold specs must follow the canonical learner order");
  }
  const auto preds = evaluate_folds(data, folds, imputation, ctx, {specs.begin(), specs.end()});
  Eigen::MatrixXd oof(static_cast<Eigen::Index>(data.size()), 4);
  for (std::size_t k = 0; k < 4; ++k) scatter_column(folds, preds, k, oof.col(static_cast<Eigen::Index>(k)));
  return oof;
}

std::array<LearnerSpec, 4> ImputationTuning::selected() const {
  std::array<LearnerSpec, 4> out;
  for (std::size_t k = 0; k < 4; ++k) out[k] = tune[k].best();
  return out;
}

ImputationTuning tune_all(const EncodedDataset& data, const FoldPlan& folds, const Grids& grids,
                          std::size_t imputation, const ImputerContext& ctx) {
  const auto expanded = expand_all(grids, data.meta.width());
  const auto preds = evaluate_folds(data, folds, imputation, ctx, flatten(expanded));
  return assemble(data, folds, expanded, imputation, preds);
}

std::vector<ImputationTuning> tune_imputations(const EncodedDataset& data, const FoldPlan& folds, const Grids& grids,
                                       std::size_t m, const ImputerContext& ctx) {
  if (m == 0) throw UsageError("tuning needs m >= 1");
  const auto expanded = expand_all(grids, data.meta.width());
  const auto all = flatten(expanded);
  const std::size_t F = folds.folds.size();
  std::vector<Eigen::MatrixXd> preds(m * F);
  parallel_for(m * F, [&](std::size_t t) {
    preds[t] = evaluate_fold(data, folds.folds[t % F], t / F, ctx, all);
  });
  std::vector<ImputationTuning> out;
  for (std::size_t j = 0; j < m; ++j) {
    std::vector<Eigen::MatrixXd> pj(preds.begin() + static_cast<std::ptrdiff_t>(j * F),
                                    preds.begin() + static_cast<std::ptrdiff_t>((j + 1) * F));
    out.push_back(assemble(data, folds, expanded, j, pj));
  }
  return out;
}

}  // namespace durastack
