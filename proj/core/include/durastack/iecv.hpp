#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "durastack/learners.hpp"
#include "durastack/mice.hpp"
#include "durastack/schema.hpp"

namespace durastack {

struct Fold {
  ClusterKey held_out;
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// One fold per distinct cluster, ordered by (site, year).
struct FoldPlan {
  std::vector<Fold> folds;
};

FoldPlan make_folds(const EncodedDataset& data);

std::uint64_t fold_seed(std::uint64_t seed, const ClusterKey& cluster);

/// How each fold imputes: fit on the fold's training rows, apply to its
/// validation rows.
struct ImputerContext {
  std::size_t iterations = 5;
  std::uint64_t seed = 0;
  bool use_outcome = true;
};

struct GridPointResult {
  LearnerSpec spec;
  double pooled_mse = 0.0;
  std::vector<double> fold_mse;
};

struct TuneResult {
  LearnerKind kind = LearnerKind::elastic_net;
  std::vector<ClusterKey> folds;
  std::vector<std::size_t> fold_n;
  std::vector<GridPointResult> points;
  std::size_t selected = 0;

  const LearnerSpec& best() const { return points.at(selected).spec; }
  nlohmann::json to_json() const;
};

/// Learner seed for a fold, imputation stream and kind; independent of the
/// grid point so tuning and out-of-fold refits coincide.
std::uint64_t learner_seed(std::uint64_t fold_seed, std::size_t imputation, LearnerKind kind);

/// Fold-local imputation for stream j: the training-fitted models and the
/// completed training and validation sets.
struct FoldImputation {
  ImputationModelSet models;
  EncodedDataset train;
  EncodedDataset validation;
};

FoldImputation impute_fold(const EncodedDataset& data, const Fold& fold, std::size_t imputation,
                           const ImputerContext& ctx);

TuneResult tune(const EncodedDataset& data, LearnerKind kind, const std::vector<LearnerSpec>& grid,
                const FoldPlan& folds, std::size_t imputation, const ImputerContext& ctx);

/// n x 4 out-of-fold predictions, columns in kLearnerKinds order.
Eigen::MatrixXd oof_predictions(const EncodedDataset& data, const FoldPlan& folds,
                                const std::array<LearnerSpec, 4>& specs, std::size_t imputation,
                                const ImputerContext& ctx);

/// Tuning of all four kinds for one imputation stream, plus the matching
/// out-of-fold matrix, from a single pass over the folds.
struct ImputationTuning {
  std::size_t imputation = 0;
  std::array<TuneResult, 4> tune;
  Eigen::MatrixXd oof;

  std::array<LearnerSpec, 4> selected() const;
};

ImputationTuning tune_all(const EncodedDataset& data, const FoldPlan& folds, const Grids& grids,
                          std::size_t imputation, const ImputerContext& ctx);

std::vector<ImputationTuning> tune_imputations(const EncodedDataset& data, const FoldPlan& folds, const Grids& grids,
                                       std::size_t m, const ImputerContext& ctx);

}  // namespace durastack
